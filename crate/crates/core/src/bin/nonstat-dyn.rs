fn main() {
    std::process::exit(nonstat_dyn::experiment::cli_main(std::env::args_os()));
}
