//! Empirical Lasota–Yorke coefficients for the doubling operator.

use nonstat_dyn::density::random_step_density;
use nonstat_dyn::rng::substream;
use nonstat_dyn::transfer::{build_ulam, lasota_yorke_fit, UlamScheme};
use nonstat_dyn::{Domain, MapFamily};

fn main() -> nonstat_dyn::Result<()> {
    let cells = 1024;
    let family = MapFamily::doubling();
    let op = build_ulam(&family.instantiate(0.0)?, cells, UlamScheme::Exact)?;
    let tests: Vec<_> = (0..60)
        .map(|k| random_step_density(cells, Domain::Circle, 8, &mut substream(2, "ly", k)))
        .collect();
    let fit = lasota_yorke_fit(&op, 0.5, family.eps0, &tests, 10, 0.05)?;
    println!(
        "η̂ = {:.4}, Ĉ = {:.4} (least squares {:.4})",
        fit.eta, fit.c, fit.c_least_squares
    );
    for (n, r) in fit.iterated_worst_ratio.iter().enumerate() {
        println!("n = {:>2}: worst lhs/rhs {:.3}", n + 1, r);
    }
    Ok(())
}
