//! Distance of stationary and evolved densities to the unperturbed fixed
//! density as the perturbation radius shrinks.

use nonstat_dyn::nonautonomous::{stability_experiment, StabilityParams};
use nonstat_dyn::transfer::UlamScheme;
use nonstat_dyn::{Domain, GridDensity, MapFamily};

fn main() -> nonstat_dyn::Result<()> {
    let family = MapFamily::pomeau_manneville(0.5)?;
    let cells = 512;
    let params = StabilityParams {
        gamma_hat: 0.1,
        deltas: vec![0.02, 0.01, 0.005],
        n_steps: 500,
        n_seqs: 4,
        seed: 11,
        n_cells: cells,
        checkpoint_every: 10,
        avg_nodes: 64,
        scheme: UlamScheme::Exact,
    };
    let phi0s = [
        GridDensity::uniform(cells, Domain::Circle),
        GridDensity::indicator(cells, Domain::Circle, 0.0, 0.5)?.normalized()?,
    ];
    let table = stability_experiment(&family, &params, &phi0s)?;
    println!("δ        stationary  point-mass  worst evolved  n̄");
    for r in &table.rows {
        println!(
            "{:<8} {:<11.5} {:<11.5} {:<14.5} {}",
            r.delta, r.stationary_distance, r.point_mass_distance, r.worst_post_transient, r.n_bar_max
        );
    }
    Ok(())
}
