//! Doubling maps coupled on a graph whose edges fail in bursts; the node
//! marginals stay close to uniform.

use nonstat_dyn::network::{gen_schedule, simulate_ensemble, Coupling, EnsembleOptions, NetworkSystem, ScheduleKind};
use nonstat_dyn::MapFamily;

fn main() -> nonstat_dyn::Result<()> {
    let nodes = 8;
    let steps = 1000;
    let schedule = gen_schedule(
        &ScheduleKind::Bursty {
            persistence: 0.9,
            fail_prob: 0.05,
        },
        nodes,
        steps,
        4,
    )?;
    let runs = schedule.failure_runs(steps);
    println!(
        "mean failure run {:.2} steps over {} runs",
        runs.iter().sum::<usize>() as f64 / runs.len() as f64,
        runs.len()
    );
    for alpha in [0.0, 0.01] {
        let system = NetworkSystem::new(MapFamily::doubling(), 0.0, alpha, Coupling::Diffusive, nodes)?;
        let rep = simulate_ensemble(&system, &schedule, 2000, steps, 5, &EnsembleOptions::default())?;
        println!(
            "α_c = {alpha}: worst marginal L¹ distance {:.4} (noise floor {:.4})",
            rep.worst(),
            rep.noise_floor
        );
    }
    Ok(())
}
