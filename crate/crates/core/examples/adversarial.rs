//! Alternating blocks of an expanding map and one with an attracting fixed
//! point: mass piles up near 0 during the bad blocks and spreads out again.

use nonstat_dyn::nonautonomous::{adversarial_demo, doubling_gap_schedule};
use nonstat_dyn::{Domain, GridDensity};

fn main() -> nonstat_dyn::Result<()> {
    let schedule = doubling_gap_schedule(100, 10_000);
    let phi0 = GridDensity::uniform(2048, Domain::Circle);
    let rep = adversarial_demo(0.5, 0.1, &schedule, &phi0, 10_000, 0.05)?;
    for b in &rep.block_ends {
        println!(
            "block ending at {:>5} ({:+}ε): mass near 0 = {:.4}, distance to φ₊ = {:.3e}",
            b.step, b.sign, b.mass_near_zero, b.distance
        );
    }
    println!(
        "concentrated {}  equilibrated {}  two regimes {}",
        rep.concentrated, rep.equilibrated, rep.two_regimes
    );
    for w in &rep.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
