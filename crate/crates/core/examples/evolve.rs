//! Pushes a density through a random parameter sequence and tracks its L¹
//! distance to the unperturbed fixed density, its mass and its seminorm.

use nonstat_dyn::nonautonomous::{evolve_density, gen_sequence, EvolveOptions, IidLaw, SequenceSpec};
use nonstat_dyn::transfer::{build_ulam, fixed_density, UlamScheme};
use nonstat_dyn::{Domain, GridDensity, MapFamily};

fn main() -> nonstat_dyn::Result<()> {
    let family = MapFamily::pomeau_manneville(0.5)?;
    let cells = 1024;
    let spec = SequenceSpec::Iid {
        law: IidLaw::Uniform,
        center: 0.1,
        radius: 0.01,
        seed: 3,
    };
    let gammas = gen_sequence(&spec, 300)?;
    let reference = fixed_density(
        &build_ulam(&family.instantiate(0.1)?, cells, UlamScheme::Exact)?,
        1e-12,
        100_000,
    )?;
    let phi0 = GridDensity::indicator(cells, Domain::Circle, 0.0, 0.5)?.normalized()?;
    let opts = EvolveOptions {
        checkpoint_every: 30,
        seminorm: Some((0.5, family.eps0)),
        ..Default::default()
    };
    let trace = evolve_density(&family, &gammas, &phi0, Some(&reference.density), &opts)?;
    for i in 0..trace.steps.len() {
        println!(
            "n = {:>3}  distance {:.5}  mass {:.15}  |φ|_α {:.3}",
            trace.steps[i], trace.distances[i], trace.masses[i], trace.seminorms[i]
        );
    }
    if let Some((nbar, worst)) = trace.post_transient() {
        println!("post-transient from n = {nbar}: worst distance {worst:.5}");
    }
    Ok(())
}
