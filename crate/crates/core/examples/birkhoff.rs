//! Time averages along perturbed orbits, the covariance table of an
//! observable and the weak distance of an orbit to the fixed density.

use nonstat_dyn::birkhoff::{
    birkhoff_averages, covariance_decay, lp_distance, orbit, quasi_birkhoff_band, Measure, Observable, DEFAULT_BALLS,
    DEFAULT_DITHER,
};
use nonstat_dyn::nonautonomous::{gen_sequence, IidLaw, SequenceSpec};
use nonstat_dyn::transfer::{build_ulam, fixed_density, UlamScheme};
use nonstat_dyn::{Domain, MapFamily};

fn main() -> nonstat_dyn::Result<()> {
    let family = MapFamily::pomeau_manneville(0.5)?;
    let cells = 1024;
    let n = 20_000;
    let spec = SequenceSpec::Iid {
        law: IidLaw::Uniform,
        center: 0.1,
        radius: 0.01,
        seed: 8,
    };
    let gammas = gen_sequence(&spec, n)?;
    let phi = fixed_density(
        &build_ulam(&family.instantiate(0.1)?, cells, UlamScheme::Exact)?,
        1e-12,
        100_000,
    )?
    .density;
    let psis = [
        Observable::identity(cells, Domain::Circle, 0.5, family.eps0)?,
        Observable::cosine(cells, Domain::Circle, 0.5, family.eps0)?,
    ];
    let run = birkhoff_averages(&family, &gammas, 50, &psis, n, 8, DEFAULT_DITHER)?;
    for (o, psi) in psis.iter().enumerate() {
        let band = quasi_birkhoff_band(psi, &phi, 0.05)?;
        let rep = band.evaluate(&run.observables[o]);
        println!(
            "ψ = {:<8} ∫ψφ = {:.4}  inside band: {}/{} (95% CI {:.2}..{:.2})",
            psi.name(),
            band.center,
            rep.inside,
            rep.total,
            rep.wilson.0,
            rep.wilson.1
        );
    }
    let cov = covariance_decay(
        &family,
        &gammas,
        &psis[0],
        10,
        5000,
        8,
        DEFAULT_DITHER,
        UlamScheme::Exact,
    )?;
    let lln = cov.lln();
    println!(
        "covariance fit C = {:.4}, q = {:.3}, residual {:.3}; {:?}",
        cov.c, cov.q, cov.residual, lln.verdict
    );
    let pts = orbit(&family, &gammas, 0.3, n, 8, DEFAULT_DITHER)?;
    let lp = lp_distance(
        &Measure::empirical(&pts),
        &Measure::Density(&phi),
        DEFAULT_BALLS,
        Domain::Circle,
    )?;
    println!(
        "Lévy–Prokhorov estimate of one orbit: {} (true value ≤ {:.4})",
        lp.estimate, lp.upper_bound
    );
    Ok(())
}
