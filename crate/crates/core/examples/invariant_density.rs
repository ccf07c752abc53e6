//! Fixed density and leading spectrum of the Ulam matrix for a few families.

use nonstat_dyn::transfer::{build_ulam, fixed_density, spectral_summary, UlamScheme};
use nonstat_dyn::{GridDensity, MapFamily};

fn main() -> nonstat_dyn::Result<()> {
    let cells = 512;
    for (family, gamma) in [
        (MapFamily::doubling(), 0.0),
        (MapFamily::tent(), 0.1),
        (MapFamily::pomeau_manneville(0.5)?, 0.1),
        (MapFamily::smooth_circle(), 0.3),
    ] {
        let op = build_ulam(&family.instantiate(gamma)?, cells, UlamScheme::Exact)?;
        let fd = fixed_density(&op, 1e-12, 100_000)?;
        let spec = spectral_summary(&op, 4)?;
        let flat = nonstat_dyn::density::l1_distance(&fd.density, &GridDensity::uniform(cells, family.domain))?;
        println!(
            "{:>9} γ={gamma:<4} residual {:.1e} after {:>4} iterations, |λ₂| = {:.4}, ‖φ − 1‖₁ = {flat:.4}",
            family.name(),
            fd.residual,
            fd.iterations,
            spec.moduli.get(1).copied().unwrap_or(0.0),
        );
    }
    Ok(())
}
