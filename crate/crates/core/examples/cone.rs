//! Log-Hölder cones: membership, Hilbert distances, image check and
//! projective contraction of the doubling operator.

use nonstat_dyn::cones::{
    cone_image_check, contraction_and_diameter, sample_cone_member, theta_holder, theta_plus, ConeParams,
};
use nonstat_dyn::rng::substream;
use nonstat_dyn::transfer::{build_ulam, UlamScheme};
use nonstat_dyn::{Domain, MapFamily};

fn main() -> nonstat_dyn::Result<()> {
    let cone = ConeParams::new(2.0, 1.0, 0.1, 0.75)?;
    let cells = 512;
    let mut rng = substream(1, "example", 0);
    let p = sample_cone_member(cells, Domain::Circle, &cone, &mut rng);
    let q = sample_cone_member(cells, Domain::Circle, &cone, &mut rng);
    println!(
        "θ₊ = {:.4}, θ_(a,ν) = {:.4}",
        theta_plus(&p, &q)?.theta,
        theta_holder(&p, &q, &cone)?.theta
    );
    let op = build_ulam(&MapFamily::doubling().instantiate(0.0)?, cells, UlamScheme::Exact)?;
    let img = cone_image_check(&op, &cone, 50, 2, 0.0)?;
    println!(
        "image check: worst a = {:.3} vs λa = {:.3}, passed {}",
        img.worst_a_min, img.threshold, img.passed
    );
    let circle = MapFamily::smooth_circle();
    let ops = [-0.3, 0.0, 0.3]
        .iter()
        .map(|&g| build_ulam(&circle.instantiate(g)?, cells, UlamScheme::Exact))
        .collect::<nonstat_dyn::Result<Vec<_>>>()?;
    let refs: Vec<_> = ops.iter().collect();
    let c = contraction_and_diameter(&refs, &cone, 40, 3, 0.05)?;
    println!(
        "contraction over three circle maps: q̂ = {:.3}, D̂ = {:.3}, 1 − e^(−D̂) = {:.3}",
        c.q_hat, c.d_hat, c.q_bound
    );
    Ok(())
}
