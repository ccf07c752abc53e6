//! Cones of positive densities and their Hilbert projective metrics.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::GridDensity;
use crate::error::{invalid, Error, Result};
use crate::maps::Domain;
use crate::rng::substream;
use crate::transfer::UlamOperator;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    /// strictly positive functions
    Positive,
    /// positive functions with `log φ` locally ν-Hölder with constant `a`
    LogHolder,
}

/// `C(a, ν)` restricted to pairs closer than `ρ₀`, plus the shrink factor
/// `λ` of its image cone.
///
/// On a grid, Ulam images are staircases whose one-cell jumps never contract,
/// so log-Hölder ratios are evaluated on pairs at least `min_cells` cells
/// apart. Membership through [`cone_membership`] always uses every pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeParams {
    pub a: f64,
    pub nu: f64,
    pub rho0: f64,
    pub lambda: f64,
    pub kind: ConeKind,
    pub min_cells: usize,
}

pub const DEFAULT_MIN_CELLS: usize = 16;

impl ConeParams {
    pub fn new(a: f64, nu: f64, rho0: f64, lambda: f64) -> Result<Self> {
        let c = Self {
            a,
            nu,
            rho0,
            lambda,
            kind: ConeKind::LogHolder,
            min_cells: DEFAULT_MIN_CELLS,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_min_cells(mut self, min_cells: usize) -> Self {
        self.min_cells = min_cells.max(1);
        self
    }

    pub fn positive(self) -> Self {
        Self {
            kind: ConeKind::Positive,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(invalid(format!("cone constant a = {} must be positive", self.a)));
        }
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(invalid(format!("cone exponent ν = {} outside (0, 1]", self.nu)));
        }
        if !(self.rho0 > 0.0) {
            return Err(invalid(format!("locality scale ρ₀ = {} must be positive", self.rho0)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid(format!("shrink factor λ = {} outside (0, 1)", self.lambda)));
        }
        Ok(())
    }
}

/// Smallest `a'` with `|log φ(x) − log φ(y)| ≤ a'·d(x,y)^ν` over cell-centre
/// pairs with `min_sep·h ≤ d ≤ ρ₀`; `None` if some cell is not positive.
pub fn a_min(phi: &GridDensity, nu: f64, rho0: f64, min_sep: usize) -> Option<f64> {
    if phi.values().iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let logs: Vec<f64> = phi.values().iter().map(|v| v.ln()).collect();
    let n = logs.len();
    let h = phi.cell_width();
    let circle = phi.domain() == Domain::Circle;
    let mut kmax = ((rho0 / h) + 1e-9).floor() as usize;
    if circle {
        kmax = kmax.min(n / 2);
    } else {
        kmax = kmax.min(n.saturating_sub(1));
    }
    let mut best: f64 = 0.0;
    for k in min_sep.max(1)..=kmax {
        let w = 1.0 / (k as f64 * h).powf(nu);
        let span = if circle { n } else { n - k };
        let mut m: f64 = 0.0;
        for i in 0..span {
            let j = if circle { (i + k) % n } else { i + k };
            m = m.max((logs[i] - logs[j]).abs());
        }
        best = best.max(m * w);
    }
    Some(best)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Membership {
    pub member: bool,
    pub positive: bool,
    /// smallest admissible `a` (`∞` when not positive)
    pub a_min: f64,
}

/// Membership in `C₊` or `C(a, ν)` over all grid pairs with `d ≤ ρ₀`.
pub fn cone_membership(phi: &GridDensity, cone: &ConeParams) -> Membership {
    match a_min(phi, cone.nu, cone.rho0, 1) {
        None => Membership {
            member: false,
            positive: false,
            a_min: f64::INFINITY,
        },
        Some(a) => Membership {
            member: match cone.kind {
                ConeKind::Positive => true,
                ConeKind::LogHolder => a <= cone.a,
            },
            positive: true,
            a_min: a,
        },
    }
}

/// `α`, `β` and `θ = log(β/α)` of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HilbertDistance {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub finite: bool,
}

fn distance_from(alpha: f64, beta: f64) -> HilbertDistance {
    if !(alpha > 0.0) || !beta.is_finite() {
        return HilbertDistance {
            alpha,
            beta,
            theta: f64::INFINITY,
            finite: false,
        };
    }
    let r = beta / alpha;
    let theta = if r - 1.0 <= 1e-12 { 0.0 } else { r.ln() };
    HilbertDistance {
        alpha,
        beta,
        theta,
        finite: true,
    }
}

fn require_positive(phi: &GridDensity, name: &str) -> Result<()> {
    if let Some(i) = phi.values().iter().position(|&v| !(v > 0.0)) {
        return Err(invalid(format!("{name} is not strictly positive (cell {i})")));
    }
    Ok(())
}

/// Projective metric of the cone of positive functions.
pub fn theta_plus(phi1: &GridDensity, phi2: &GridDensity) -> Result<HilbertDistance> {
    crate::density::check_grid(phi1, phi2)?;
    require_positive(phi1, "first argument")?;
    require_positive(phi2, "second argument")?;
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for (a, b) in phi1.values().iter().zip(phi2.values()) {
        let r = b / a;
        lo = lo.min(r);
        hi = hi.max(r);
    }
    Ok(distance_from(lo, hi))
}

/// `α(f, g) = inf{ g/f, (E g(x) − g(y)) / (E f(x) − f(y)) }` with
/// `E = exp(a d(x,y)^ν)` over pairs at separation in `[min_cells·h, ρ₀)`.
fn alpha_holder(f: &[f64], g: &[f64], cone: &ConeParams, domain: Domain) -> f64 {
    let n = f.len();
    let h = 1.0 / n as f64;
    let circle = domain == Domain::Circle;
    let mut alpha = f.iter().zip(g).map(|(a, b)| b / a).fold(f64::INFINITY, f64::min);
    let mut kmax = (cone.rho0 / h).ceil() as usize;
    kmax = if circle {
        kmax.min(n / 2)
    } else {
        kmax.min(n.saturating_sub(1))
    };
    for k in cone.min_cells.max(1)..=kmax {
        let d = k as f64 * h;
        if d >= cone.rho0 {
            break;
        }
        let e = (cone.a * d.powf(cone.nu)).exp();
        let span = if circle { n } else { n - k };
        for i in 0..span {
            let j = if circle { (i + k) % n } else { i + k };
            for (x, y) in [(i, j), (j, i)] {
                let den = e * f[x] - f[y];
                let num = e * g[x] - g[y];
                if den > 0.0 {
                    alpha = alpha.min(num / den);
                } else if num < 0.0 {
                    return f64::NEG_INFINITY;
                }
            }
        }
    }
    alpha
}

/// Projective metric of `C(a, ν)`; both inputs must belong to the cone at
/// the `min_cells` scale.
pub fn theta_holder(phi1: &GridDensity, phi2: &GridDensity, cone: &ConeParams) -> Result<HilbertDistance> {
    crate::density::check_grid(phi1, phi2)?;
    for (phi, name) in [(phi1, "first argument"), (phi2, "second argument")] {
        match a_min(phi, cone.nu, cone.rho0, cone.min_cells) {
            Some(a) if a <= cone.a * (1.0 + 1e-12) => {}
            Some(a) => {
                return Err(invalid(format!(
                    "{name} is outside C(a={}, ν={}): needs a ≥ {a}",
                    cone.a, cone.nu
                )))
            }
            None => return Err(invalid(format!("{name} is not strictly positive"))),
        }
    }
    let alpha = alpha_holder(phi1.values(), phi2.values(), cone, phi1.domain());
    let rev = alpha_holder(phi2.values(), phi1.values(), cone, phi1.domain());
    let beta = if rev > 0.0 { 1.0 / rev } else { f64::INFINITY };
    Ok(distance_from(alpha, beta))
}

/// Random member of `C(u·a, ν)` with `u ∈ [0.25, 0.95]`: a midpoint
/// displacement field `g`, rescaled so its Hölder constant is exactly `u·a`,
/// then `exp(g)` normalized to unit mass.
pub fn sample_cone_member<R: Rng + ?Sized>(n: usize, domain: Domain, cone: &ConeParams, rng: &mut R) -> GridDensity {
    let mut g = vec![0.0; n + 1];
    if domain == Domain::Interval {
        g[n] = rng.gen_range(-1.0..1.0);
    }
    fill_midpoints(&mut g, 0, n, n, cone.nu, rng);
    g.truncate(n);
    let raw = GridDensity::from_parts(g.iter().map(|v| v.exp()).collect(), domain);
    let holder = a_min(&raw, cone.nu, cone.rho0, 1).unwrap_or(0.0);
    let target = cone.a * rng.gen_range(0.25..0.95);
    let scale = if holder > 0.0 { target / holder } else { 0.0 };
    let phi = GridDensity::from_parts(g.iter().map(|v| (scale * v).exp()).collect(), domain);
    phi.scaled(1.0 / phi.mass())
}

fn fill_midpoints<R: Rng + ?Sized>(g: &mut [f64], l: usize, r: usize, n: usize, nu: f64, rng: &mut R) {
    if r - l < 2 {
        return;
    }
    let m = (l + r) / 2;
    let width = (r - l) as f64 / n as f64;
    g[m] = 0.5 * (g[l] + g[r]) + width.powf(nu) * rng.gen_range(-1.0..1.0);
    fill_midpoints(g, l, m, n, nu, rng);
    fill_midpoints(g, m, r, n, nu, rng);
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageCheckReport {
    pub samples: usize,
    /// largest `a_min` among images (coarse scale)
    pub worst_a_min: f64,
    pub threshold: f64,
    pub passed: bool,
    pub images_in_cone: usize,
}

/// Pushes sampled cone members through `op` and checks that the images lie
/// in `C(λa, ν)` up to `slack`.
pub fn cone_image_check(
    op: &UlamOperator,
    cone: &ConeParams,
    samples: usize,
    seed: u64,
    slack: f64,
) -> Result<ImageCheckReport> {
    cone.validate()?;
    let threshold = cone.lambda * cone.a * (1.0 + slack);
    let mut worst: f64 = 0.0;
    let mut inside = 0;
    for k in 0..samples {
        let mut rng = substream(seed, "cone", k as u64);
        let phi = sample_cone_member(op.n_cells(), op.domain(), cone, &mut rng);
        let img = op.apply(&phi)?;
        let a = a_min(&img, cone.nu, cone.rho0, cone.min_cells).unwrap_or(f64::INFINITY);
        if a <= threshold {
            inside += 1;
        }
        worst = worst.max(a);
    }
    Ok(ImageCheckReport {
        samples,
        worst_a_min: worst,
        threshold,
        passed: samples > 0 && worst <= threshold,
        images_in_cone: inside,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContractionReport {
    /// largest `θ(Lφ₁, Lφ₂) / θ(φ₁, φ₂)` over all operators and pairs
    pub q_hat: f64,
    /// largest `θ` between image pairs
    pub d_hat: f64,
    /// `1 − e^{−D̂}`
    pub q_bound: f64,
    pub bound_ok: bool,
    pub per_operator_q: Vec<f64>,
    pub pairs_used: usize,
    pub pairs_skipped: usize,
}

/// Extreme members of `C(0.95a, ν)`: `exp(±0.95a · d(x, 2wℤ + s)^ν)` for
/// tooth widths `w` whose period divides 1, normalized. Random samples stay
/// well inside the cone, so these are added to reach its diameter.
pub fn boundary_members(n: usize, domain: Domain, cone: &ConeParams) -> Vec<GridDensity> {
    let mut out = Vec::new();
    for &w in &[0.5, 0.25, 0.1, 0.05, 0.025] {
        for &shift in &[0.0, 0.013, 0.37] {
            for sign in [1.0, -1.0] {
                let amp = sign * 0.95 * cone.a;
                let v: Vec<f64> = (0..n)
                    .map(|i| {
                        let t = ((i as f64 + 0.5) / n as f64 + shift) / w;
                        let frac = t.rem_euclid(2.0);
                        let dist = if frac < 1.0 { frac } else { 2.0 - frac } * w;
                        (amp * dist.powf(cone.nu)).exp()
                    })
                    .collect();
                let total: f64 = v.iter().sum::<f64>() / n as f64;
                out.push(GridDensity::from_parts(v.iter().map(|x| x / total).collect(), domain));
            }
        }
    }
    out
}

/// Measures contraction of `θ_{a,ν}` and the image diameter for each
/// operator on the same pairs: `pairs` random pairs plus every pair of
/// [`boundary_members`].
pub fn contraction_and_diameter(
    ops: &[&UlamOperator],
    cone: &ConeParams,
    pairs: usize,
    seed: u64,
    tolerance: f64,
) -> Result<ContractionReport> {
    cone.validate()?;
    if ops.is_empty() {
        return Err(invalid("no operators given"));
    }
    let n = ops[0].n_cells();
    let domain = ops[0].domain();
    let mut sampled: Vec<(GridDensity, GridDensity)> = (0..pairs)
        .map(|p| {
            let mut rng = substream(seed, "cone-pairs", p as u64);
            (
                sample_cone_member(n, domain, cone, &mut rng),
                sample_cone_member(n, domain, cone, &mut rng),
            )
        })
        .collect();
    let edge = boundary_members(n, domain, cone);
    for i in 0..edge.len() {
        for j in 0..i {
            sampled.push((edge[i].clone(), edge[j].clone()));
        }
    }
    let mut q_hat: f64 = 0.0;
    let mut d_hat: f64 = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    let mut per_op = Vec::with_capacity(ops.len());
    for op in ops {
        let mut q_op: f64 = 0.0;
        for (p1, p2) in &sampled {
            let before = theta_holder(p1, p2, cone)?;
            if !before.finite || before.theta < 1e-12 {
                skipped += 1;
                continue;
            }
            let (i1, i2) = (op.apply(p1)?, op.apply(p2)?);
            let after = match theta_holder(&i1, &i2, cone) {
                Ok(d) => d,
                Err(Error::InvalidArgument(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            used += 1;
            d_hat = d_hat.max(after.theta);
            q_op = q_op.max(after.theta / before.theta);
        }
        q_hat = q_hat.max(q_op);
        per_op.push(q_op);
    }
    if used == 0 {
        return Err(Error::Degenerate(
            "no pair with positive finite θ and images in the cone".into(),
        ));
    }
    let q_bound = 1.0 - (-d_hat).exp();
    Ok(ContractionReport {
        q_hat,
        d_hat,
        q_bound,
        bound_ok: q_hat < 1.0 && q_hat <= q_bound + tolerance,
        per_operator_q: per_op,
        pairs_used: used,
        pairs_skipped: skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::MapFamily;
    use crate::transfer::{build_ulam, UlamScheme};

    fn cone() -> ConeParams {
        ConeParams::new(2.0, 1.0, 0.1, 0.75).unwrap()
    }

    #[test]
    fn constant_is_in_every_cone() {
        let u = GridDensity::uniform(128, Domain::Circle);
        let m = cone_membership(&u, &ConeParams::new(1e-6, 0.5, 0.1, 0.5).unwrap());
        assert!(m.member && m.a_min == 0.0);
        let mut z = vec![1.0; 128];
        z[5] = 0.0;
        let zero = GridDensity::new(z, Domain::Circle).unwrap();
        assert!(!cone_membership(&zero, &cone().positive()).member);
    }

    #[test]
    fn a_min_of_exponential_profile() {
        // exp(b x^ν): the largest log-ratio per d^ν sits at the origin
        let (b, nu) = (1.5, 0.5);
        let phi = GridDensity::from_fn(2048, Domain::Interval, |x: f64| (b * x.powf(nu)).exp()).unwrap();
        let a = a_min(&phi, nu, 0.1, 1).unwrap();
        assert!((a - b).abs() < 0.05 * b, "{a}");
    }

    #[test]
    fn theta_plus_examples() {
        let phi = GridDensity::from_fn(256, Domain::Interval, |x| 1.0 + x * x).unwrap();
        assert_eq!(theta_plus(&phi, &phi).unwrap().theta, 0.0);
        assert_eq!(theta_plus(&phi, &phi.scaled(3.0)).unwrap().theta, 0.0);
        let one = GridDensity::uniform(4096, Domain::Interval);
        let lin = GridDensity::from_fn(4096, Domain::Interval, |x| 2.0 + x).unwrap();
        let t = theta_plus(&one, &lin).unwrap();
        assert!((t.theta - 1.5f64.ln()).abs() < 1e-3);
    }

    #[test]
    fn theta_holder_projective_and_dominates_theta_plus() {
        let c = cone();
        let mut rng = substream(5, "t", 0);
        for _ in 0..20 {
            let p = sample_cone_member(256, Domain::Circle, &c, &mut rng);
            let q = sample_cone_member(256, Domain::Circle, &c, &mut rng);
            assert_eq!(theta_holder(&p, &p.scaled(2.5), &c).unwrap().theta, 0.0);
            let h = theta_holder(&p, &q, &c).unwrap();
            let plus = theta_plus(&p, &q).unwrap();
            assert!(plus.theta <= h.theta + 1e-12);
        }
    }

    #[test]
    fn sampler_lands_inside_the_cone() {
        let c = cone();
        let mut rng = substream(9, "s", 0);
        for domain in [Domain::Circle, Domain::Interval] {
            for _ in 0..10 {
                let p = sample_cone_member(300, domain, &c, &mut rng);
                let m = cone_membership(&p, &c);
                assert!(m.member && m.a_min <= 0.95 * c.a + 1e-9);
                assert!((p.mass() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn doubling_image_check_and_counterexample() {
        let c = cone();
        let op = build_ulam(&MapFamily::doubling().instantiate(0.0).unwrap(), 512, UlamScheme::Exact).unwrap();
        assert!(cone_image_check(&op, &c, 20, 1, 0.05).unwrap().passed);
        let u = GridDensity::uniform(512, Domain::Circle);
        assert_eq!(a_min(&op.apply(&u).unwrap(), 1.0, 0.1, 16), Some(0.0));
        let bad = MapFamily::pomeau_manneville(0.5)
            .unwrap()
            .instantiate_unchecked(-0.05)
            .unwrap();
        let bad_op = build_ulam(&bad, 512, UlamScheme::Exact).unwrap();
        assert!(!cone_image_check(&bad_op, &c, 5, 1, 0.05).unwrap().passed);
    }

    #[test]
    fn doubling_contracts() {
        let c = cone();
        let op = build_ulam(&MapFamily::doubling().instantiate(0.0).unwrap(), 512, UlamScheme::Exact).unwrap();
        let r = contraction_and_diameter(&[&op], &c, 20, 3, 0.05).unwrap();
        assert!(r.q_hat < 1.0, "{r:?}");
        assert!(r.bound_ok, "{r:?}");
    }
}
