//! Parameter sequences and density evolution under nonautonomous
//! compositions `L_{γ_n} ⋯ L_{γ_1}`.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::density::{l1_slices, quasi_holder_seminorm, GridDensity, DEFAULT_N_EPS};
use crate::error::{invalid, Result};
use crate::maps::MapFamily;
use crate::rng::substream;
use crate::transfer::{
    averaged_operator, build_ulam, fixed_density, for_each_transition, Averaging, UlamOperator, UlamScheme,
    DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER,
};

/// Distribution of i.i.d. parameter draws around a centre.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IidLaw {
    /// uniform on `[γ̂ − δ, γ̂ + δ]`
    #[default]
    Uniform,
    /// `γ̂ ± δ` with probability 1/2 each
    TwoPoint,
}

/// Reproducible generator of `γ₁, γ₂, …`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceSpec {
    Constant {
        gamma: f64,
    },
    Iid {
        #[serde(default)]
        law: IidLaw,
        center: f64,
        radius: f64,
        seed: u64,
    },
    /// `γ_i = +ε` for `k_{2j} < i ≤ k_{2j+1}` and `−ε` for
    /// `k_{2j+1} < i ≤ k_{2j+2}`; the last block extends indefinitely.
    Adversarial {
        eps: f64,
        schedule: Vec<u64>,
    },
    Explicit {
        values: Vec<f64>,
    },
}

fn validate_schedule(schedule: &[u64]) -> Result<()> {
    if schedule.first() != Some(&0) {
        return Err(invalid("adversarial schedule must start at 0"));
    }
    if let Some(w) = schedule.windows(2).find(|w| w[1] <= w[0]) {
        return Err(invalid(format!(
            "adversarial schedule is not strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

/// First `n` parameters of `spec`.
pub fn gen_sequence(spec: &SequenceSpec, n: usize) -> Result<Vec<f64>> {
    match spec {
        SequenceSpec::Constant { gamma } => Ok(vec![*gamma; n]),
        SequenceSpec::Iid {
            law,
            center,
            radius,
            seed,
        } => {
            if !(*radius >= 0.0) {
                return Err(invalid(format!("radius δ = {radius} must be nonnegative")));
            }
            let mut rng = substream(*seed, "sequence", 0);
            Ok((0..n)
                .map(|_| match law {
                    IidLaw::Uniform => center + radius * rng.gen_range(-1.0..=1.0),
                    IidLaw::TwoPoint => {
                        if rng.gen::<bool>() {
                            center + radius
                        } else {
                            center - radius
                        }
                    }
                })
                .collect())
        }
        SequenceSpec::Adversarial { eps, schedule } => {
            validate_schedule(schedule)?;
            let mut out = Vec::with_capacity(n);
            let mut block = 0usize;
            for i in 1..=n as u64 {
                while block + 1 < schedule.len() && i > schedule[block + 1] {
                    block += 1;
                }
                out.push(if block.is_multiple_of(2) { *eps } else { -eps });
            }
            Ok(out)
        }
        SequenceSpec::Explicit { values } => {
            if values.len() < n {
                return Err(invalid(format!(
                    "explicit sequence has {} values, {n} requested",
                    values.len()
                )));
            }
            Ok(values[..n].to_vec())
        }
    }
}

/// `0, g, 3g, 7g, …`: each gap twice the previous one, the last entry
/// clipped to `horizon`.
pub fn doubling_gap_schedule(first_gap: u64, horizon: u64) -> Vec<u64> {
    let mut out = vec![0];
    let mut gap = first_gap.max(1);
    let mut k = 0u64;
    while k < horizon {
        k = (k + gap).min(horizon);
        out.push(k);
        gap *= 2;
    }
    out
}

/// Applies `L_γ` to a batch of densities, reusing assembled matrices when
/// the sequence takes few distinct values.
struct Stepper<'a> {
    family: &'a MapFamily,
    scheme: UlamScheme,
    unchecked: bool,
    cache: Vec<(f64, UlamOperator)>,
}

const CACHE_LIMIT: usize = 16;

impl<'a> Stepper<'a> {
    fn new(family: &'a MapFamily, gammas: &[f64], n: usize, scheme: UlamScheme, unchecked: bool) -> Result<Self> {
        let mut distinct: Vec<f64> = Vec::new();
        for &g in gammas {
            if !distinct.iter().any(|d| d.to_bits() == g.to_bits()) {
                distinct.push(g);
                if distinct.len() > CACHE_LIMIT {
                    break;
                }
            }
        }
        let mut cache = Vec::new();
        if distinct.len() <= CACHE_LIMIT {
            for g in distinct {
                let map = if unchecked {
                    family.instantiate_unchecked(g)?
                } else {
                    family.instantiate(g)?
                };
                cache.push((g, build_ulam(&map, n, scheme)?));
            }
        }
        Ok(Self {
            family,
            scheme,
            unchecked,
            cache,
        })
    }

    fn step(&self, gamma: f64, src: &[Vec<f64>], dst: &mut [Vec<f64>]) -> Result<()> {
        if let Some((_, op)) = self.cache.iter().find(|(g, _)| g.to_bits() == gamma.to_bits()) {
            for (s, d) in src.iter().zip(dst.iter_mut()) {
                op.apply_into(s, d);
            }
            return Ok(());
        }
        let map = if self.unchecked {
            self.family.instantiate_unchecked(gamma)?
        } else {
            self.family.instantiate(gamma)?
        };
        dst.iter_mut().for_each(|d| d.iter_mut().for_each(|v| *v = 0.0));
        let n = src[0].len();
        if src.len() == 1 {
            let (s, d) = (&src[0], &mut dst[0]);
            for_each_transition(&map, n, self.scheme, |j, i, w| d[i] += w * s[j])
        } else {
            for_each_transition(&map, n, self.scheme, |j, i, w| {
                for (s, d) in src.iter().zip(dst.iter_mut()) {
                    d[i] += w * s[j];
                }
            })
        }
    }
}

/// Options for [`evolve_density`].
#[derive(Clone, Debug)]
pub struct EvolveOptions {
    pub checkpoint_every: usize,
    /// `(α, ε₀)` to record `|φ_n|_α` at checkpoints
    pub seminorm: Option<(f64, f64)>,
    pub keep_densities: bool,
    /// allow members that fail the expansion check
    pub unchecked: bool,
    pub scheme: UlamScheme,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self {
            checkpoint_every: 10,
            seminorm: None,
            keep_densities: false,
            unchecked: false,
            scheme: UlamScheme::Exact,
        }
    }
}

/// Checkpointed record of one evolution.
#[derive(Clone, Debug, Serialize)]
pub struct EvolutionTrace {
    pub steps: Vec<usize>,
    /// `‖φ_n − φ_ref‖₁` (empty without a reference)
    pub distances: Vec<f64>,
    pub masses: Vec<f64>,
    pub seminorms: Vec<f64>,
    #[serde(skip)]
    pub densities: Vec<GridDensity>,
    #[serde(skip)]
    pub final_density: Option<GridDensity>,
}

impl EvolutionTrace {
    pub fn max_mass_error(&self) -> f64 {
        self.masses.iter().map(|m| (m - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `(n̄, sup_{n ≥ n̄} distance)`, with `n̄` the first checkpoint whose
    /// distance is within 10% of the smallest distance seen.
    pub fn post_transient(&self) -> Option<(usize, f64)> {
        let min = self.distances.iter().copied().fold(f64::INFINITY, f64::min);
        let k = self.distances.iter().position(|&d| d <= 1.1 * min)?;
        let worst = self.distances[k..].iter().copied().fold(0.0, f64::max);
        Some((self.steps[k], worst))
    }
}

/// Evolves `phi0` under `L_{γ_n} ⋯ L_{γ_1}`.
pub fn evolve_density(
    family: &MapFamily,
    gammas: &[f64],
    phi0: &GridDensity,
    reference: Option<&GridDensity>,
    opts: &EvolveOptions,
) -> Result<EvolutionTrace> {
    Ok(
        evolve_densities(family, gammas, std::slice::from_ref(phi0), reference, opts)?
            .pop()
            .unwrap(),
    )
}

/// Evolves several initial densities along the same sequence, sharing the
/// per-step transition computation.
pub fn evolve_densities(
    family: &MapFamily,
    gammas: &[f64],
    phi0s: &[GridDensity],
    reference: Option<&GridDensity>,
    opts: &EvolveOptions,
) -> Result<Vec<EvolutionTrace>> {
    if phi0s.is_empty() {
        return Err(invalid("no initial densities"));
    }
    let n = phi0s[0].n_cells();
    if let Some(p) = phi0s.iter().find(|p| p.n_cells() != n) {
        return Err(crate::Error::GridMismatch {
            left: n,
            right: p.n_cells(),
        });
    }
    if let Some(r) = reference {
        crate::density::check_grid(r, &phi0s[0])?;
    }
    let domain = phi0s[0].domain();
    let every = opts.checkpoint_every.max(1);
    let stepper = Stepper::new(family, gammas, n, opts.scheme, opts.unchecked)?;
    let mut cur: Vec<Vec<f64>> = phi0s.iter().map(|p| p.values().to_vec()).collect();
    let mut next: Vec<Vec<f64>> = vec![vec![0.0; n]; phi0s.len()];
    let mut traces: Vec<EvolutionTrace> = phi0s
        .iter()
        .map(|_| EvolutionTrace {
            steps: Vec::new(),
            distances: Vec::new(),
            masses: Vec::new(),
            seminorms: Vec::new(),
            densities: Vec::new(),
            final_density: None,
        })
        .collect();
    let record = |traces: &mut [EvolutionTrace], cur: &[Vec<f64>], step: usize| -> Result<()> {
        for (t, v) in traces.iter_mut().zip(cur) {
            t.steps.push(step);
            t.masses.push(v.iter().sum::<f64>() / n as f64);
            if let Some(r) = reference {
                t.distances.push(l1_slices(v, r.values()));
            }
            if opts.seminorm.is_some() || opts.keep_densities {
                let g = GridDensity::from_parts(v.clone(), domain);
                if let Some((alpha, eps0)) = opts.seminorm {
                    t.seminorms
                        .push(quasi_holder_seminorm(&g, alpha, eps0, DEFAULT_N_EPS)?.seminorm);
                }
                if opts.keep_densities {
                    t.densities.push(g);
                }
            }
        }
        Ok(())
    };
    record(&mut traces, &cur, 0)?;
    for (k, &g) in gammas.iter().enumerate() {
        stepper.step(g, &cur, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
        let step = k + 1;
        if step % every == 0 || step == gammas.len() {
            record(&mut traces, &cur, step)?;
        }
    }
    for (t, v) in traces.iter_mut().zip(cur) {
        t.final_density = Some(GridDensity::from_parts(v, domain));
    }
    Ok(traces)
}

/// `n ↦ ‖L^n_γ(φ − ψ)‖₁` and the first `n` where it drops below `threshold`.
#[derive(Clone, Debug, Serialize)]
pub struct MemoryLoss {
    pub curve: Vec<f64>,
    pub non_increasing: bool,
    pub n_star: Option<usize>,
}

pub fn memory_loss(
    family: &MapFamily,
    gammas: &[f64],
    phi: &GridDensity,
    psi: &GridDensity,
    threshold: f64,
    scheme: UlamScheme,
) -> Result<MemoryLoss> {
    crate::density::check_grid(phi, psi)?;
    let n = phi.n_cells();
    let stepper = Stepper::new(family, gammas, n, scheme, false)?;
    let mut cur = vec![phi.combine(1.0, psi, -1.0)?.into_values()];
    let mut next = vec![vec![0.0; n]];
    let mut curve = vec![cur[0].iter().map(|v| v.abs()).sum::<f64>() / n as f64];
    for &g in gammas {
        stepper.step(g, &cur, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
        curve.push(cur[0].iter().map(|v| v.abs()).sum::<f64>() / n as f64);
    }
    let non_increasing = curve.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
    let n_star = curve.iter().position(|&d| d < threshold);
    Ok(MemoryLoss {
        curve,
        non_increasing,
        n_star,
    })
}

/// Parameters of [`stability_experiment`].
#[derive(Clone, Debug)]
pub struct StabilityParams {
    pub gamma_hat: f64,
    pub deltas: Vec<f64>,
    pub n_steps: usize,
    pub n_seqs: usize,
    pub seed: u64,
    pub n_cells: usize,
    pub checkpoint_every: usize,
    /// nodes of the uniform law used for the averaged operator
    pub avg_nodes: usize,
    pub scheme: UlamScheme,
}

/// One row of the `δ ↦ ε(δ)` table.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityRow {
    pub delta: f64,
    /// `‖φ_ν − φ_γ̂‖₁`, `ν` uniform on `B_δ(γ̂)`
    pub stationary_distance: f64,
    /// `‖φ_{γ̂+δ} − φ_γ̂‖₁`
    pub point_mass_distance: f64,
    /// worst post-transient `‖L^n_γ φ₀ − φ_γ̂‖₁` over sequences and `φ₀`
    pub worst_post_transient: f64,
    /// worst value per initial density, in input order
    pub worst_by_initial: Vec<f64>,
    pub n_bar_max: usize,
    pub max_mass_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct StabilityTable {
    pub gamma_hat: f64,
    pub rows: Vec<StabilityRow>,
    pub reference_residual: f64,
}

/// Stationary-density and evolution distances to `φ_γ̂` for each `δ`.
///
/// Sequence `s` uses the same uniform draws for every `δ` (scaled by `δ`),
/// so rows differ only through the perturbation size.
pub fn stability_experiment(
    family: &MapFamily,
    params: &StabilityParams,
    phi0s: &[GridDensity],
) -> Result<StabilityTable> {
    if params.deltas.iter().any(|&d| !(d >= 0.0)) {
        return Err(invalid("deltas must be nonnegative"));
    }
    if params.n_seqs == 0 || phi0s.is_empty() {
        return Err(invalid("stability experiment needs sequences and initial densities"));
    }
    let n = params.n_cells;
    let base = build_ulam(&family.instantiate(params.gamma_hat)?, n, params.scheme)?;
    let reference = fixed_density(&base, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)?;
    let seq_seeds: Vec<u64> = (0..params.n_seqs)
        .map(|s| substream(params.seed, "stability-sequences", s as u64).next_u64())
        .collect();
    let opts = EvolveOptions {
        checkpoint_every: params.checkpoint_every,
        scheme: params.scheme,
        ..EvolveOptions::default()
    };
    let mut rows = Vec::with_capacity(params.deltas.len());
    for &delta in &params.deltas {
        let avg = averaged_operator(
            family,
            &Averaging::uniform(params.gamma_hat, delta, params.avg_nodes),
            n,
            params.scheme,
        )?;
        let phi_nu = fixed_density(&avg, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)?;
        let stationary_distance = l1_slices(phi_nu.density.values(), reference.density.values());
        let shifted = build_ulam(&family.instantiate(params.gamma_hat + delta)?, n, params.scheme)?;
        let phi_pm = fixed_density(&shifted, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)?;
        let point_mass_distance = l1_slices(phi_pm.density.values(), reference.density.values());

        let runs: Vec<Vec<EvolutionTrace>> = seq_seeds
            .iter()
            .map(|&s| {
                let spec = SequenceSpec::Iid {
                    law: IidLaw::Uniform,
                    center: params.gamma_hat,
                    radius: delta,
                    seed: s,
                };
                let gammas = gen_sequence(&spec, params.n_steps)?;
                evolve_densities(family, &gammas, phi0s, Some(&reference.density), &opts)
            })
            .collect::<Result<_>>()?;
        let mut worst_by_initial = vec![0.0f64; phi0s.len()];
        let mut n_bar_max = 0;
        let mut mass_err: f64 = 0.0;
        for traces in &runs {
            for (k, t) in traces.iter().enumerate() {
                let (nbar, worst) = t.post_transient().unwrap_or((0, f64::NAN));
                worst_by_initial[k] = worst_by_initial[k].max(worst);
                n_bar_max = n_bar_max.max(nbar);
                mass_err = mass_err.max(t.max_mass_error());
            }
        }
        rows.push(StabilityRow {
            delta,
            stationary_distance,
            point_mass_distance,
            worst_post_transient: worst_by_initial.iter().copied().fold(0.0, f64::max),
            worst_by_initial,
            n_bar_max,
            max_mass_error: mass_err,
        });
    }
    Ok(StabilityTable {
        gamma_hat: params.gamma_hat,
        rows,
        reference_residual: reference.residual,
    })
}

/// Per-block summary of the adversarial run.
#[derive(Clone, Debug, Serialize)]
pub struct BlockEnd {
    pub step: usize,
    /// `+1` for a `+ε` block, `−1` for a `−ε` block
    pub sign: i8,
    pub mass_near_zero: f64,
    pub distance: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdversarialReport {
    pub eps: f64,
    pub schedule: Vec<u64>,
    pub near_zero_width: f64,
    /// mass of `[0, w)` after each step (index 0 is the initial density)
    pub mass_near_zero: Vec<f64>,
    /// `‖φ_n − φ_{+ε}‖₁` after each step
    pub distance: Vec<f64>,
    pub block_ends: Vec<BlockEnd>,
    /// some `−ε` block ends with more than 90% of the mass near 0
    pub concentrated: bool,
    /// some `+ε` block ends within 0.1 of `φ_{+ε}`
    pub equilibrated: bool,
    /// after the first two blocks the distance exceeds 0.5 and drops below
    /// 0.1
    pub two_regimes: bool,
    pub warnings: Vec<String>,
}

/// Alternates `f_{+ε}` and `f_{−ε}` of the Pomeau–Manneville family along
/// `schedule`; the `−ε` member has an attracting fixed point at 0.
pub fn adversarial_demo(
    kappa: f64,
    eps: f64,
    schedule: &[u64],
    phi0: &GridDensity,
    n_max: usize,
    near_zero_width: f64,
) -> Result<AdversarialReport> {
    if !(eps > 0.0) {
        return Err(invalid(format!("ε = {eps} must be positive")));
    }
    validate_schedule(schedule)?;
    let family = MapFamily::pomeau_manneville(kappa)?;
    let n = phi0.n_cells();
    let plus = build_ulam(&family.instantiate(eps)?, n, UlamScheme::Exact)?;
    let minus = build_ulam(&family.instantiate_unchecked(-eps)?, n, UlamScheme::Exact)?;
    let target = fixed_density(&plus, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)?.density;
    let gammas = gen_sequence(
        &SequenceSpec::Adversarial {
            eps,
            schedule: schedule.to_vec(),
        },
        n_max,
    )?;
    let mut cur = phi0.values().to_vec();
    let mut next = vec![0.0; n];
    let near = |v: &[f64]| GridDensity::from_parts(v.to_vec(), phi0.domain()).cdf(near_zero_width);
    let mut mass_near_zero = vec![near(&cur)];
    let mut distance = vec![l1_slices(&cur, target.values())];
    for &g in &gammas {
        let op = if g > 0.0 { &plus } else { &minus };
        op.apply_into(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
        mass_near_zero.push(near(&cur));
        distance.push(l1_slices(&cur, target.values()));
    }
    let mut block_ends = Vec::new();
    for (b, &k) in schedule.iter().enumerate().skip(1) {
        let step = k as usize;
        if step > n_max {
            break;
        }
        block_ends.push(BlockEnd {
            step,
            sign: if (b - 1) % 2 == 0 { 1 } else { -1 },
            mass_near_zero: mass_near_zero[step],
            distance: distance[step],
        });
    }
    let concentrated = block_ends.iter().any(|e| e.sign < 0 && e.mass_near_zero > 0.9);
    let equilibrated = block_ends.iter().any(|e| e.sign > 0 && e.distance < 0.1);
    let after = schedule.get(2).map_or(usize::MAX, |&k| k as usize);
    let tail = if after < distance.len() {
        &distance[after..]
    } else {
        &[][..]
    };
    let two_regimes = tail.iter().any(|&d| d > 0.5) && tail.iter().any(|&d| d < 0.1);
    let mut warnings = Vec::new();
    if block_ends.len() < 4 {
        warnings.push(format!(
            "only {} complete blocks within {n_max} steps; both regimes need at least 4",
            block_ends.len()
        ));
    }
    if !concentrated {
        warnings.push("no −ε block ended with more than 90% of the mass near 0".into());
    }
    if !equilibrated {
        warnings.push("no +ε block ended within 0.1 of the +ε invariant density".into());
    }
    Ok(AdversarialReport {
        eps,
        schedule: schedule.to_vec(),
        near_zero_width,
        mass_near_zero,
        distance,
        block_ends,
        concentrated,
        equilibrated,
        two_regimes,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::Domain;

    #[test]
    fn constant_and_adversarial_sequences() {
        assert_eq!(
            gen_sequence(&SequenceSpec::Constant { gamma: 0.1 }, 5).unwrap(),
            vec![0.1; 5]
        );
        let adv = SequenceSpec::Adversarial {
            eps: 0.1,
            schedule: vec![0, 3, 5],
        };
        assert_eq!(gen_sequence(&adv, 5).unwrap(), vec![0.1, 0.1, 0.1, -0.1, -0.1]);
        let bad = SequenceSpec::Adversarial {
            eps: 0.1,
            schedule: vec![0, 3, 3],
        };
        assert!(gen_sequence(&bad, 5).is_err());
    }

    #[test]
    fn iid_sequences_are_reproducible_and_bounded() {
        let spec = SequenceSpec::Iid {
            law: IidLaw::Uniform,
            center: 0.1,
            radius: 0.01,
            seed: 42,
        };
        let a = gen_sequence(&spec, 1000).unwrap();
        assert_eq!(a, gen_sequence(&spec, 1000).unwrap());
        assert!(a.iter().all(|g| (g - 0.1).abs() <= 0.01));
    }

    #[test]
    fn doubling_gaps() {
        assert_eq!(
            doubling_gap_schedule(100, 10_000),
            vec![0, 100, 300, 700, 1500, 3100, 6300, 10_000]
        );
    }

    #[test]
    fn autonomous_evolution_converges() {
        let fam = MapFamily::pomeau_manneville(0.5).unwrap();
        let op = build_ulam(&fam.instantiate(0.1).unwrap(), 256, UlamScheme::Exact).unwrap();
        let reference = fixed_density(&op, 1e-13, 100_000).unwrap().density;
        let phi0 = GridDensity::uniform(256, Domain::Circle);
        let gammas = vec![0.1; 600];
        let t = evolve_density(&fam, &gammas, &phi0, Some(&reference), &EvolveOptions::default()).unwrap();
        assert!(*t.distances.last().unwrap() < 1e-10);
        assert!(t.max_mass_error() < 1e-12);
    }

    #[test]
    fn doubling_family_evolution() {
        let fam = MapFamily::doubling();
        let phi0 = GridDensity::indicator(512, Domain::Circle, 0.0, 0.5)
            .unwrap()
            .scaled(2.0);
        let u = GridDensity::uniform(512, Domain::Circle);
        let spec = SequenceSpec::Iid {
            law: IidLaw::Uniform,
            center: 0.0,
            radius: 0.01,
            seed: 1,
        };
        let gammas = gen_sequence(&spec, 50).unwrap();
        let t = evolve_density(&fam, &gammas, &phi0, Some(&u), &EvolveOptions::default()).unwrap();
        assert!(*t.distances.last().unwrap() < 0.1);
    }

    #[test]
    fn memory_loss_is_monotone() {
        let fam = MapFamily::smooth_circle();
        let spec = SequenceSpec::Iid {
            law: IidLaw::Uniform,
            center: 0.2,
            radius: 0.05,
            seed: 7,
        };
        let gammas = gen_sequence(&spec, 60).unwrap();
        let phi = GridDensity::indicator(256, Domain::Circle, 0.0, 0.5)
            .unwrap()
            .scaled(2.0);
        let psi = GridDensity::uniform(256, Domain::Circle);
        let m = memory_loss(&fam, &gammas, &phi, &psi, 1e-3, UlamScheme::Exact).unwrap();
        assert!(m.non_increasing);
        assert!(m.n_star.is_some());
    }

    #[test]
    fn post_transient_uses_tail() {
        let t = EvolutionTrace {
            steps: vec![0, 10, 20, 30],
            distances: vec![1.0, 0.05, 0.02, 0.021],
            masses: vec![1.0; 4],
            seminorms: vec![],
            densities: vec![],
            final_density: None,
        };
        assert_eq!(t.post_transient(), Some((20, 0.021)));
    }
}
