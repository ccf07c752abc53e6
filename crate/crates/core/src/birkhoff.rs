//! Time averages along nonautonomous orbits, covariance decay and a
//! Lévy–Prokhorov estimator for empirical measures.

use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::density::{quasi_holder_seminorm, GridDensity, DEFAULT_N_EPS};
use crate::error::{invalid, Result};
use crate::maps::{wrap_unit, Domain, MapFamily};
use crate::rng::substream;
use crate::transfer::{transfer_into, UlamScheme};

pub const DEFAULT_DITHER: f64 = 1e-12;

/// A test function `ψ` with its grid representation and cached norms.
#[derive(Clone)]
pub struct Observable {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    grid: GridDensity,
    l1: f64,
    seminorm: f64,
    sup: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("name", &self.name)
            .field("l1", &self.l1)
            .field("seminorm", &self.seminorm)
            .field("sup", &self.sup)
            .finish()
    }
}

impl Observable {
    pub fn new(
        name: &str,
        n_cells: usize,
        domain: Domain,
        alpha: f64,
        eps0: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let grid = GridDensity::from_fn(n_cells, domain, &f)?;
        let seminorm = quasi_holder_seminorm(&grid, alpha, eps0, DEFAULT_N_EPS)?.seminorm;
        if !seminorm.is_finite() {
            return Err(invalid(format!("observable {name} has infinite seminorm")));
        }
        Ok(Self {
            name: name.to_string(),
            l1: grid.l1_norm(),
            sup: grid.sup_norm(),
            seminorm,
            grid,
            f: Arc::new(f),
        })
    }

    /// `ψ(x) = x`
    pub fn identity(n_cells: usize, domain: Domain, alpha: f64, eps0: f64) -> Result<Self> {
        Self::new("x", n_cells, domain, alpha, eps0, |x| x)
    }

    /// `ψ(x) = cos(2πx)`
    pub fn cosine(n_cells: usize, domain: Domain, alpha: f64, eps0: f64) -> Result<Self> {
        Self::new("cos2pix", n_cells, domain, alpha, eps0, |x| (TAU * x).cos())
    }

    pub fn constant(c: f64, n_cells: usize, domain: Domain) -> Result<Self> {
        Self::new(
            "const",
            n_cells,
            domain,
            1.0,
            0.05_f64.max(1.0 / n_cells as f64),
            move |_| c,
        )
    }

    /// Looks up a built-in observable by name (`x`, `cos2pix`, `one`).
    pub fn by_name(name: &str, n_cells: usize, domain: Domain, alpha: f64, eps0: f64) -> Result<Self> {
        match name {
            "x" | "identity" => Self::identity(n_cells, domain, alpha, eps0),
            "cos2pix" | "cos" => Self::cosine(n_cells, domain, alpha, eps0),
            "one" | "const" => Self::constant(1.0, n_cells, domain),
            other => Err(invalid(format!("unknown observable `{other}`"))),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn grid(&self) -> &GridDensity {
        &self.grid
    }

    pub fn l1_norm(&self) -> f64 {
        self.l1
    }

    pub fn seminorm(&self) -> f64 {
        self.seminorm
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup
    }
}

#[inline]
fn step_point<R: Rng>(family: &MapFamily, gamma: f64, x: f64, dither: f64, rng: &mut R) -> f64 {
    let y = family.eval(gamma, x);
    if dither > 0.0 {
        wrap_unit(y + rng.gen_range(-dither..dither))
    } else {
        y
    }
}

/// The first `n` points `x, F_{γ₁}x, …` of one dithered orbit.
pub fn orbit(family: &MapFamily, gammas: &[f64], x0: f64, n: usize, seed: u64, dither: f64) -> Result<Vec<f64>> {
    if gammas.len() + 1 < n {
        return Err(invalid(format!(
            "sequence has {} terms, {} needed",
            gammas.len(),
            n.saturating_sub(1)
        )));
    }
    if !(dither >= 0.0) {
        return Err(invalid("dither width must be nonnegative"));
    }
    let mut rng = substream(seed, "orbit", 0);
    let mut x = wrap_unit(x0);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        out.push(x);
        if k + 1 < n {
            x = step_point(family, gammas[k], x, dither, &mut rng);
        }
    }
    Ok(out)
}

/// Running averages `S_k(ψ)(x)/k` of one observable over all points.
#[derive(Clone, Debug, Serialize)]
pub struct ObservableAverages {
    pub name: String,
    /// `S_n(ψ)(x)/n` per point
    pub finals: Vec<f64>,
    /// min / max of the running average over the last 10% of steps
    pub tail_min: Vec<f64>,
    pub tail_max: Vec<f64>,
    /// running averages at `checkpoints`, per point
    pub trajectories: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BirkhoffRun {
    pub n: usize,
    pub initial_points: Vec<f64>,
    pub checkpoints: Vec<usize>,
    pub dither: f64,
    pub observables: Vec<ObservableAverages>,
}

/// Birkhoff averages `S_n(ψ)(x)/n` along `x, F_{γ₁}x, F_{γ₂}F_{γ₁}x, …` for
/// `n_points` Lebesgue-random starting points.
///
/// Each step adds uniform noise of half-width `dither` (0 disables it).
pub fn birkhoff_averages(
    family: &MapFamily,
    gammas: &[f64],
    n_points: usize,
    psis: &[Observable],
    n: usize,
    seed: u64,
    dither: f64,
) -> Result<BirkhoffRun> {
    if n == 0 {
        return Err(invalid("Birkhoff averages need n ≥ 1"));
    }
    if gammas.len() + 1 < n {
        return Err(invalid(format!(
            "sequence has {} terms, {} needed",
            gammas.len(),
            n - 1
        )));
    }
    if !(dither >= 0.0) {
        return Err(invalid("dither width must be nonnegative"));
    }
    let mut rng0 = substream(seed, "initial-points", 0);
    let starts: Vec<f64> = (0..n_points).map(|_| rng0.gen::<f64>()).collect();
    let tail_from = n - n / 10;
    let n_ck = 100.min(n);
    let checkpoints: Vec<usize> = (1..=n_ck).map(|c| c * n / n_ck).collect();
    type PerPoint = Vec<(f64, f64, f64, Vec<f64>)>;
    let per_point: Vec<PerPoint> = starts
        .par_iter()
        .enumerate()
        .map(|(p, &x0)| {
            let mut rng = substream(seed, "dither", p as u64);
            let mut x = x0;
            let mut sums: Vec<f64> = psis.iter().map(|psi| psi.eval(x)).collect();
            let mut tmin = vec![f64::INFINITY; psis.len()];
            let mut tmax = vec![f64::NEG_INFINITY; psis.len()];
            let mut traj: Vec<Vec<f64>> = vec![Vec::with_capacity(n_ck); psis.len()];
            let mut next_ck = 0;
            for k in 1..=n {
                if k > 1 {
                    x = step_point(family, gammas[k - 2], x, dither, &mut rng);
                    for (s, psi) in sums.iter_mut().zip(psis) {
                        *s += psi.eval(x);
                    }
                }
                if k >= tail_from.max(1) {
                    for (o, s) in sums.iter().enumerate() {
                        let a = s / k as f64;
                        tmin[o] = tmin[o].min(a);
                        tmax[o] = tmax[o].max(a);
                    }
                }
                if next_ck < checkpoints.len() && checkpoints[next_ck] == k {
                    for (o, s) in sums.iter().enumerate() {
                        traj[o].push(s / k as f64);
                    }
                    next_ck += 1;
                }
            }
            (0..psis.len())
                .map(|o| (sums[o] / n as f64, tmin[o], tmax[o], std::mem::take(&mut traj[o])))
                .collect()
        })
        .collect();
    let observables = psis
        .iter()
        .enumerate()
        .map(|(o, psi)| ObservableAverages {
            name: psi.name().to_string(),
            finals: per_point.iter().map(|r| r[o].0).collect(),
            tail_min: per_point.iter().map(|r| r[o].1).collect(),
            tail_max: per_point.iter().map(|r| r[o].2).collect(),
            trajectories: per_point.iter().map(|r| r[o].3.clone()).collect(),
        })
        .collect();
    Ok(BirkhoffRun {
        n,
        initial_points: starts,
        checkpoints,
        dither,
        observables,
    })
}

/// `[∫ψφ dm − ε‖ψ‖₁, ∫ψφ dm + ε‖ψ‖₁]`
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Band {
    pub center: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BandReport {
    pub band: Band,
    pub inside: usize,
    pub total: usize,
    pub pass_fraction: f64,
    /// 95% Wilson score interval for the pass fraction
    pub wilson: (f64, f64),
}

pub fn quasi_birkhoff_band(psi: &Observable, phi_ref: &GridDensity, eps: f64) -> Result<Band> {
    if !(eps >= 0.0) {
        return Err(invalid("band half-width must be nonnegative"));
    }
    let center = psi.grid().integrate_against(phi_ref)?;
    let half = eps * psi.l1_norm();
    Ok(Band {
        center,
        lower: center - half,
        upper: center + half,
    })
}

impl Band {
    /// A point passes when its tail extrema both lie inside the band.
    pub fn evaluate(&self, averages: &ObservableAverages) -> BandReport {
        let total = averages.tail_min.len();
        let inside = averages
            .tail_min
            .iter()
            .zip(&averages.tail_max)
            .filter(|(lo, hi)| **lo >= self.lower && **hi <= self.upper)
            .count();
        let p = if total > 0 { inside as f64 / total as f64 } else { 0.0 };
        BandReport {
            band: *self,
            inside,
            total,
            pass_fraction: p,
            wilson: wilson_interval(inside, total, 1.96),
        }
    }
}

pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Covariances `R_ij` of `ψ_k = ψ ∘ F_{γ_k} ∘ ⋯ ∘ F_{γ_1}` over a window.
#[derive(Clone, Debug, Serialize)]
pub struct CovarianceTable {
    pub window: usize,
    pub ensemble: usize,
    /// `r[i][j]`, `0 ≤ i, j ≤ window`
    pub r: Vec<Vec<f64>>,
    /// Monte-Carlo standard error of each entry
    pub se: Vec<Vec<f64>>,
    pub ensemble_means: Vec<f64>,
    /// standard error of each ensemble mean
    pub mean_se: Vec<f64>,
    /// `∫ ψ · L_{γ_k}⋯L_{γ_1} 1 dm`
    pub spectral_means: Vec<f64>,
    /// `r(k) = max_{|i−j|=k} |R_ij|`
    pub lag_max: Vec<f64>,
    pub c: f64,
    pub q: f64,
    /// RMS of `C q^k − r(k)` over the fitted lags, divided by `C`
    pub residual: f64,
    pub fitted_lags: Vec<usize>,
}

/// Monte-Carlo covariance table with a geometric fit `|R_ij| ≤ C q^{|i−j|}`.
#[allow(clippy::too_many_arguments)]
pub fn covariance_decay(
    family: &MapFamily,
    gammas: &[f64],
    psi: &Observable,
    window: usize,
    ensemble: usize,
    seed: u64,
    dither: f64,
    scheme: UlamScheme,
) -> Result<CovarianceTable> {
    if window > gammas.len() {
        return Err(invalid(format!(
            "window {window} exceeds the sequence length {}",
            gammas.len()
        )));
    }
    if ensemble < 2 {
        return Err(invalid("ensemble needs at least 2 points"));
    }
    let w = window + 1;
    let samples: Vec<Vec<f64>> = (0..ensemble)
        .into_par_iter()
        .map(|m| {
            let mut rng = substream(seed, "covariance", m as u64);
            let mut x: f64 = rng.gen();
            let mut out = Vec::with_capacity(w);
            out.push(psi.eval(x));
            for &g in &gammas[..window] {
                x = step_point(family, g, x, dither, &mut rng);
                out.push(psi.eval(x));
            }
            out
        })
        .collect();
    let m = ensemble as f64;
    let means: Vec<f64> = (0..w).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / m).collect();
    let mut r = vec![vec![0.0; w]; w];
    let mut se = vec![vec![0.0; w]; w];
    for i in 0..w {
        for j in i..w {
            let prods: Vec<f64> = samples.iter().map(|s| (s[i] - means[i]) * (s[j] - means[j])).collect();
            let mean = prods.iter().sum::<f64>() / m;
            let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (m - 1.0);
            r[i][j] = mean;
            r[j][i] = mean;
            se[i][j] = (var / m).sqrt();
            se[j][i] = se[i][j];
        }
    }
    let mean_se: Vec<f64> = (0..w).map(|k| (r[k][k] / (m - 1.0)).sqrt()).collect();

    let grid = psi.grid();
    let n = grid.n_cells();
    let mut cur = vec![1.0; n];
    let mut next = vec![0.0; n];
    let mut spectral = Vec::with_capacity(w);
    let integ = |v: &[f64]| v.iter().zip(grid.values()).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    spectral.push(integ(&cur));
    for &g in &gammas[..window] {
        transfer_into(&family.instantiate(g)?, scheme, &cur, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
        spectral.push(integ(&cur));
    }

    let lag_max: Vec<f64> = (0..w)
        .map(|k| (0..w - k).map(|i| r[i][i + k].abs()).fold(0.0, f64::max))
        .collect();
    let lag_se: Vec<f64> = (0..w)
        .map(|k| (0..w - k).map(|i| se[i][i + k]).fold(0.0, f64::max))
        .collect();
    let (c, q, residual, fitted_lags) = fit_geometric(&lag_max, &lag_se);
    Ok(CovarianceTable {
        window,
        ensemble,
        r,
        se,
        ensemble_means: means,
        mean_se,
        spectral_means: spectral,
        lag_max,
        c,
        q,
        residual,
        fitted_lags,
    })
}

/// Fits `r(k) ≈ C q^k` on lags `k ≥ 1` whose value exceeds three standard
/// errors. With fewer than two such lags the envelope `C = r(0)`,
/// `q = max(r(1), 3·se(1)) / C` is used instead, so that insignificant lags
/// sit below the noise floor rather than setting the rate.
fn fit_geometric(lag: &[f64], se: &[f64]) -> (f64, f64, f64, Vec<usize>) {
    let c0 = lag[0];
    if c0 <= 0.0 {
        return (0.0, 0.0, 0.0, Vec::new());
    }
    let mut sig: Vec<usize> = Vec::new();
    for k in 1..lag.len() {
        if lag[k] > 3.0 * se[k] && lag[k] > 0.0 {
            sig.push(k);
        } else {
            break;
        }
    }
    let (c, q, lags) = if sig.len() >= 2 {
        let pts: Vec<(f64, f64)> = std::iter::once(0)
            .chain(sig.iter().copied())
            .map(|k| (k as f64, lag[k].ln()))
            .collect();
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let slope = sxy / sxx;
        (
            (my - slope * mx).exp(),
            slope.exp(),
            std::iter::once(0).chain(sig).collect::<Vec<_>>(),
        )
    } else {
        let q = if lag.len() > 1 {
            (lag[1].max(3.0 * se[1]) / c0).min(1.0)
        } else {
            0.0
        };
        (c0, q, (0..lag.len().min(2)).collect())
    };
    let rms = (lags
        .iter()
        .map(|&k| (c * q.powi(k as i32) - lag[k]).powi(2))
        .sum::<f64>()
        / lags.len() as f64)
        .sqrt();
    (c, q, rms / c, lags)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LlnVerdict {
    Summable,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnReport {
    pub c: f64,
    pub q: f64,
    /// `Σ_{k≤K} C q^k / k` for `K = 1, …, 1000`
    pub partial_sums: Vec<f64>,
    /// bound on the remainder past `K = 1000`
    pub tail_bound: f64,
    /// `−C log(1 − q)` (infinite when `q ≥ 1`)
    pub closed_form: f64,
    pub verdict: LlnVerdict,
}

pub const LLN_TERMS: usize = 1000;

/// Summability of `Σ r(k)/k` under the fitted geometric bound.
pub fn lln_summability(c: f64, q: f64) -> LlnReport {
    let mut partial_sums = Vec::with_capacity(LLN_TERMS);
    let mut acc = 0.0;
    let mut qk = 1.0;
    for k in 1..=LLN_TERMS {
        qk *= q;
        acc += c * qk / k as f64;
        partial_sums.push(acc);
    }
    let ok = (0.0..1.0).contains(&q) && c.is_finite();
    let kk = (LLN_TERMS + 1) as f64;
    LlnReport {
        c,
        q,
        partial_sums,
        tail_bound: if ok {
            c * q.powf(kk) / (kk * (1.0 - q))
        } else {
            f64::INFINITY
        },
        closed_form: if ok { -c * (1.0 - q).ln() } else { f64::INFINITY },
        verdict: if ok {
            LlnVerdict::Summable
        } else {
            LlnVerdict::Inconclusive
        },
    }
}

impl CovarianceTable {
    pub fn lln(&self) -> LlnReport {
        lln_summability(self.c, self.q)
    }
}

/// A Borel probability measure on `[0, 1)` that can measure intervals.
pub enum Measure<'a> {
    /// atoms `(position, weight)` with weights summing to 1
    Atoms(Vec<(f64, f64)>),
    Density(&'a GridDensity),
}

impl Measure<'_> {
    /// Empirical measure of a sample.
    pub fn empirical(points: &[f64]) -> Measure<'static> {
        let w = 1.0 / points.len().max(1) as f64;
        Measure::Atoms(points.iter().map(|&p| (p, w)).collect())
    }

    /// Atoms at the cell centres of `phi` with the cell masses.
    pub fn cell_atoms(phi: &GridDensity) -> Measure<'static> {
        let h = phi.cell_width();
        Measure::Atoms(
            phi.values()
                .iter()
                .enumerate()
                .map(|(i, v)| ((i as f64 + 0.5) * h, v * h))
                .collect(),
        )
    }
}

/// Interval-measuring view: sorted atoms with prefix sums, or a density.
enum Prepared<'a> {
    Atoms { pos: Vec<f64>, cum: Vec<f64> },
    Density(&'a GridDensity),
}

impl<'a> Prepared<'a> {
    fn new(m: &'a Measure<'a>) -> Self {
        match m {
            Measure::Atoms(a) => {
                let mut v = a.clone();
                v.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut cum = Vec::with_capacity(v.len() + 1);
                cum.push(0.0);
                let mut acc = 0.0;
                for (_, w) in &v {
                    acc += w;
                    cum.push(acc);
                }
                Prepared::Atoms {
                    pos: v.into_iter().map(|p| p.0).collect(),
                    cum,
                }
            }
            Measure::Density(d) => Prepared::Density(d),
        }
    }

    /// Measure of `[a, b)` with `0 ≤ a ≤ b ≤ 1`.
    fn plain(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        match self {
            Prepared::Atoms { pos, cum } => {
                let i = pos.partition_point(|&p| p < a);
                let j = if b >= 1.0 {
                    pos.len()
                } else {
                    pos.partition_point(|&p| p < b)
                };
                cum[j] - cum[i]
            }
            Prepared::Density(d) => d.mass_of(a, b.min(1.0)),
        }
    }

    fn total(&self) -> f64 {
        self.plain(0.0, 1.0)
    }

    /// Measure of the arc (circle) or interval `(a, b)` for reals `a < b`.
    fn arc(&self, a: f64, b: f64, circle: bool) -> f64 {
        if b <= a {
            return 0.0;
        }
        if !circle {
            return self.plain(a.max(0.0), b.min(1.0));
        }
        if b - a >= 1.0 {
            return self.total();
        }
        let s = a.rem_euclid(1.0);
        let e = s + (b - a);
        if e <= 1.0 {
            self.plain(s, e)
        } else {
            self.plain(s, 1.0) + self.plain(0.0, e - 1.0)
        }
    }
}

/// `sup_A [μ(A) − ν(A_s)]` over unions `A` of the `b` cover cells, by
/// dynamic programming on the last selected cell.
///
/// On the circle the chain is unrolled from its first selected cell and the
/// overlap of the last neighbourhood with the first one is counted once.
fn worst_union(mu: &Prepared, nu: &Prepared, b: usize, s: f64, circle: bool) -> f64 {
    if circle && s >= 0.5 {
        // every nonempty neighbourhood is the whole circle
        return (mu.total() - nu.total()).max(0.0);
    }
    let w = 1.0 / b as f64;
    let cell_mu: Vec<f64> = (0..b).map(|k| mu.plain(k as f64 * w, (k + 1) as f64 * w)).collect();
    let lo_of = |k: usize| k as f64 * w - s;
    let hi_of = |k: usize| (k + 1) as f64 * w + s;
    let chain = |first: usize| -> f64 {
        let mut dp = vec![f64::NEG_INFINITY; b];
        let mut best: f64 = 0.0;
        for t in 0..b {
            let k = first + t;
            let (lo, hi) = (lo_of(k), hi_of(k));
            let mut v = if t == 0 || !circle {
                cell_mu[k % b] - nu.arc(lo, hi, circle)
            } else {
                f64::NEG_INFINITY
            };
            for u in 0..t {
                if dp[u] > f64::NEG_INFINITY {
                    let prev_hi = hi_of(first + u);
                    v = v.max(dp[u] + cell_mu[k % b] - nu.arc(lo.max(prev_hi), hi, circle));
                }
            }
            dp[t] = v;
            let closed = if circle && t > 0 {
                let wrap_start = lo_of(first) + 1.0;
                let first_end = hi_of(first) + 1.0;
                v + nu.arc(wrap_start, hi.min(first_end), circle)
            } else {
                v
            };
            best = best.max(closed);
        }
        best
    };
    if circle {
        (0..b).map(chain).fold(0.0, f64::max)
    } else {
        chain(0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct LpReport {
    /// smallest grid `s` with `μ(A) ≤ ν(A_s) + s` and `ν(A) ≤ μ(A_s) + s`
    /// for every union `A` of cover cells
    pub estimate: f64,
    /// radius of the cover balls, `1/(2·ball_count)`
    pub ball_radius: f64,
    /// the true distance is at most `estimate + 2·ball_radius`
    pub upper_bound: f64,
    pub s_step: f64,
}

pub const DEFAULT_BALLS: usize = 64;
const LP_STEP: f64 = 1e-3;

/// Lévy–Prokhorov distance estimated over unions of `ball_count` equal
/// cells covering `[0, 1)`.
pub fn lp_distance(mu: &Measure, nu: &Measure, ball_count: usize, domain: Domain) -> Result<LpReport> {
    if ball_count < 8 {
        return Err(invalid("ball_count must be at least 8"));
    }
    if let Measure::Atoms(a) = mu {
        if a.is_empty() {
            return Err(invalid("empty sample"));
        }
    }
    let (pm, pn) = (Prepared::new(mu), Prepared::new(nu));
    let circle = domain == Domain::Circle;
    let ok = |j: usize| -> bool {
        let s = j as f64 * LP_STEP;
        worst_union(&pm, &pn, ball_count, s, circle) <= s + 1e-12
            && worst_union(&pn, &pm, ball_count, s, circle) <= s + 1e-12
    };
    let (mut lo, mut hi) = (0usize, (1.0 / LP_STEP) as usize);
    if ok(0) {
        hi = 0;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let estimate = hi as f64 * LP_STEP;
    let r = 0.5 / ball_count as f64;
    Ok(LpReport {
        estimate,
        ball_radius: r,
        upper_bound: estimate + 2.0 * r,
        s_step: LP_STEP,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_observable_averages_exactly_one() {
        let fam = MapFamily::doubling();
        let gammas = vec![0.02; 999];
        let one = Observable::constant(1.0, 64, Domain::Circle).unwrap();
        let run = birkhoff_averages(&fam, &gammas, 5, &[one], 1000, 3, DEFAULT_DITHER).unwrap();
        for v in &run.observables[0].finals {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn wilson_interval_matches_hand_computation() {
        // p = 0.5, n = 100, z = 1.96: centre 0.5, half-width ≈ 0.0962
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!((lo - 0.4038).abs() < 1e-3 && (hi - 0.5962).abs() < 1e-3);
    }

    #[test]
    fn lln_partial_sum_matches_log_series() {
        let r = lln_summability(1.0, 0.6);
        assert!((r.partial_sums[LLN_TERMS - 1] - r.closed_form).abs() < 1e-12);
        assert_eq!(r.verdict, LlnVerdict::Summable);
        assert_eq!(lln_summability(1.0, 1.0).verdict, LlnVerdict::Inconclusive);
    }

    #[test]
    fn lp_between_two_atoms_is_bracketed_by_their_separation() {
        for &(a, s) in &[(0.3, 0.1), (0.5, 0.2), (0.11, 0.05)] {
            let mu = Measure::Atoms(vec![(a, 1.0)]);
            let nu = Measure::Atoms(vec![(a + s, 1.0)]);
            let r = lp_distance(&mu, &nu, DEFAULT_BALLS, Domain::Interval).unwrap();
            assert!(
                r.estimate >= s / 2.0 && r.estimate <= s + 1e-3,
                "{a} {s} {}",
                r.estimate
            );
        }
    }

    #[test]
    fn lp_self_distance_of_cell_atoms_is_within_a_ball_radius() {
        let phi = GridDensity::from_fn(1024, Domain::Circle, |x| 1.0 + 0.5 * (TAU * x).sin()).unwrap();
        let atoms = Measure::cell_atoms(&phi);
        let r = lp_distance(&atoms, &Measure::Density(&phi), DEFAULT_BALLS, Domain::Circle).unwrap();
        assert!(r.estimate <= r.ball_radius, "{}", r.estimate);
    }

    #[test]
    fn lp_circle_wraps_around() {
        let mu = Measure::Atoms(vec![(0.98, 1.0)]);
        let nu = Measure::Atoms(vec![(0.03, 1.0)]);
        let r = lp_distance(&mu, &nu, DEFAULT_BALLS, Domain::Circle).unwrap();
        assert!(r.estimate <= 0.05 + 1e-3 && r.estimate >= 0.025, "{}", r.estimate);
    }

    #[test]
    fn doubling_covariances_vanish_beyond_lag_zero() {
        let fam = MapFamily::doubling();
        let gammas = vec![0.0; 10];
        let psi = Observable::cosine(256, Domain::Circle, 0.5, 0.05).unwrap();
        let t = covariance_decay(&fam, &gammas, &psi, 10, 4000, 1, DEFAULT_DITHER, UlamScheme::Exact).unwrap();
        assert!((t.r[0][0] - 0.5).abs() < 0.05);
        for k in 1..=10 {
            assert!(t.r[0][k].abs() < 4.0 * t.se[0][k] + 1e-3);
        }
        assert!(t.q < 0.2);
    }
}
