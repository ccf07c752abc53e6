//! Cell-averaged densities on a uniform partition of `[0, 1)`.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::maps::Domain;

/// Piecewise-constant function on `n` equal cells, stored as cell averages.
///
/// A value built through [`GridDensity::new`] is guaranteed nonnegative;
/// signed functions (differences, observables) use [`GridDensity::function`].
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    values: Vec<f64>,
    domain: Domain,
    nonnegative: bool,
    mass: f64,
}

#[derive(Serialize, Deserialize)]
struct DensityFile {
    domain: Domain,
    n_cells: usize,
    values: Vec<f64>,
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 18.0),
    (0.0, 8.0 / 18.0),
    (0.774_596_669_241_483_4, 5.0 / 18.0),
];

impl GridDensity {
    /// Nonnegative density; rejects negative or non-finite values.
    pub fn new(values: Vec<f64>, domain: Domain) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!(
                "density value {v} at cell {i} is not a finite nonnegative number"
            )));
        }
        Self::function(values, domain)
    }

    /// Signed cell function.
    pub fn function(values: Vec<f64>, domain: Domain) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("grid needs at least one cell"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite cell value"));
        }
        Ok(Self::from_parts(values, domain))
    }

    pub(crate) fn from_parts(values: Vec<f64>, domain: Domain) -> Self {
        let nonnegative = values.iter().all(|&v| v >= 0.0);
        let mass = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            values,
            domain,
            nonnegative,
            mass,
        }
    }

    pub fn uniform(n: usize, domain: Domain) -> Self {
        Self::from_parts(vec![1.0; n.max(1)], domain)
    }

    /// Cell averages of `1_[a,b)`, exact for any `a < b` in `[0, 1]`.
    pub fn indicator(n: usize, domain: Domain, a: f64, b: f64) -> Result<Self> {
        if n == 0 || !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a >= b {
            return Err(invalid(format!("indicator of [{a}, {b}) on {n} cells")));
        }
        let h = 1.0 / n as f64;
        let values = (0..n)
            .map(|i| {
                let lo = i as f64 * h;
                let hi = lo + h;
                ((hi.min(b) - lo.max(a)).max(0.0)) / h
            })
            .collect();
        Ok(Self::from_parts(values, domain))
    }

    /// Cell averages of `f` by three-point Gauss–Legendre per cell.
    pub fn from_fn(n: usize, domain: Domain, f: impl Fn(f64) -> f64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("grid needs at least one cell"));
        }
        let h = 1.0 / n as f64;
        let values: Vec<f64> = (0..n)
            .map(|i| {
                let c = (i as f64 + 0.5) * h;
                GAUSS3.iter().map(|&(t, w)| w * f(c + 0.5 * h * t)).sum()
            })
            .collect();
        Self::function(values, domain)
    }

    pub fn n_cells(&self) -> usize {
        self.values.len()
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.cell_width()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// `∫φ dm`
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn is_nonnegative(&self) -> bool {
        self.nonnegative
    }

    pub fn is_probability(&self) -> bool {
        self.nonnegative && (self.mass - 1.0).abs() <= 1e-12
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.n_cells() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self::from_parts(self.values.iter().map(|v| c * v).collect(), self.domain)
    }

    /// Rescales to unit mass.
    pub fn normalized(&self) -> Result<Self> {
        if !(self.mass > 0.0) {
            return Err(Error::Degenerate(format!("cannot normalize mass {}", self.mass)));
        }
        Ok(self.scaled(1.0 / self.mass))
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        check_grid(self, other)?;
        Ok(Self::from_parts(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            self.domain,
        ))
    }

    /// `∫ φ ψ dm` for two cell functions on the same grid.
    pub fn integrate_against(&self, other: &Self) -> Result<f64> {
        check_grid(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(x, y)| x * y).sum::<f64>() / self.n_cells() as f64)
    }

    /// Mass of `[a, b)` under the piecewise-constant density.
    pub fn mass_of(&self, a: f64, b: f64) -> f64 {
        self.cdf(b) - self.cdf(a)
    }

    /// `∫₀ˣ φ dm`, exact for the step function.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.n_cells();
        let x = x.clamp(0.0, 1.0);
        let pos = x * n as f64;
        let k = (pos.floor() as usize).min(n);
        let full: f64 = self.values[..k].iter().sum();
        let partial = if k < n { (pos - k as f64) * self.values[k] } else { 0.0 };
        (full + partial) / n as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,value")?;
        for (i, v) in self.values.iter().enumerate() {
            writeln!(w, "{i},{v:e}")?;
        }
        Ok(())
    }

    /// Reads `index,value` rows (comment lines starting with `#` are skipped).
    pub fn read_csv<R: BufRead>(r: R, domain: Domain) -> Result<Self> {
        let mut values = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("index") {
                continue;
            }
            let (idx, val) = t
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `index,value`", lineno + 1)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            let val: f64 = val
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?;
            if idx != values.len() {
                return Err(Error::Parse(format!(
                    "line {}: expected cell {} but found {idx}",
                    lineno + 1,
                    values.len()
                )));
            }
            values.push(val);
        }
        Self::new(values, domain)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&DensityFile {
            domain: self.domain,
            n_cells: self.n_cells(),
            values: self.values.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: DensityFile = serde_json::from_str(s)?;
        if f.values.len() != f.n_cells {
            return Err(Error::Parse(format!(
                "n_cells = {} but {} values",
                f.n_cells,
                f.values.len()
            )));
        }
        Self::new(f.values, f.domain)
    }
}

pub(crate) fn check_grid(a: &GridDensity, b: &GridDensity) -> Result<()> {
    if a.n_cells() != b.n_cells() {
        return Err(Error::GridMismatch {
            left: a.n_cells(),
            right: b.n_cells(),
        });
    }
    Ok(())
}

/// `‖φ − ψ‖₁`
pub fn l1_distance(phi: &GridDensity, psi: &GridDensity) -> Result<f64> {
    check_grid(phi, psi)?;
    Ok(l1_slices(&phi.values, &psi.values))
}

pub(crate) fn l1_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// `‖φ − ψ‖_∞` over cells.
pub fn sup_distance(phi: &GridDensity, psi: &GridDensity) -> Result<f64> {
    check_grid(phi, psi)?;
    Ok(phi
        .values
        .iter()
        .zip(&psi.values)
        .fold(0.0, |m, (x, y)| m.max((x - y).abs())))
}

/// Random normalized step density with between 1 and `max_pieces` pieces
/// whose breakpoints fall on cell boundaries.
pub fn random_step_density<R: Rng + ?Sized>(n: usize, domain: Domain, max_pieces: usize, rng: &mut R) -> GridDensity {
    let pieces = rng.gen_range(1..=max_pieces.clamp(1, n));
    let mut cuts: Vec<usize> = (0..pieces - 1).map(|_| rng.gen_range(1..n)).collect();
    cuts.push(0);
    cuts.push(n);
    cuts.sort_unstable();
    cuts.dedup();
    let mut values = vec![0.0; n];
    for w in cuts.windows(2) {
        let height = rng.gen_range(0.05..1.0);
        values[w[0]..w[1]].iter_mut().for_each(|v| *v = height);
    }
    let g = GridDensity::from_parts(values, domain);
    g.scaled(1.0 / g.mass())
}

/// Range min/max over cell windows in O(1) after O(n log n) setup; on the
/// circle the array is stored three times so windows can wrap.
struct RangeExtrema {
    n: usize,
    offset: usize,
    circle: bool,
    min: Vec<Vec<f64>>,
    max: Vec<Vec<f64>>,
}

impl RangeExtrema {
    fn new(values: &[f64], circle: bool) -> Self {
        let n = values.len();
        let base: Vec<f64> = if circle {
            values.iter().chain(values).chain(values).copied().collect()
        } else {
            values.to_vec()
        };
        let mut min = vec![base.clone()];
        let mut max = vec![base];
        let mut span = 1;
        while 2 * span <= min[0].len() {
            let (pmin, pmax) = (min.last().unwrap(), max.last().unwrap());
            let len = pmin.len() - span;
            let nmin: Vec<f64> = (0..len).map(|i| pmin[i].min(pmin[i + span])).collect();
            let nmax: Vec<f64> = (0..len).map(|i| pmax[i].max(pmax[i + span])).collect();
            min.push(nmin);
            max.push(nmax);
            span *= 2;
        }
        Self {
            n,
            offset: if circle { n } else { 0 },
            circle,
            min,
            max,
        }
    }

    /// Oscillation over cells `lo..=hi` (signed indices, wrapped or clipped).
    fn osc(&self, lo: isize, hi: isize) -> f64 {
        let n = self.n as isize;
        let (a, b) = if self.circle {
            if hi - lo + 1 >= n {
                (0, n - 1)
            } else {
                let a = lo.rem_euclid(n);
                (a, a + (hi - lo))
            }
        } else {
            (lo.max(0), hi.min(n - 1))
        };
        let (a, b) = ((a + self.offset as isize) as usize, (b + self.offset as isize) as usize);
        let len = b - a + 1;
        let k = (usize::BITS - 1 - len.leading_zeros()) as usize;
        let span = 1usize << k;
        let mx = self.max[k][a].max(self.max[k][b + 1 - span]);
        let mn = self.min[k][a].min(self.min[k][b + 1 - span]);
        mx - mn
    }
}

/// `∫ osc(φ, B_ε(x)) dm(x)`, exact for the step function `φ`.
pub fn osc_integral(phi: &GridDensity, eps: f64) -> Result<f64> {
    let table = RangeExtrema::new(&phi.values, phi.domain == Domain::Circle);
    osc_integral_with(&table, phi.cell_width(), eps)
}

fn osc_integral_with(table: &RangeExtrema, h: f64, eps: f64) -> Result<f64> {
    if !(eps >= h * (1.0 - 1e-12)) {
        return Err(Error::BelowResolution { eps, cell_width: h });
    }
    let n = table.n;
    let r = eps / h;
    let mut m = r.floor();
    let mut f = r - m;
    if f > 1.0 - 1e-12 {
        m += 1.0;
        f = 0.0;
    } else if f < 1e-12 {
        f = 0.0;
    }
    let m = m as isize;
    // fraction of each cell whose ball reaches one extra cell on the left /
    // right / both / neither
    let both = (2.0 * f - 1.0).max(0.0);
    let one_side = f.min(1.0 - f);
    let neither = (1.0 - 2.0 * f).max(0.0);
    let mut total = 0.0;
    for k in 0..n as isize {
        let mut acc = neither * table.osc(k - m, k + m);
        if one_side > 0.0 {
            acc += one_side * (table.osc(k - m - 1, k + m) + table.osc(k - m, k + m + 1));
        }
        if both > 0.0 {
            acc += both * table.osc(k - m - 1, k + m + 1);
        }
        total += acc;
    }
    Ok(total * h)
}

/// Sampled quasi-Hölder seminorm and derived quantities.
#[derive(Clone, Debug, Serialize)]
pub struct SeminormReport {
    pub alpha: f64,
    pub eps0: f64,
    pub eps: Vec<f64>,
    /// `ε^{-α} ∫ osc(φ, B_ε(x)) dm(x)` at each sampled ε
    pub values: Vec<f64>,
    pub seminorm: f64,
    pub l1_norm: f64,
    /// `seminorm + ‖φ‖₁`
    pub norm: f64,
    /// `max{1, ε₀^α}/(2ε₀) · norm`, an upper bound for `ess sup |φ|`
    pub ess_sup_bound: f64,
}

pub const DEFAULT_N_EPS: usize = 16;

/// `|φ|_α` with the supremum over ε taken on a geometric grid from one cell
/// width to `eps0`.
pub fn quasi_holder_seminorm(phi: &GridDensity, alpha: f64, eps0: f64, n_eps: usize) -> Result<SeminormReport> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("Hölder exponent {alpha} outside (0, 1]")));
    }
    if n_eps < 4 {
        return Err(invalid(format!("need at least 4 ε samples, got {n_eps}")));
    }
    let h = phi.cell_width();
    if eps0 < h {
        return Err(Error::BelowResolution {
            eps: eps0,
            cell_width: h,
        });
    }
    let table = RangeExtrema::new(&phi.values, phi.domain == Domain::Circle);
    let ratio = eps0 / h;
    let mut eps = Vec::with_capacity(n_eps);
    let mut values = Vec::with_capacity(n_eps);
    for j in 0..n_eps {
        let e = if j + 1 == n_eps {
            eps0
        } else {
            h * ratio.powf(j as f64 / (n_eps - 1) as f64)
        };
        let v = osc_integral_with(&table, h, e)? / e.powf(alpha);
        eps.push(e);
        values.push(v);
    }
    let seminorm = values.iter().copied().fold(0.0, f64::max);
    let l1 = phi.l1_norm();
    let norm = seminorm + l1;
    Ok(SeminormReport {
        alpha,
        eps0,
        eps,
        values,
        seminorm,
        l1_norm: l1,
        norm,
        ess_sup_bound: 1f64.max(eps0.powf(alpha)) / (2.0 * eps0) * norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn half_indicator(n: usize, domain: Domain) -> GridDensity {
        GridDensity::indicator(n, domain, 0.0, 0.5).unwrap()
    }

    #[test]
    fn l1_examples() {
        let u = GridDensity::uniform(64, Domain::Interval);
        assert_eq!(l1_distance(&u, &u).unwrap(), 0.0);
        let step = half_indicator(64, Domain::Interval).scaled(2.0);
        assert!((l1_distance(&step, &u).unwrap() - 1.0).abs() < 1e-15);
        let other = GridDensity::uniform(32, Domain::Interval);
        assert!(matches!(
            l1_distance(&u, &other),
            Err(Error::GridMismatch { left: 64, right: 32 })
        ));
    }

    #[test]
    fn osc_of_constant_is_zero() {
        let u = GridDensity::uniform(100, Domain::Circle);
        for eps in [0.01, 0.02, 0.05] {
            assert_eq!(osc_integral(&u, eps).unwrap(), 0.0);
        }
    }

    #[test]
    fn osc_of_circle_half_indicator() {
        let phi = half_indicator(1000, Domain::Circle);
        assert!((osc_integral(&phi, 0.01).unwrap() - 0.04).abs() < 1e-12);
        // jumps on cell boundaries make the answer exact for any ε ≥ h
        assert!((osc_integral(&phi, 0.0137).unwrap() - 4.0 * 0.0137).abs() < 1e-12);
    }

    #[test]
    fn osc_of_identity_on_interval() {
        // closed form: ∫ min(x+ε,1) − max(x−ε,0) dx = 2ε − ε²
        let phi = GridDensity::from_fn(4000, Domain::Interval, |x| x).unwrap();
        let got = osc_integral(&phi, 0.01).unwrap();
        assert!((got - 0.0199).abs() < 1e-4, "{got}");
    }

    #[test]
    fn osc_rejects_subcell_radius() {
        let u = GridDensity::uniform(10, Domain::Circle);
        assert!(matches!(osc_integral(&u, 0.05), Err(Error::BelowResolution { .. })));
    }

    #[test]
    fn osc_matches_brute_force() {
        // brute force: integrate osc over a fine sub-grid of ball centres
        let mut rng = substream(3, "osc", 0);
        for domain in [Domain::Circle, Domain::Interval] {
            let phi = random_step_density(40, domain, 8, &mut rng);
            for eps in [0.025, 0.031, 0.0625, 0.2] {
                let sub = 4000;
                let mut acc = 0.0;
                for s in 0..sub {
                    let x = (s as f64 + 0.5) / sub as f64;
                    let (mut mx, mut mn) = (f64::NEG_INFINITY, f64::INFINITY);
                    for (i, &v) in phi.values().iter().enumerate() {
                        let (a, b) = (i as f64 / 40.0, (i + 1) as f64 / 40.0);
                        let hit = [-1.0, 0.0, 1.0].iter().any(|&k: &f64| {
                            if domain == Domain::Interval && k != 0.0 {
                                return false;
                            }
                            a + k < x + eps && b + k > x - eps
                        });
                        if hit {
                            mx = mx.max(v);
                            mn = mn.min(v);
                        }
                    }
                    acc += mx - mn;
                }
                let brute = acc / sub as f64;
                let exact = osc_integral(&phi, eps).unwrap();
                assert!(
                    (brute - exact).abs() < 2e-3 * (1.0 + exact),
                    "{domain:?} ε={eps}: {brute} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn seminorm_examples() {
        let u = GridDensity::uniform(1000, Domain::Circle);
        let r = quasi_holder_seminorm(&u, 0.5, 0.05, 16).unwrap();
        assert_eq!(r.seminorm, 0.0);
        assert!((r.norm - 1.0).abs() < 1e-15);

        let phi = half_indicator(1000, Domain::Circle);
        let r = quasi_holder_seminorm(&phi, 0.5, 0.05, 16).unwrap();
        let expected = 4.0 * 0.05f64.sqrt();
        assert!((r.seminorm - expected).abs() < 1e-9, "{}", r.seminorm);
        assert!(r.values.iter().all(|&v| v <= r.seminorm));
        assert!(quasi_holder_seminorm(&phi, 0.5, 0.05, 3).is_err());
        assert!(quasi_holder_seminorm(&phi, 1.5, 0.05, 8).is_err());
    }

    #[test]
    fn lipschitz_seminorm_bound() {
        // |φ|_1 ≤ 2K for a K-Lipschitz φ, checked at two resolutions
        let k = 0.8;
        for n in [512, 2048] {
            let phi = GridDensity::from_fn(n, Domain::Circle, |x| {
                1.0 + k / std::f64::consts::TAU * (std::f64::consts::TAU * x).sin()
            })
            .unwrap();
            let r = quasi_holder_seminorm(&phi, 1.0, 0.05, 16).unwrap();
            assert!(r.seminorm <= 2.0 * k + 5.0 / n as f64, "{n}: {}", r.seminorm);
        }
    }

    #[test]
    fn ess_sup_bound_holds_for_test_densities() {
        let mut rng = substream(11, "ess", 0);
        for _ in 0..30 {
            let phi = random_step_density(256, Domain::Interval, 12, &mut rng);
            let r = quasi_holder_seminorm(&phi, 0.7, 0.05, 12).unwrap();
            assert!(phi.max_value() <= r.ess_sup_bound);
        }
    }

    #[test]
    fn refinement_consistency() {
        let f = |x: f64| 1.0 + 0.5 * (std::f64::consts::TAU * x).cos();
        let coarse = GridDensity::from_fn(500, Domain::Circle, f).unwrap();
        let fine = GridDensity::from_fn(1000, Domain::Circle, f).unwrap();
        let (a, b) = (osc_integral(&coarse, 0.02).unwrap(), osc_integral(&fine, 0.02).unwrap());
        assert!((a - b).abs() < 0.05 * b);
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let phi = half_indicator(8, Domain::Circle).scaled(2.0);
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        let back = GridDensity::read_csv(&buf[..], Domain::Circle).unwrap();
        assert_eq!(back, phi);
        let back = GridDensity::from_json(&phi.to_json().unwrap()).unwrap();
        assert_eq!(back, phi);
        assert!(GridDensity::read_csv("index,value\n0,1\n1,-2\n".as_bytes(), Domain::Circle).is_err());
        assert!(GridDensity::from_json(r#"{"domain":"circle","n_cells":3,"values":[1,1]}"#).is_err());
    }

    #[test]
    fn cdf_is_exact() {
        let phi = half_indicator(10, Domain::Interval).scaled(2.0);
        assert!((phi.cdf(0.25) - 0.5).abs() < 1e-15);
        assert!((phi.mass_of(0.4, 0.6) - 0.2).abs() < 1e-15);
        assert_eq!(phi.cdf(1.0), 1.0);
    }
}
