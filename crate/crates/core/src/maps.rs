//! Parameterized families of expanding and piecewise expanding maps of `[0, 1)`.
//!
//! Every family is described by a *lift*: a finite list of pieces on which the
//! map is a monotone C¹ function with values in ℝ. The realized map is the lift
//! reduced mod 1. A [`MapInstance`] splits each lift piece further wherever the
//! lift crosses an integer, so that every [`Branch`] is a continuous monotone
//! map from its domain into `[0, 1]`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const INVERSE_TOL: f64 = 1e-13;

/// Ambient geometry of `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// `[0, 1)` with `0 ≡ 1` and the wrap-around metric.
    Circle,
    /// `[0, 1)` with the Euclidean metric.
    Interval,
}

impl Domain {
    pub fn distance(self, x: f64, y: f64) -> f64 {
        let d = (x - y).abs();
        match self {
            Domain::Circle => d.min((1.0 - d).abs()),
            Domain::Interval => d,
        }
    }
}

/// Closed-form lift of one monotone piece.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LiftFn {
    /// `slope·x + offset`
    Linear { slope: f64, offset: f64 },
    /// `linear·x + coeff·x^(1+kappa) + offset`, for `x ≥ 0`
    Power {
        linear: f64,
        coeff: f64,
        kappa: f64,
        offset: f64,
    },
    /// `slope·x + amplitude·sin(2πx)/(2π)`
    Sine { slope: f64, amplitude: f64 },
}

#[inline]
fn pow_kappa(x: f64, kappa: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if kappa == 0.5 {
        x.sqrt()
    } else {
        x.powf(kappa)
    }
}

impl LiftFn {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            LiftFn::Linear { slope, offset } => slope * x + offset,
            LiftFn::Power {
                linear,
                coeff,
                kappa,
                offset,
            } => linear * x + coeff * x * pow_kappa(x, kappa) + offset,
            LiftFn::Sine { slope, amplitude } => slope * x + amplitude * (TAU * x).sin() / TAU,
        }
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        match *self {
            LiftFn::Linear { slope, .. } => slope,
            LiftFn::Power {
                linear, coeff, kappa, ..
            } => linear + coeff * (1.0 + kappa) * pow_kappa(x, kappa),
            LiftFn::Sine { slope, amplitude } => slope + amplitude * (TAU * x).cos(),
        }
    }
}

/// A monotone piece `[start, end)` of a lift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LiftPiece {
    pub start: f64,
    pub end: f64,
    pub lift: LiftFn,
}

/// One branch `F⁽ⁱ⁾` of a realized map: a continuous monotone map from
/// `[start, end)` into `[0, 1]`, extended by its closed-form lift.
#[derive(Clone, Debug)]
pub struct Branch {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    lift: LiftFn,
    shift: f64,
    increasing: bool,
}

impl Branch {
    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        self.lift.value(x) - self.shift
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        self.lift.deriv(x)
    }

    pub fn is_increasing(&self) -> bool {
        self.increasing
    }

    pub fn lift(&self) -> LiftFn {
        self.lift
    }

    pub fn contains(&self, x: f64) -> bool {
        self.start <= x && x < self.end
    }

    pub fn len(&self) -> f64 {
        self.end - self.start
    }

    /// Closure of the image, clamped to `[0, 1]`.
    pub fn image(&self) -> (f64, f64) {
        let a = self.forward(self.start);
        let b = self.forward(self.end);
        (a.min(b).clamp(0.0, 1.0), a.max(b).clamp(0.0, 1.0))
    }

    /// Smallest `|F'|` over the branch, sampled.
    pub fn min_expansion(&self) -> f64 {
        sample_points(self.start, self.end, 65)
            .map(|x| self.deriv(x).abs())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn inverse(&self, y: f64) -> Result<f64> {
        self.inverse_near(y, None)
    }

    /// Inverse branch by closed form (linear lifts) or bracketed Newton.
    pub(crate) fn inverse_near(&self, y: f64, guess: Option<f64>) -> Result<f64> {
        let target = y + self.shift;
        if let LiftFn::Linear { slope, offset } = self.lift {
            return Ok(((target - offset) / slope).clamp(self.start, self.end));
        }
        let sign = if self.increasing { 1.0 } else { -1.0 };
        let g = |x: f64| sign * (self.lift.value(x) - target);
        let (mut lo, mut hi) = (self.start, self.end);
        let (glo, ghi) = (g(lo), g(hi));
        if glo >= 0.0 {
            return Ok(lo);
        }
        if ghi <= 0.0 {
            return Ok(hi);
        }
        let mut x = match guess {
            Some(x0) if x0 > lo && x0 < hi => x0,
            _ => lo + (hi - lo) * (-glo) / (ghi - glo),
        };
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return Ok(x);
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= INVERSE_TOL {
                return Ok(0.5 * (lo + hi));
            }
            let d = sign * self.lift.deriv(x);
            let mut next = x - gx / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-14 {
                return Ok(next);
            }
            x = next;
        }
        Err(Error::RootFinding {
            branch: self.index,
            residual: g(x).abs(),
        })
    }

    /// Inverse extended past the image by linear extrapolation at the nearer
    /// endpoint; used for ε-neighbourhoods of image boundaries.
    fn inverse_extended(&self, y: f64) -> Result<f64> {
        let (fa, fb) = (self.forward(self.start), self.forward(self.end));
        let (lo, hi) = (fa.min(fb), fa.max(fb));
        if y >= lo && y <= hi {
            return self.inverse(y);
        }
        let endpoint = if (y - fa).abs() <= (y - fb).abs() {
            self.start
        } else {
            self.end
        };
        Ok(endpoint + (y - self.forward(endpoint)) / self.deriv(endpoint))
    }
}

fn sample_points(a: f64, b: f64, n: usize) -> impl Iterator<Item = f64> {
    // endpoint b is approached but excluded (half-open domains)
    (0..n).map(move |k| a + (b - a) * (k as f64) / (n as f64))
}

/// Built-in parameterized families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum FamilyKind {
    /// `(2+γ)x mod 1`
    Doubling,
    /// Two full linear branches with breakpoint `1/2 + γ`.
    PiecewiseLinear,
    /// `2(1−γ)·min(x, 1−x)`
    Tent,
    /// `x + x^(1+κ) + γx mod 1`
    PomeauManneville { kappa: f64 },
    /// `x(1 + 2^κ x^κ) + γx` on `[0,1/2)`, `2x − 1 + γx` on `[1/2,1)`, mod 1.
    Lsv { kappa: f64 },
    /// `2x + γ·sin(2πx)/(2π) mod 1`, a smooth degree-two circle map.
    SmoothCircle,
}

/// A family `{F_γ}` together with its declared parameter range and scales.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapFamily {
    pub kind: FamilyKind,
    pub gamma_range: (f64, f64),
    pub eps0: f64,
    pub alpha: f64,
    pub domain: Domain,
}

pub const DEFAULT_EPS0: f64 = 0.05;
pub const DEFAULT_GAMMA_MIN: f64 = 1e-3;

impl MapFamily {
    fn with_kind(kind: FamilyKind, gamma_range: (f64, f64), alpha: f64, domain: Domain) -> Self {
        Self {
            kind,
            gamma_range,
            eps0: DEFAULT_EPS0,
            alpha,
            domain,
        }
    }

    pub fn doubling() -> Self {
        Self::with_kind(FamilyKind::Doubling, (-0.5, 0.5), 1.0, Domain::Circle)
    }

    pub fn piecewise_linear() -> Self {
        Self::with_kind(FamilyKind::PiecewiseLinear, (-0.3, 0.3), 1.0, Domain::Interval)
    }

    pub fn tent() -> Self {
        Self::with_kind(FamilyKind::Tent, (0.0, 0.45), 1.0, Domain::Interval)
    }

    pub fn pomeau_manneville(kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self::with_kind(
            FamilyKind::PomeauManneville { kappa },
            (DEFAULT_GAMMA_MIN, 0.5),
            kappa,
            Domain::Circle,
        ))
    }

    pub fn lsv(kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Self::with_kind(
            FamilyKind::Lsv { kappa },
            (DEFAULT_GAMMA_MIN, 0.5),
            kappa,
            Domain::Circle,
        ))
    }

    pub fn smooth_circle() -> Self {
        Self::with_kind(FamilyKind::SmoothCircle, (-0.9, 0.9), 1.0, Domain::Circle)
    }

    /// Looks a family up by its short name (`doubling`, `pl`, `tent`, `pm`,
    /// `lsv`, `circle`).
    pub fn by_name(name: &str, kappa: f64) -> Result<Self> {
        match name {
            "doubling" => Ok(Self::doubling()),
            "pl" | "piecewise_linear" => Ok(Self::piecewise_linear()),
            "tent" => Ok(Self::tent()),
            "pm" | "pomeau_manneville" => Self::pomeau_manneville(kappa),
            "lsv" => Self::lsv(kappa),
            "circle" | "smooth_circle" => Ok(Self::smooth_circle()),
            other => Err(invalid(format!("unknown map family `{other}`"))),
        }
    }

    pub fn with_gamma_range(mut self, lo: f64, hi: f64) -> Self {
        self.gamma_range = (lo, hi);
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_eps0(mut self, eps0: f64) -> Self {
        self.eps0 = eps0;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Doubling => "doubling",
            FamilyKind::PiecewiseLinear => "piecewise_linear",
            FamilyKind::Tent => "tent",
            FamilyKind::PomeauManneville { .. } => "pomeau_manneville",
            FamilyKind::Lsv { .. } => "lsv",
            FamilyKind::SmoothCircle => "smooth_circle",
        }
    }

    pub fn kappa(&self) -> Option<f64> {
        match self.kind {
            FamilyKind::PomeauManneville { kappa } | FamilyKind::Lsv { kappa } => Some(kappa),
            _ => None,
        }
    }

    pub fn contains_param(&self, gamma: f64) -> bool {
        gamma >= self.gamma_range.0 && gamma <= self.gamma_range.1
    }

    pub fn lift_pieces(&self, gamma: f64) -> Vec<LiftPiece> {
        let piece = |start, end, lift| LiftPiece { start, end, lift };
        match self.kind {
            FamilyKind::Doubling => vec![piece(
                0.0,
                1.0,
                LiftFn::Linear {
                    slope: 2.0 + gamma,
                    offset: 0.0,
                },
            )],
            FamilyKind::PiecewiseLinear => {
                let c = 0.5 + gamma;
                vec![
                    piece(
                        0.0,
                        c,
                        LiftFn::Linear {
                            slope: 1.0 / c,
                            offset: 0.0,
                        },
                    ),
                    piece(
                        c,
                        1.0,
                        LiftFn::Linear {
                            slope: 1.0 / (1.0 - c),
                            offset: -c / (1.0 - c),
                        },
                    ),
                ]
            }
            FamilyKind::Tent => {
                let s = 2.0 * (1.0 - gamma);
                vec![
                    piece(0.0, 0.5, LiftFn::Linear { slope: s, offset: 0.0 }),
                    piece(0.5, 1.0, LiftFn::Linear { slope: -s, offset: s }),
                ]
            }
            FamilyKind::PomeauManneville { kappa } => vec![piece(
                0.0,
                1.0,
                LiftFn::Power {
                    linear: 1.0 + gamma,
                    coeff: 1.0,
                    kappa,
                    offset: 0.0,
                },
            )],
            FamilyKind::Lsv { kappa } => vec![
                piece(
                    0.0,
                    0.5,
                    LiftFn::Power {
                        linear: 1.0 + gamma,
                        coeff: 2f64.powf(kappa),
                        kappa,
                        offset: 0.0,
                    },
                ),
                piece(
                    0.5,
                    1.0,
                    LiftFn::Linear {
                        slope: 2.0 + gamma,
                        offset: -1.0,
                    },
                ),
            ],
            FamilyKind::SmoothCircle => vec![piece(
                0.0,
                1.0,
                LiftFn::Sine {
                    slope: 2.0,
                    amplitude: gamma,
                },
            )],
        }
    }

    /// Point evaluation of `F_γ` without building branches; used on orbits.
    #[inline]
    pub fn eval(&self, gamma: f64, x: f64) -> f64 {
        let v = match self.kind {
            FamilyKind::Doubling => (2.0 + gamma) * x,
            FamilyKind::PiecewiseLinear => {
                let c = 0.5 + gamma;
                if x < c {
                    x / c
                } else {
                    (x - c) / (1.0 - c)
                }
            }
            FamilyKind::Tent => 2.0 * (1.0 - gamma) * x.min(1.0 - x),
            FamilyKind::PomeauManneville { kappa } => (1.0 + gamma) * x + x * pow_kappa(x, kappa),
            FamilyKind::Lsv { kappa } => {
                if x < 0.5 {
                    (1.0 + gamma) * x + 2f64.powf(kappa) * x * pow_kappa(x, kappa)
                } else {
                    (2.0 + gamma) * x - 1.0
                }
            }
            FamilyKind::SmoothCircle => 2.0 * x + gamma * (TAU * x).sin() / TAU,
        };
        wrap_unit(v)
    }

    /// Realizes `F_γ`, rejecting parameters outside the declared expanding
    /// range or maps that fail to expand.
    pub fn instantiate(&self, gamma: f64) -> Result<MapInstance> {
        if !gamma.is_finite() || !self.contains_param(gamma) {
            return Err(Error::Hypothesis {
                hypothesis: "ME4",
                detail: format!(
                    "{}: γ = {gamma} outside the declared expanding range [{}, {}]",
                    self.name(),
                    self.gamma_range.0,
                    self.gamma_range.1
                ),
            });
        }
        let map = self.build(gamma, true)?;
        let min_exp = map.min_expansion();
        if min_exp <= 1.0 {
            return Err(Error::Hypothesis {
                hypothesis: "ME4",
                detail: format!("{}: γ = {gamma} gives min |F'| = {min_exp:.6} ≤ 1", self.name()),
            });
        }
        Ok(map)
    }

    /// Realizes `F_γ` without the expansion check. Needed for deliberately
    /// non-expanding members such as `f_{-ε}` with an attracting fixed point.
    pub fn instantiate_unchecked(&self, gamma: f64) -> Result<MapInstance> {
        if !gamma.is_finite() {
            return Err(invalid("non-finite parameter"));
        }
        self.build(gamma, false)
    }

    fn build(&self, gamma: f64, checked: bool) -> Result<MapInstance> {
        let mut branches = Vec::new();
        for piece in self.lift_pieces(gamma) {
            if !(piece.end > piece.start) {
                return Err(invalid(format!("{}: empty lift piece at γ = {gamma}", self.name())));
            }
            let lift = piece.lift;
            let increasing = lift.value(piece.end) > lift.value(piece.start);
            let (a, b) = (lift.value(piece.start), lift.value(piece.end));
            let (lo, hi) = (a.min(b), a.max(b));
            // integer crossings strictly inside the piece's image
            let mut cuts = Vec::new();
            let mut m = lo.floor() + 1.0;
            while m < hi {
                let proto = Branch {
                    index: usize::MAX,
                    start: piece.start,
                    end: piece.end,
                    lift,
                    shift: 0.0,
                    increasing,
                };
                cuts.push(proto.inverse_near(m, None)?);
                m += 1.0;
            }
            if !increasing {
                cuts.reverse();
            }
            let mut edges = Vec::with_capacity(cuts.len() + 2);
            edges.push(piece.start);
            edges.extend(cuts.into_iter().filter(|&c| c > piece.start && c < piece.end));
            edges.push(piece.end);
            for w in edges.windows(2) {
                let (s, e) = (w[0], w[1]);
                if e - s <= 0.0 {
                    continue;
                }
                let shift = lift.value(0.5 * (s + e)).floor();
                branches.push(Branch {
                    index: branches.len(),
                    start: s,
                    end: e,
                    lift,
                    shift,
                    increasing,
                });
            }
        }
        Ok(MapInstance {
            family: self.clone(),
            gamma,
            branches,
            checked,
        })
    }
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("κ must lie in (0, 1), got {kappa}")))
    }
}

#[inline]
pub(crate) fn wrap_unit(v: f64) -> f64 {
    let r = v.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// A realized member `F_γ` of a family.
#[derive(Clone, Debug)]
pub struct MapInstance {
    family: MapFamily,
    gamma: f64,
    branches: Vec<Branch>,
    checked: bool,
}

/// A preimage `y` of a point together with `1/|F'(y)|`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preimage {
    pub branch: usize,
    pub y: f64,
    pub jac_inv: f64,
}

impl MapInstance {
    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn domain(&self) -> Domain {
        self.family.domain
    }

    /// `false` when built through [`MapFamily::instantiate_unchecked`].
    pub fn is_checked(&self) -> bool {
        self.checked
    }

    pub fn branch_at(&self, x: f64) -> Option<&Branch> {
        let idx = self.branches.partition_point(|b| b.start <= x);
        idx.checked_sub(1).map(|i| &self.branches[i]).filter(|b| b.contains(x))
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self.branch_at(x) {
            Some(b) => wrap_unit(b.forward(x)),
            None => self.family.eval(self.gamma, x),
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        self.branch_at(x).map(|b| b.deriv(x)).unwrap_or(f64::NAN)
    }

    pub fn min_expansion(&self) -> f64 {
        self.branches
            .iter()
            .map(Branch::min_expansion)
            .fold(f64::INFINITY, f64::min)
    }

    /// `s_γ = sup 1/|F'|`.
    pub fn contraction_factor(&self) -> f64 {
        1.0 / self.min_expansion()
    }

    /// All `y` with `F(y) = x`, one per branch whose image contains `x`.
    pub fn preimages(&self, x: f64) -> Result<Vec<Preimage>> {
        if !(0.0..1.0).contains(&x) {
            return Err(invalid(format!("point {x} outside [0, 1)")));
        }
        let mut out = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            let (lo, hi) = b.image();
            if x < lo || x >= hi {
                continue;
            }
            let y = b.inverse(x)?;
            let residual = (b.forward(y) - x).abs();
            if residual > 1e-10 {
                return Err(Error::RootFinding {
                    branch: b.index,
                    residual,
                });
            }
            out.push(Preimage {
                branch: b.index,
                y,
                jac_inv: 1.0 / b.deriv(y).abs(),
            });
        }
        Ok(out)
    }
}

/// Per-pair regularity diagnostics for two members of a family.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub gamma1: f64,
    pub gamma2: f64,
    pub branch_count: usize,
    /// `sup |F⁽ⁱ⁾_{γ₁} − F⁽ⁱ⁾_{γ₂}|` over the sampled grid.
    pub c1_value_distance: f64,
    /// `sup |F⁽ⁱ⁾'_{γ₁} − F⁽ⁱ⁾'_{γ₂}|` over the sampled grid.
    pub c1_derivative_distance: f64,
    /// max of the two components above
    pub c1_distance: f64,
    /// `Σᵢ m(U⁽ⁱ⁾_{γ₁} △ U⁽ⁱ⁾_{γ₂})`
    pub symmetric_difference: f64,
    pub branch_symmetric_differences: Vec<f64>,
    /// empirical Hölder distortion constant of the inverse Jacobian
    pub distortion_constant: f64,
    pub contraction: (f64, f64),
}

/// Compares two members of a family branch by branch.
pub fn validate_family(family: &MapFamily, gamma1: f64, gamma2: f64, grid: usize) -> Result<ValidationReport> {
    if grid < 2 {
        return Err(invalid("validation grid needs at least 2 points"));
    }
    let m1 = family.instantiate(gamma1)?;
    let m2 = family.instantiate(gamma2)?;
    if m1.branch_count() != m2.branch_count() {
        return Err(Error::BranchCountMismatch {
            left: m1.branch_count(),
            right: m2.branch_count(),
        });
    }
    let mut value_dist: f64 = 0.0;
    let mut deriv_dist: f64 = 0.0;
    let mut symdiffs = Vec::with_capacity(m1.branch_count());
    for (b1, b2) in m1.branches.iter().zip(&m2.branches) {
        let lo = b1.start.min(b2.start);
        let hi = b1.end.max(b2.end);
        for k in 0..grid {
            let x = k as f64 / grid as f64;
            if x < lo || x >= hi {
                continue;
            }
            value_dist = value_dist.max((b1.forward(x) - b2.forward(x)).abs());
            deriv_dist = deriv_dist.max((b1.deriv(x) - b2.deriv(x)).abs());
        }
        let overlap = (b1.end.min(b2.end) - b1.start.max(b2.start)).max(0.0);
        symdiffs.push(b1.len() + b2.len() - 2.0 * overlap);
    }
    let distortion =
        distortion_constant(&m1, family.alpha, family.eps0)?.max(distortion_constant(&m2, family.alpha, family.eps0)?);
    Ok(ValidationReport {
        gamma1,
        gamma2,
        branch_count: m1.branch_count(),
        c1_value_distance: value_dist,
        c1_derivative_distance: deriv_dist,
        c1_distance: value_dist.max(deriv_dist),
        symmetric_difference: symdiffs.iter().sum(),
        branch_symmetric_differences: symdiffs,
        distortion_constant: distortion,
        contraction: (m1.contraction_factor(), m2.contraction_factor()),
    })
}

/// Smallest sampled `c` with `|J(x) − J(y)| ≤ c·J(z)·ε^α` for `x, y ∈ B_ε(z)`,
/// where `J = |det D F⁻¹|` on the branch image.
fn distortion_constant(map: &MapInstance, alpha: f64, eps0: f64) -> Result<f64> {
    let mut c: f64 = 0.0;
    for b in map.branches() {
        let (lo, hi) = b.image();
        let jac = |y: f64| -> Result<f64> { Ok(1.0 / b.deriv(b.inverse(y)?).abs()) };
        for eps in [eps0 / 8.0, eps0 / 4.0, eps0 / 2.0, eps0] {
            for z in sample_points(lo, hi, 33) {
                let x = (z - eps).max(lo);
                let y = (z + eps).min(hi);
                let jz = jac(z)?;
                let diff = (jac(x)? - jac(y)?).abs();
                c = c.max(diff / (jz * eps.powf(alpha)));
            }
        }
    }
    Ok(c)
}

/// Boundary-complexity profile `G(ε)` and the resulting expansion budget.
#[derive(Clone, Debug, Serialize)]
pub struct BoundaryComplexity {
    pub eps: Vec<f64>,
    pub g: Vec<f64>,
    pub alpha: f64,
    pub contraction: f64,
    /// `max_δ [ s^α + 2·max_{ε≤δ} G(ε)/ε^α · δ^α ]` over the sampled scales.
    pub expression: f64,
    pub satisfied: bool,
}

/// Estimates `G(ε) = sup_x Σᵢ m(F⁽ⁱ⁾⁻¹(B_ε(∂F⁽ⁱ⁾U⁽ⁱ⁾)) ∩ B_r(x)) / m(B_r(x))`
/// with `r = (1 − s)ε`, the ball centred at `x` in both places.
pub fn boundary_complexity(map: &MapInstance, eps_list: &[f64], alpha: f64) -> Result<BoundaryComplexity> {
    if eps_list.is_empty() {
        return Err(invalid("boundary complexity needs at least one ε"));
    }
    let eps0 = map.family().eps0;
    if let Some(bad) = eps_list.iter().find(|&&e| !(e > 0.0 && e <= eps0)) {
        return Err(invalid(format!("ε = {bad} outside (0, ε₀ = {eps0}]")));
    }
    let mut eps: Vec<f64> = eps_list.to_vec();
    eps.sort_by(f64::total_cmp);
    let s = map.contraction_factor();
    let circle = map.domain() == Domain::Circle;
    let mut g = Vec::with_capacity(eps.len());
    for &e in &eps {
        let r = (1.0 - s) * e;
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for b in map.branches() {
            let (lo, hi) = b.image();
            if circle && lo <= 1e-12 && hi >= 1.0 - 1e-12 {
                continue;
            }
            let mut own: Vec<(f64, f64)> = Vec::new();
            for p in [lo, hi] {
                let u = b.inverse_extended(p - e)?;
                let v = b.inverse_extended(p + e)?;
                own.push((u.min(v), u.max(v)));
            }
            intervals.extend(merge_intervals(own));
        }
        if intervals.is_empty() {
            g.push(0.0);
            continue;
        }
        let overlap_at = |x: f64| -> f64 {
            let (a, bnd) = (x - r, x + r);
            intervals
                .iter()
                .map(|&(p, q)| {
                    let shifts: &[f64] = if circle { &[-1.0, 0.0, 1.0] } else { &[0.0] };
                    shifts
                        .iter()
                        .map(|k| ((q + k).min(bnd) - (p + k).max(a)).max(0.0))
                        .sum::<f64>()
                })
                .sum()
        };
        let mut best: f64 = 0.0;
        for &(p, q) in &intervals {
            for c in [p - r, p + r, q - r, q + r, 0.5 * (p + q)] {
                best = best.max(overlap_at(c));
            }
        }
        g.push(best / (2.0 * r));
    }
    let s_alpha = s.powf(alpha);
    let mut expression = s_alpha;
    let mut running: f64 = 0.0;
    for (k, &delta) in eps.iter().enumerate() {
        running = running.max(g[k] / eps[k].powf(alpha));
        expression = expression.max(s_alpha + 2.0 * running * delta.powf(alpha));
    }
    Ok(BoundaryComplexity {
        eps,
        g,
        alpha,
        contraction: s,
        expression,
        satisfied: expression < 1.0,
    })
}

fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let flo = f(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (f(mid) > 0.0) == (flo > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn doubling_has_two_slope_two_branches() {
        let map = MapFamily::doubling().instantiate(0.0).unwrap();
        assert_eq!(map.branch_count(), 2);
        for b in map.branches() {
            assert_eq!(b.deriv(0.3), 2.0);
        }
        assert_eq!(map.branches()[0].end, 0.5);
    }

    #[test]
    fn pm_expanding_regime() {
        let fam = MapFamily::pomeau_manneville(0.5).unwrap();
        let map = fam.instantiate(0.1).unwrap();
        assert!(map.min_expansion() >= 1.1 - 1e-12);
        match fam.instantiate(-0.05) {
            Err(Error::Hypothesis { hypothesis, .. }) => assert_eq!(hypothesis, "ME4"),
            other => panic!("expected ME4 rejection, got {other:?}"),
        }
        // the unchecked path accepts it and the map really contracts at 0
        let bad = fam.instantiate_unchecked(-0.05).unwrap();
        assert!((bad.deriv(0.0) - 0.95).abs() < 1e-15);
        assert!(!bad.is_checked());
    }

    #[test]
    fn widened_range_still_checks_expansion() {
        let fam = MapFamily::pomeau_manneville(0.5).unwrap().with_gamma_range(-0.2, 0.5);
        assert!(matches!(
            fam.instantiate(-0.05),
            Err(Error::Hypothesis { hypothesis: "ME4", .. })
        ));
    }

    #[test]
    fn doubling_preimages() {
        let map = MapFamily::doubling().instantiate(0.0).unwrap();
        let pre = map.preimages(0.5).unwrap();
        assert_eq!(pre.len(), 2);
        assert_eq!((pre[0].y, pre[0].jac_inv), (0.25, 0.5));
        assert_eq!((pre[1].y, pre[1].jac_inv), (0.75, 0.5));
    }

    #[test]
    fn pm_fixed_point_preimage() {
        let map = MapFamily::pomeau_manneville(0.5).unwrap().instantiate(0.1).unwrap();
        let pre = map.preimages(0.0).unwrap();
        let at_zero = pre.iter().find(|p| p.y == 0.0).expect("0 is a preimage of 0");
        assert!((at_zero.jac_inv - 1.0 / 1.1).abs() < 1e-15);
        assert!(pre.len() <= map.branch_count());
    }

    #[test]
    fn lsv_preimages_match_bisection() {
        let fam = MapFamily::lsv(0.5).unwrap();
        let map = fam.instantiate_unchecked(0.0).unwrap();
        assert_eq!(map.branch_count(), 2);
        for &x in &[0.013, 0.25, 0.5, 0.77, 0.999] {
            let pre = map.preimages(x).unwrap();
            assert_eq!(pre.len(), 2);
            for p in &pre {
                assert!((map.eval(p.y) - x).abs() < 1e-12);
                let b = &map.branches()[p.branch];
                let oracle = bisect(|y| b.forward(y) - x, b.start, b.end);
                assert!((oracle - p.y).abs() < 1e-12, "{oracle} vs {}", p.y);
            }
        }
    }

    #[test]
    fn preimage_roundtrip_all_families() {
        let fams = [
            MapFamily::doubling(),
            MapFamily::piecewise_linear(),
            MapFamily::tent(),
            MapFamily::pomeau_manneville(0.3).unwrap(),
            MapFamily::lsv(0.7).unwrap(),
            MapFamily::smooth_circle(),
        ];
        for fam in &fams {
            let (lo, hi) = fam.gamma_range;
            for gamma in [lo + 0.01, 0.5 * (lo + hi), hi - 0.01] {
                let map = fam.instantiate(gamma).unwrap();
                assert!(map.min_expansion() > 1.0);
                for k in 0..97 {
                    let x = (k as f64 + 0.37) / 97.0;
                    for p in map.preimages(x).unwrap() {
                        let back = map.branches()[p.branch].forward(p.y);
                        assert!((back - x).abs() < 1e-10, "{} γ={gamma} x={x}", fam.name());
                        assert!((map.eval(p.y) - x).abs() < 1e-10 || map.eval(p.y) < 1e-10);
                    }
                }
            }
        }
    }

    #[test]
    fn fast_eval_matches_branches() {
        let fam = MapFamily::lsv(0.5).unwrap();
        let map = fam.instantiate(0.2).unwrap();
        for k in 0..1000 {
            let x = k as f64 / 1000.0;
            assert!((map.eval(x) - fam.eval(0.2, x)).abs() < 1e-14);
        }
    }

    #[test]
    fn validate_identical_members() {
        let r = validate_family(&MapFamily::doubling(), 0.0, 0.0, 1000).unwrap();
        assert_eq!(r.c1_distance, 0.0);
        assert_eq!(r.symmetric_difference, 0.0);
        let r = validate_family(&MapFamily::pomeau_manneville(0.5).unwrap(), 0.1, 0.1, 500).unwrap();
        assert_eq!(r.c1_distance, 0.0);
        assert_eq!(r.symmetric_difference, 0.0);
    }

    #[test]
    fn validate_doubling_slopes() {
        // γ = 0.01 and 0.03 have the same branch count (three)
        let r = validate_family(&MapFamily::doubling(), 0.01, 0.03, 1000).unwrap();
        assert!((r.c1_derivative_distance - 0.02).abs() < 1e-12);
        // sup over grid x ≤ 0.999 of 0.02·x
        assert!((r.c1_value_distance - 0.02 * 0.999).abs() < 1e-12);
        assert!((r.c1_distance - 0.02).abs() < 1e-12);
        assert_eq!(r.distortion_constant, 0.0);
    }

    #[test]
    fn validate_rejects_branch_count_change() {
        assert!(matches!(
            validate_family(&MapFamily::doubling(), 0.0, 0.02, 100),
            Err(Error::BranchCountMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn moving_breakpoint_symmetric_difference() {
        let r = validate_family(&MapFamily::piecewise_linear(), 0.0, 0.01, 200).unwrap();
        assert!((r.symmetric_difference - 0.02).abs() < 1e-12);
        for d in &r.branch_symmetric_differences {
            assert!((d - 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn c1_distance_monotone_in_parameter_gap() {
        for fam in [
            MapFamily::pomeau_manneville(0.5).unwrap(),
            MapFamily::smooth_circle(),
            MapFamily::piecewise_linear(),
        ] {
            let base = fam.gamma_range.0 + 0.05;
            let mut last = 0.0;
            for k in 0..6 {
                let r = validate_family(&fam, base, base + 0.01 * k as f64, 400).unwrap();
                assert!(r.c1_distance >= last - 1e-15, "{}", fam.name());
                last = r.c1_distance;
            }
        }
    }

    #[test]
    fn pm_distortion_is_finite() {
        let r = validate_family(&MapFamily::pomeau_manneville(0.5).unwrap(), 0.1, 0.12, 200).unwrap();
        assert!(r.distortion_constant.is_finite() && r.distortion_constant > 0.0);
        assert!(r.contraction.0 < 1.0 && r.contraction.1 < 1.0);
    }

    #[test]
    fn boundary_complexity_interval_doubling() {
        let map = MapFamily::doubling()
            .with_domain(Domain::Interval)
            .instantiate(0.0)
            .unwrap();
        let bc = boundary_complexity(&map, &[0.01], 1.0).unwrap();
        // direct oracle: at x = 1/2 both branches contribute (1/2 ± ε/2),
        // ball of radius ε/2, so G = 2ε / ε = 2
        assert!((bc.g[0] - 2.0).abs() < 1e-12, "{}", bc.g[0]);
        // preimage of each ε-neighbourhood has measure ε (= 2ε·s) per endpoint
        let b = &map.branches()[0];
        let w = b.inverse_extended(1.0 + 0.01).unwrap() - b.inverse_extended(1.0 - 0.01).unwrap();
        assert!((w - 0.01).abs() < 1e-15);
    }

    #[test]
    fn boundary_complexity_circle_full_branches() {
        let map = MapFamily::doubling().instantiate(0.0).unwrap();
        let bc = boundary_complexity(&map, &[0.05, 0.01, 0.001], 1.0).unwrap();
        assert!(bc.g.iter().all(|&g| g == 0.0));
        assert_eq!(bc.expression, 0.5);
        assert!(bc.satisfied);
        assert!(boundary_complexity(&map, &[], 1.0).is_err());
        assert!(boundary_complexity(&map, &[0.2], 1.0).is_err());
    }

    #[test]
    fn circle_distance_wraps() {
        assert!((Domain::Circle.distance(0.05, 0.95) - 0.1).abs() < 1e-15);
        assert!((Domain::Interval.distance(0.05, 0.95) - 0.9).abs() < 1e-15);
    }
}
