//! Ulam discretizations of transfer operators and the numerics built on them.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, Schur};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::density::{l1_slices, quasi_holder_seminorm, GridDensity, DEFAULT_N_EPS};
use crate::error::{invalid, Error, Result};
use crate::maps::{Domain, MapFamily, MapInstance};
use crate::rng::substream;

/// How `m(U_j ∩ F⁻¹U_i)` is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "points")]
pub enum UlamScheme {
    /// Interval arithmetic on preimages of grid points (exact up to the
    /// inverse-branch tolerance).
    #[default]
    Exact,
    /// Midpoint rule with the given number of points per cell.
    Quadrature(usize),
}

/// Where an operator came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Map {
        family: String,
        gamma: f64,
        /// built from a member that bypassed the expansion check
        unchecked: bool,
    },
    Averaged {
        family: String,
        center: f64,
        radius: f64,
        law: String,
        n_samples: usize,
    },
    Custom {
        label: String,
    },
}

/// Column-stochastic sparse matrix acting on cell averages.
///
/// Stored column-major: column `j` lists the cells that receive mass from
/// cell `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct UlamOperator {
    n: usize,
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
    domain: Domain,
    provenance: Provenance,
    scheme: UlamScheme,
}

/// Calls `emit(j, i, w)` for every piece of cell `j` that `map` sends into
/// cell `i`, with `w` the fraction of cell `j` involved.
pub fn for_each_transition(
    map: &MapInstance,
    n: usize,
    scheme: UlamScheme,
    mut emit: impl FnMut(usize, usize, f64),
) -> Result<()> {
    if n < 1 {
        return Err(invalid("need at least one cell"));
    }
    let nf = n as f64;
    let cell_of = |x: f64| ((x * nf).floor().max(0.0) as usize).min(n - 1);
    match scheme {
        UlamScheme::Quadrature(q) => {
            if q == 0 {
                return Err(invalid("quadrature needs at least one point per cell"));
            }
            let w = 1.0 / q as f64;
            for j in 0..n {
                for k in 0..q {
                    let x = (j as f64 + (k as f64 + 0.5) * w) / nf;
                    emit(j, cell_of(map.eval(x)), w);
                }
            }
        }
        UlamScheme::Exact => {
            let mut cuts: Vec<f64> = Vec::new();
            for b in map.branches() {
                let (fs, fe) = (b.forward(b.start), b.forward(b.end));
                let (lo, hi) = (fs.min(fe), fs.max(fe));
                cuts.clear();
                cuts.push(b.start);
                let j_first = (b.start * nf).floor() as usize + 1;
                let j_last = ((b.end * nf).ceil() as usize).saturating_sub(1);
                for j in j_first..=j_last.min(n - 1) {
                    let c = j as f64 / nf;
                    if c > b.start && c < b.end {
                        cuts.push(c);
                    }
                }
                let i_first = ((lo * nf).floor() as usize + 1).max(1);
                let i_last = (((hi * nf).ceil() as usize).saturating_sub(1)).min(n - 1);
                let mut guess = None;
                for i in i_first..=i_last {
                    let t = i as f64 / nf;
                    if t <= lo || t >= hi {
                        continue;
                    }
                    let y = b.inverse_near(t, guess)?;
                    guess = Some(y);
                    if y > b.start && y < b.end {
                        cuts.push(y);
                    }
                }
                cuts.push(b.end);
                cuts.sort_by(f64::total_cmp);
                for w in cuts.windows(2) {
                    let len = w[1] - w[0];
                    if len <= 0.0 {
                        continue;
                    }
                    let mid = 0.5 * (w[0] + w[1]);
                    emit(cell_of(mid), cell_of(b.forward(mid)), len * nf);
                }
            }
        }
    }
    Ok(())
}

/// One application of the transfer operator of `map` without assembling a
/// matrix; used when every step of a sequence has its own parameter.
pub fn transfer(map: &MapInstance, scheme: UlamScheme, phi: &GridDensity) -> Result<GridDensity> {
    let mut out = vec![0.0; phi.n_cells()];
    transfer_into(map, scheme, phi.values(), &mut out)?;
    Ok(GridDensity::from_parts(out, phi.domain()))
}

pub(crate) fn transfer_into(map: &MapInstance, scheme: UlamScheme, src: &[f64], dst: &mut [f64]) -> Result<()> {
    dst.iter_mut().for_each(|v| *v = 0.0);
    for_each_transition(map, src.len(), scheme, |j, i, w| dst[i] += w * src[j])
}

fn assemble(
    n: usize,
    mut triplets: Vec<(u32, u32, f64)>,
    domain: Domain,
    provenance: Provenance,
    scheme: UlamScheme,
) -> UlamOperator {
    triplets.sort_by_key(|a| (a.0, a.1));
    let mut col_ptr = vec![0usize; n + 1];
    let mut rows: Vec<u32> = Vec::with_capacity(triplets.len());
    let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
    let mut last: Option<(u32, u32)> = None;
    for (j, i, w) in triplets {
        if last == Some((j, i)) {
            *vals.last_mut().unwrap() += w;
        } else {
            rows.push(i);
            vals.push(w);
            col_ptr[j as usize + 1] += 1;
            last = Some((j, i));
        }
    }
    for j in 0..n {
        col_ptr[j + 1] += col_ptr[j];
    }
    UlamOperator {
        n,
        col_ptr,
        rows,
        vals,
        domain,
        provenance,
        scheme,
    }
}

fn map_triplets(
    map: &MapInstance,
    n: usize,
    scheme: UlamScheme,
    weight: f64,
    out: &mut Vec<(u32, u32, f64)>,
) -> Result<()> {
    for_each_transition(map, n, scheme, |j, i, w| out.push((j as u32, i as u32, weight * w)))
}

/// Discretizes the transfer operator of `map` on `n_cells` cells.
pub fn build_ulam(map: &MapInstance, n_cells: usize, scheme: UlamScheme) -> Result<UlamOperator> {
    if n_cells < 2 {
        return Err(invalid("Ulam discretization needs at least 2 cells"));
    }
    let mut triplets = Vec::with_capacity(3 * n_cells);
    map_triplets(map, n_cells, scheme, 1.0, &mut triplets)?;
    Ok(assemble(
        n_cells,
        triplets,
        map.domain(),
        Provenance::Map {
            family: map.family().name().to_string(),
            gamma: map.gamma(),
            unchecked: !map.is_checked(),
        },
        scheme,
    ))
}

impl UlamOperator {
    /// Operator from explicit `(row, col, value)` entries; entries must be
    /// nonnegative and every column must sum to one.
    pub fn from_triplets(n: usize, domain: Domain, entries: &[(usize, usize, f64)], label: &str) -> Result<Self> {
        if n == 0 {
            return Err(invalid("empty operator"));
        }
        let mut triplets = Vec::with_capacity(entries.len());
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(invalid(format!("entry ({i}, {j}) outside a {n}×{n} matrix")));
            }
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("entry ({i}, {j}) = {v} is not a nonnegative number")));
            }
            triplets.push((j as u32, i as u32, v));
        }
        let op = assemble(
            n,
            triplets,
            domain,
            Provenance::Custom {
                label: label.to_string(),
            },
            UlamScheme::Exact,
        );
        if let Some((j, s)) = op
            .column_sums()
            .into_iter()
            .enumerate()
            .find(|(_, s)| (s - 1.0).abs() > 1e-10)
        {
            return Err(invalid(format!("column {j} sums to {s}, not 1")));
        }
        Ok(op)
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn scheme(&self) -> UlamScheme {
        self.scheme
    }

    /// Nonzero `(row, value)` pairs of column `j`.
    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_ptr[j]..self.col_ptr[j + 1];
        self.rows[r.clone()]
            .iter()
            .zip(&self.vals[r])
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.column(j).find(|&(r, _)| r == i).map_or(0.0, |(_, v)| v)
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.column(j).map(|(_, v)| v).sum()).collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |j| self.column(j).map(move |(i, v)| (i, j, v)))
    }

    pub fn apply_into(&self, src: &[f64], dst: &mut [f64]) {
        dst.iter_mut().for_each(|v| *v = 0.0);
        for (j, &x) in src.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let r = self.col_ptr[j]..self.col_ptr[j + 1];
            for (&i, &v) in self.rows[r.clone()].iter().zip(&self.vals[r]) {
                dst[i as usize] += v * x;
            }
        }
    }

    pub fn apply(&self, phi: &GridDensity) -> Result<GridDensity> {
        if phi.n_cells() != self.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: phi.n_cells(),
            });
        }
        let mut out = vec![0.0; self.n];
        self.apply_into(phi.values(), &mut out);
        Ok(GridDensity::from_parts(out, phi.domain()))
    }

    /// Adjoint action `ψ ↦ ψ ∘ F` in the cell-average convention.
    pub fn apply_adjoint(&self, psi: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.column(j).map(|(i, v)| v * psi[i]).sum())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for (i, j, v) in self.entries() {
            m[(i, j)] += v;
        }
        m
    }

    /// Writes `row,col,value` lines.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,col,value")?;
        for (i, j, v) in self.entries() {
            writeln!(w, "{i},{j},{v:e}")?;
        }
        Ok(())
    }

    /// Header describing a triplet file; the checksum covers the triplet CSV.
    pub fn header(&self) -> Result<OperatorHeader> {
        let mut buf = Vec::new();
        self.write_triplets(&mut buf)?;
        let (family, gamma) = match &self.provenance {
            Provenance::Map { family, gamma, .. } => (family.clone(), Some(*gamma)),
            Provenance::Averaged { family, center, .. } => (family.clone(), Some(*center)),
            Provenance::Custom { label } => (label.clone(), None),
        };
        Ok(OperatorHeader {
            family,
            gamma,
            n_cells: self.n,
            domain: self.domain,
            quadrature: self.scheme,
            provenance: self.provenance.clone(),
            checksum: hex::encode(Sha256::digest(&buf)),
        })
    }

    /// Reads a triplet CSV and checks it against its header.
    pub fn read_triplets<R: BufRead>(r: R, header: &OperatorHeader) -> Result<Self> {
        let mut bytes = Vec::new();
        let mut entries = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            bytes.extend_from_slice(line.as_bytes());
            bytes.push(b'\n');
            if lineno == 0 && line.starts_with("row") {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            let parse_err = |what: &str| Error::Parse(format!("line {}: bad {what}", lineno + 1));
            if parts.len() != 3 {
                return Err(parse_err("triplet"));
            }
            let i: usize = parts[0].trim().parse().map_err(|_| parse_err("row"))?;
            let j: usize = parts[1].trim().parse().map_err(|_| parse_err("col"))?;
            let v: f64 = parts[2].trim().parse().map_err(|_| parse_err("value"))?;
            entries.push((i, j, v));
        }
        let sum = hex::encode(Sha256::digest(&bytes));
        if sum != header.checksum {
            return Err(Error::Parse(format!(
                "checksum mismatch: file {sum}, header {}",
                header.checksum
            )));
        }
        let mut op = Self::from_triplets(header.n_cells, header.domain, &entries, "")?;
        op.provenance = header.provenance.clone();
        op.scheme = header.quadrature;
        Ok(op)
    }
}

/// JSON header accompanying a triplet CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorHeader {
    pub family: String,
    pub gamma: Option<f64>,
    pub n_cells: usize,
    pub domain: Domain,
    pub quadrature: UlamScheme,
    pub provenance: Provenance,
    pub checksum: String,
}

/// `L_{γ_n} ⋯ L_{γ_1} φ` for prebuilt operators, applied left to right.
pub fn apply_sequence(ops: &[&UlamOperator], phi: &GridDensity) -> Result<GridDensity> {
    Ok(apply_sequence_recorded(ops, phi)?.pop().unwrap_or_else(|| phi.clone()))
}

/// Same as [`apply_sequence`] but returns every intermediate density
/// (excluding the input).
pub fn apply_sequence_recorded(ops: &[&UlamOperator], phi: &GridDensity) -> Result<Vec<GridDensity>> {
    let mut out = Vec::with_capacity(ops.len());
    let mut cur = phi.clone();
    for op in ops {
        cur = op.apply(&cur)?;
        out.push(cur.clone());
    }
    Ok(out)
}

/// `L_{γ_n} ⋯ L_{γ_1} φ` for members of a family, built on the fly.
pub fn apply_family_sequence(
    family: &MapFamily,
    gammas: &[f64],
    phi: &GridDensity,
    scheme: UlamScheme,
) -> Result<GridDensity> {
    let mut cur = phi.values().to_vec();
    let mut next = vec![0.0; cur.len()];
    for &g in gammas {
        let map = family.instantiate(g)?;
        transfer_into(&map, scheme, &cur, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(GridDensity::from_parts(cur, phi.domain()))
}

/// Perturbation law `ν` on `[center − radius, center + radius]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Law {
    /// Uniform, integrated with `n_samples` midpoint nodes.
    Uniform,
    /// Uniform, with `n_samples` i.i.d. Monte-Carlo draws.
    UniformMonteCarlo,
    /// `δ_center`
    PointMass,
    /// Uniform on the listed atoms.
    Atoms { atoms: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Averaging {
    pub center: f64,
    pub radius: f64,
    pub law: Law,
    pub n_samples: usize,
    pub seed: u64,
}

impl Averaging {
    pub fn uniform(center: f64, radius: f64, n_samples: usize) -> Self {
        Self {
            center,
            radius,
            law: Law::Uniform,
            n_samples,
            seed: 0,
        }
    }

    pub fn point_mass(gamma: f64) -> Self {
        Self {
            center: gamma,
            radius: 0.0,
            law: Law::PointMass,
            n_samples: 1,
            seed: 0,
        }
    }

    /// Parameter values and their weights.
    pub fn nodes(&self) -> Result<Vec<(f64, f64)>> {
        if self.n_samples == 0 {
            return Err(invalid("averaging needs at least one sample"));
        }
        if !(self.radius >= 0.0) {
            return Err(invalid(format!("negative radius {}", self.radius)));
        }
        let n = self.n_samples as f64;
        Ok(match &self.law {
            Law::PointMass => vec![(self.center, 1.0)],
            Law::Uniform => (0..self.n_samples)
                .map(|k| (self.center + self.radius * (2.0 * (k as f64 + 0.5) / n - 1.0), 1.0 / n))
                .collect(),
            Law::UniformMonteCarlo => {
                let mut rng = substream(self.seed, "averaging", 0);
                (0..self.n_samples)
                    .map(|_| (self.center + self.radius * rng.gen_range(-1.0..=1.0), 1.0 / n))
                    .collect()
            }
            Law::Atoms { atoms } => {
                if atoms.is_empty() {
                    return Err(invalid("atomic law without atoms"));
                }
                let w = 1.0 / atoms.len() as f64;
                atoms.iter().map(|&a| (a, w)).collect()
            }
        })
    }

    fn law_name(&self) -> &'static str {
        match self.law {
            Law::Uniform => "uniform",
            Law::UniformMonteCarlo => "uniform_monte_carlo",
            Law::PointMass => "point_mass",
            Law::Atoms { .. } => "atoms",
        }
    }
}

/// `∫ L_γ dν(γ)` as a single Ulam matrix.
pub fn averaged_operator(
    family: &MapFamily,
    nu: &Averaging,
    n_cells: usize,
    scheme: UlamScheme,
) -> Result<UlamOperator> {
    if n_cells < 2 {
        return Err(invalid("Ulam discretization needs at least 2 cells"));
    }
    let nodes = nu.nodes()?;
    let mut triplets = Vec::with_capacity(3 * n_cells * nodes.len());
    for &(g, w) in &nodes {
        let map = family.instantiate(g)?;
        map_triplets(&map, n_cells, scheme, w, &mut triplets)?;
    }
    let provenance = if matches!(nu.law, Law::PointMass) {
        Provenance::Map {
            family: family.name().to_string(),
            gamma: nu.center,
            unchecked: false,
        }
    } else {
        Provenance::Averaged {
            family: family.name().to_string(),
            center: nu.center,
            radius: nu.radius,
            law: nu.law_name().to_string(),
            n_samples: nodes.len(),
        }
    };
    Ok(assemble(n_cells, triplets, family.domain, provenance, scheme))
}

/// A probability density `φ` with `‖Mφ − φ‖₁ = residual`.
#[derive(Clone, Debug)]
pub struct FixedDensity {
    pub density: GridDensity,
    pub residual: f64,
    pub iterations: usize,
}

pub const DEFAULT_FIXED_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Power iteration from the uniform density.
pub fn fixed_density(op: &UlamOperator, tol: f64, max_iter: usize) -> Result<FixedDensity> {
    fixed_density_from(op, &GridDensity::uniform(op.n_cells(), op.domain()), tol, max_iter)
}

/// Power iteration from `start` (normalized first).
pub fn fixed_density_from(op: &UlamOperator, start: &GridDensity, tol: f64, max_iter: usize) -> Result<FixedDensity> {
    if start.n_cells() != op.n_cells() {
        return Err(Error::GridMismatch {
            left: op.n_cells(),
            right: start.n_cells(),
        });
    }
    let n = op.n_cells();
    let mut cur = start.normalized()?.into_values();
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 0..=max_iter {
        op.apply_into(&cur, &mut next);
        residual = l1_slices(&cur, &next);
        if residual <= tol {
            return Ok(FixedDensity {
                density: GridDensity::from_parts(cur, op.domain()),
                residual,
                iterations: it,
            });
        }
        let mass = next.iter().sum::<f64>() / n as f64;
        next.iter_mut().for_each(|v| *v /= mass);
        std::mem::swap(&mut cur, &mut next);
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual,
    })
}

/// Leading part of the spectrum of an operator.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralSummary {
    /// `(re, im)` pairs sorted by decreasing modulus
    pub eigenvalues: Vec<(f64, f64)>,
    pub moduli: Vec<f64>,
    /// `1 − |λ₂|`
    pub gap: f64,
    pub has_gap: bool,
    pub method: String,
    #[serde(skip)]
    pub leading_density: Option<GridDensity>,
}

pub const DENSE_LIMIT: usize = 2048;
const DENSE_DEFAULT_BELOW: usize = 256;

/// All eigenvalues of the dense matrix, sorted by decreasing modulus.
pub fn dense_eigenvalues(op: &UlamOperator) -> Result<Vec<(f64, f64)>> {
    if op.n_cells() > DENSE_LIMIT {
        return Err(Error::Eigensolver(format!(
            "dense eigensolve limited to {DENSE_LIMIT} cells, got {}",
            op.n_cells()
        )));
    }
    eigenvalues_of(op.to_dense())
}

/// Eigenvalues of a general real matrix by Schur decomposition, sorted by
/// decreasing modulus. Structured matrices (permutations) can stall the QR
/// iteration, so a failed attempt is retried after a fixed orthogonal
/// similarity.
fn eigenvalues_of(m: DMatrix<f64>) -> Result<Vec<(f64, f64)>> {
    let n = m.nrows();
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 200 * n.max(10)).or_else(|| {
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let r = DMatrix::<f64>::from_fn(n, n, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let q = r.qr().q();
        Schur::try_new(q.transpose() * m * &q, f64::EPSILON, 200 * n.max(10))
    });
    let schur = schur.ok_or_else(|| Error::Eigensolver("Schur iteration did not converge".into()))?;
    let mut v: Vec<(f64, f64)> = schur.complex_eigenvalues().iter().map(|c| (c.re, c.im)).collect();
    if v.iter().any(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Eigensolver("non-finite eigenvalue".into()));
    }
    v.sort_by(|a, b| b.0.hypot(b.1).total_cmp(&a.0.hypot(a.1)));
    Ok(v)
}

/// Ritz values from `m` Arnoldi steps.
fn arnoldi_eigenvalues(op: &UlamOperator, m: usize) -> Result<Vec<(f64, f64)>> {
    let n = op.n_cells();
    let m = m.min(n);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut v0: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64 * 0.618_033_988_75).fract() - 0.5))
        .collect();
    let norm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
    v0.iter_mut().for_each(|x| *x /= norm);
    basis.push(v0);
    let mut w = vec![0.0; n];
    let mut size = m;
    for k in 0..m {
        op.apply_into(&basis[k], &mut w);
        for _pass in 0..2 {
            for (i, b) in basis.iter().enumerate() {
                let c: f64 = b.iter().zip(&w).map(|(x, y)| x * y).sum();
                h[(i, k)] += c;
                w.iter_mut().zip(b).for_each(|(y, x)| *y -= c * x);
            }
        }
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        h[(k + 1, k)] = beta;
        if beta < 1e-12 {
            size = k + 1;
            break;
        }
        basis.push(w.iter().map(|x| x / beta).collect());
    }
    eigenvalues_of(h.view((0, 0), (size, size)).into_owned())
}

/// Top-`k` eigenvalues, the spectral gap and the leading density.
///
/// Small operators are solved densely; larger ones by Arnoldi.
pub fn spectral_summary(op: &UlamOperator, k: usize) -> Result<SpectralSummary> {
    if k < 2 {
        return Err(invalid("spectral summary needs k ≥ 2"));
    }
    let (all, method) = if op.n_cells() <= DENSE_DEFAULT_BELOW {
        (dense_eigenvalues(op)?, "dense")
    } else {
        (arnoldi_eigenvalues(op, 120)?, "arnoldi")
    };
    let eigenvalues: Vec<(f64, f64)> = all.into_iter().take(k).collect();
    let moduli: Vec<f64> = eigenvalues.iter().map(|(a, b)| a.hypot(*b)).collect();
    let second = moduli.get(1).copied().unwrap_or(0.0);
    let has_gap = second < 1.0 - 1e-6;
    let leading_density = if has_gap {
        fixed_density(op, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)
            .map(|f| f.density)
            .ok()
    } else {
        cesaro_density(op, 4096).ok()
    };
    Ok(SpectralSummary {
        eigenvalues,
        moduli,
        gap: 1.0 - second,
        has_gap,
        method: method.to_string(),
        leading_density,
    })
}

/// Cesàro mean of the first `n` iterates of the uniform density.
fn cesaro_density(op: &UlamOperator, n: usize) -> Result<GridDensity> {
    let mut cur = vec![1.0; op.n_cells()];
    let mut next = vec![0.0; op.n_cells()];
    let mut acc = vec![0.0; op.n_cells()];
    for _ in 0..n {
        acc.iter_mut().zip(&cur).for_each(|(a, c)| *a += c);
        op.apply_into(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    GridDensity::from_parts(acc, op.domain()).normalized()
}

/// Empirical Lasota–Yorke coefficients `|Lφ|_α ≤ η|φ|_α + C‖φ‖₁`.
#[derive(Clone, Debug, Serialize)]
pub struct LyFit {
    pub alpha: f64,
    pub eta: f64,
    /// smallest `C ≥ 0` making the one-step bound hold on every test density
    pub c: f64,
    /// least-squares intercept before the envelope shift
    pub c_least_squares: f64,
    /// fraction of test densities under the plain least-squares bound
    pub fraction_satisfied_ls: f64,
    /// worst `lhs / rhs` of the iterated bound for each power `n`
    pub iterated_worst_ratio: Vec<f64>,
    pub iterated_ok: bool,
    pub slack: f64,
}

/// Fits `(η̂, Ĉ)` on `test_set` and checks the iterated bound
/// `|Lⁿφ|_α ≤ η̂ⁿ|φ|_α + Ĉ/(1−η̂)‖φ‖₁` for `n ≤ n_powers`.
pub fn lasota_yorke_fit(
    op: &UlamOperator,
    alpha: f64,
    eps0: f64,
    test_set: &[GridDensity],
    n_powers: usize,
    slack: f64,
) -> Result<LyFit> {
    if test_set.is_empty() {
        return Err(invalid("empty Lasota–Yorke test set"));
    }
    let semi =
        |phi: &GridDensity| -> Result<f64> { Ok(quasi_holder_seminorm(phi, alpha, eps0, DEFAULT_N_EPS)?.seminorm) };
    // rows: (|φ|, ‖φ‖₁, |Lφ|), plus iterates for the power check
    let mut rows = Vec::with_capacity(test_set.len());
    let mut powers: Vec<Vec<f64>> = Vec::with_capacity(test_set.len());
    for phi in test_set {
        let x = semi(phi)?;
        let z = phi.l1_norm();
        let mut cur = phi.clone();
        let mut seq = Vec::with_capacity(n_powers.max(1));
        for _ in 0..n_powers.max(1) {
            cur = op.apply(&cur)?;
            seq.push(semi(&cur)?);
        }
        rows.push((x, z, seq[0]));
        powers.push(seq);
    }
    if rows.iter().all(|r| r.0 == 0.0) {
        return Err(Error::Degenerate("all test densities have zero seminorm".into()));
    }
    // normal equations for y ≈ ηx + Cz
    let (mut sxx, mut sxz, mut szz, mut sxy, mut szy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, z, y) in &rows {
        sxx += x * x;
        sxz += x * z;
        szz += z * z;
        sxy += x * y;
        szy += z * y;
    }
    let det = sxx * szz - sxz * sxz;
    let (mut eta, c_ls) = if det.abs() > 1e-12 * sxx * szz {
        ((sxy * szz - szy * sxz) / det, (sxx * szy - sxz * sxy) / det)
    } else {
        (sxy / sxx, 0.0)
    };
    eta = eta.max(0.0);
    let fraction = rows
        .iter()
        .filter(|&&(x, z, y)| y <= eta * x + c_ls * z + 1e-12)
        .count() as f64
        / rows.len() as f64;
    let c = rows
        .iter()
        .map(|&(x, z, y)| if z > 0.0 { (y - eta * x) / z } else { 0.0 })
        .fold(0.0, f64::max);
    let mut worst = vec![0.0f64; n_powers];
    if eta < 1.0 {
        for (row, seq) in rows.iter().zip(&powers) {
            let (x, z, _) = *row;
            for n in 1..=n_powers {
                let rhs = eta.powi(n as i32) * x + c / (1.0 - eta) * z;
                let lhs = seq[n - 1];
                let ratio = if rhs > 0.0 {
                    lhs / rhs
                } else if lhs > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                };
                worst[n - 1] = worst[n - 1].max(ratio);
            }
        }
    } else {
        worst.iter_mut().for_each(|w| *w = f64::INFINITY);
    }
    let iterated_ok = eta < 1.0 && worst.iter().all(|&w| w <= 1.0 + slack);
    Ok(LyFit {
        alpha,
        eta,
        c,
        c_least_squares: c_ls,
        fraction_satisfied_ls: fraction,
        iterated_worst_ratio: worst,
        iterated_ok,
        slack,
    })
}

/// Deviation curves `n ↦ ‖L^n_γ φ − L^n φ‖₁` along i.i.d. sequences.
#[derive(Clone, Debug, Serialize)]
pub struct ProbeReport {
    pub gamma_hat: f64,
    pub delta: f64,
    /// one curve per seed, index `n − 1`
    pub curves: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// `max − min` over seeds at each `n`
    pub spread: Vec<f64>,
    pub phi_norm: f64,
    /// `C̃` of the envelope `C̃ s̃ⁿ ‖φ‖_α`, shifted to dominate every curve
    pub c_tilde: f64,
    pub s_tilde: f64,
    /// RMS error of the log-linear fit to the mean curve divided by the
    /// curve's mean (normalized RMSE)
    pub fit_residual: f64,
    /// RMS of the pointwise relative errors of the same fit
    pub fit_residual_pointwise: f64,
    pub dominated: bool,
}

/// Runs one perturbed sequence per seed and fits an exponential envelope.
#[allow(clippy::too_many_arguments)]
pub fn perturbation_probe(
    family: &MapFamily,
    gamma_hat: f64,
    delta: f64,
    n_max: usize,
    phi: &GridDensity,
    seeds: &[u64],
    alpha: f64,
    scheme: UlamScheme,
) -> Result<ProbeReport> {
    if !(delta >= 0.0) {
        return Err(invalid(format!("δ must be nonnegative, got {delta}")));
    }
    if seeds.is_empty() || n_max == 0 {
        return Err(invalid("perturbation probe needs seeds and n_max ≥ 1"));
    }
    let phi_norm = quasi_holder_seminorm(phi, alpha, family.eps0, DEFAULT_N_EPS)?.norm;
    let base = family.instantiate(gamma_hat)?;
    let n = phi.n_cells();
    let mut reference = Vec::with_capacity(n_max);
    let mut cur = phi.values().to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..n_max {
        transfer_into(&base, scheme, &cur, &mut next)?;
        std::mem::swap(&mut cur, &mut next);
        reference.push(cur.clone());
    }
    let mut curves = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut rng = substream(seed, "probe", 0);
        let mut cur = phi.values().to_vec();
        let mut curve = Vec::with_capacity(n_max);
        for r in &reference {
            let g = gamma_hat + delta * rng.gen_range(-1.0..=1.0);
            let map = family.instantiate(g)?;
            transfer_into(&map, scheme, &cur, &mut next)?;
            std::mem::swap(&mut cur, &mut next);
            curve.push(l1_slices(&cur, r));
        }
        curves.push(curve);
    }
    let k = seeds.len() as f64;
    let mean: Vec<f64> = (0..n_max)
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / k)
        .collect();
    let spread: Vec<f64> = (0..n_max)
        .map(|i| {
            let (lo, hi) = curves.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| {
                (a.min(c[i]), b.max(c[i]))
            });
            hi - lo
        })
        .collect();
    let (s_tilde, c_fit, fit_residual, fit_residual_pointwise) = fit_exponential(&mean, phi_norm);
    let c_tilde = (0..n_max)
        .map(|i| {
            let env = s_tilde.powi(i as i32 + 1) * phi_norm;
            curves.iter().map(|c| c[i]).fold(0.0, f64::max) / env
        })
        .fold(c_fit, f64::max);
    let dominated = curves.iter().all(|c| {
        c.iter()
            .enumerate()
            .all(|(i, &d)| d <= c_tilde * s_tilde.powi(i as i32 + 1) * phi_norm * (1.0 + 1e-12))
    });
    Ok(ProbeReport {
        gamma_hat,
        delta,
        curves,
        mean,
        spread,
        phi_norm,
        c_tilde,
        s_tilde,
        fit_residual,
        fit_residual_pointwise,
        dominated,
    })
}

/// Least squares of `d_n = C‖φ‖ sⁿ` with `0 < s ≤ 1`, on the same scale as
/// the reported residual; returns `(s, C, normalized RMSE, RMS relative
/// residual)`. Zero curves give `(1, 0, 0, 0)`.
fn fit_exponential(curve: &[f64], norm: f64) -> (f64, f64, f64, f64) {
    let pts: Vec<(i32, f64)> = curve
        .iter()
        .enumerate()
        .filter(|(_, &d)| d > 0.0)
        .map(|(i, &d)| (i as i32 + 1, d / norm))
        .collect();
    if pts.is_empty() {
        return (1.0, 0.0, 0.0, 0.0);
    }
    // for fixed s the best C is linear least squares
    let level = |s: f64| {
        let (num, den) = pts
            .iter()
            .fold((0.0, 0.0), |(a, b), &(n, y)| (a + y * s.powi(n), b + s.powi(2 * n)));
        num / den
    };
    let sse = |s: f64| {
        let c = level(s);
        pts.iter().map(|&(n, y)| (c * s.powi(n) - y).powi(2)).sum::<f64>()
    };
    const GRID: usize = 1000;
    let best = (1..=GRID)
        .min_by(|&a, &b| sse(a as f64 / GRID as f64).total_cmp(&sse(b as f64 / GRID as f64)))
        .unwrap();
    let (mut lo, mut hi) = (
        (best - 1) as f64 / GRID as f64,
        ((best + 1) as f64 / GRID as f64).min(1.0),
    );
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-14 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if sse(a) <= sse(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let s = if sse(1.0) <= sse(0.5 * (lo + hi)) {
        1.0
    } else {
        0.5 * (lo + hi)
    };
    let c = level(s);
    let m = pts.len() as f64;
    let rms = (pts.iter().map(|&(n, y)| (c * s.powi(n) / y - 1.0).powi(2)).sum::<f64>() / m).sqrt();
    let mean = pts.iter().map(|p| p.1).sum::<f64>() / m;
    (s, c, (sse(s) / m).sqrt() / mean, rms)
}
