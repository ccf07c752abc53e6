//! Expanding circle maps coupled along a time-varying directed graph:
//!
//! `x_i(t+1) = f(x_i(t)) + α_c Σ_j A_ij(t) h(x_j(t), x_i(t))  (mod 1)`.
//!
//! The observable is the per-node marginal distribution of an ensemble,
//! compared with the invariant density of the uncoupled node map.

use std::f64::consts::TAU;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birkhoff::DEFAULT_DITHER;
use crate::error::{invalid, Error, Result};
use crate::maps::{wrap_unit, Domain, MapFamily};
use crate::rng::substream;
use crate::transfer::{build_ulam, fixed_density, UlamScheme, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER};

/// How the adjacency matrix changes with time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// Complete directed graph, or the listed edges.
    Static {
        #[serde(default)]
        edges: Option<Vec<(usize, usize)>>,
    },
    /// Complete graph whose listed edges are present only when
    /// `t mod period == 0`.
    PeriodicFailure { edges: Vec<(usize, usize)>, period: usize },
    /// Complete graph where every edge alternates between working and
    /// failed. A working edge fails with probability `fail_prob` per step;
    /// a failed edge stays failed with probability `persistence`, so failure
    /// runs are geometric with mean `1/(1 − persistence)`.
    Bursty { persistence: f64, fail_prob: f64 },
    /// Explicit 0/1 matrices (row-major), cycled.
    Explicit { frames: Vec<Vec<u8>> },
}

/// A precomputed adjacency stream. `A(t)` is frame `t mod frames.len()`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdjacencySchedule {
    pub n_nodes: usize,
    pub kind: ScheduleKind,
    frames: Vec<Vec<u8>>,
}

impl AdjacencySchedule {
    /// Row-major `n × n` 0/1 matrix at time `t`; entry `(i, j)` means node
    /// `j` drives node `i`.
    pub fn at(&self, t: usize) -> &[u8] {
        &self.frames[t % self.frames.len()]
    }

    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn max_in_degree(&self) -> usize {
        let n = self.n_nodes;
        self.frames
            .iter()
            .flat_map(|f| (0..n).map(move |i| f[i * n..(i + 1) * n].iter().map(|&a| a as usize).sum()))
            .max()
            .unwrap_or(0)
    }

    pub fn edge_count(&self, t: usize) -> usize {
        self.at(t).iter().map(|&a| a as usize).sum()
    }

    /// Lengths of maximal runs of absence for every directed edge of the
    /// complete graph over the first `horizon` steps. Runs cut by either
    /// end of the window are dropped.
    pub fn failure_runs(&self, horizon: usize) -> Vec<usize> {
        let n = self.n_nodes;
        let mut runs = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let mut len = 0;
                let mut seen_up = false;
                for t in 0..horizon {
                    if self.at(t)[i * n + j] == 0 {
                        len += 1;
                    } else {
                        if seen_up && len > 0 {
                            runs.push(len);
                        }
                        seen_up = true;
                        len = 0;
                    }
                }
            }
        }
        runs
    }
}

fn complete(n: usize) -> Vec<u8> {
    let mut m = vec![1u8; n * n];
    for i in 0..n {
        m[i * n + i] = 0;
    }
    m
}

fn check_edges(n: usize, edges: &[(usize, usize)]) -> Result<()> {
    for &(i, j) in edges {
        if i >= n || j >= n || i == j {
            return Err(invalid(format!("edge ({i}, {j}) invalid for {n} nodes")));
        }
    }
    Ok(())
}

/// Builds the adjacency stream. `horizon` is the number of frames drawn for
/// the bursty kind; other kinds are periodic and ignore it.
pub fn gen_schedule(kind: &ScheduleKind, n_nodes: usize, horizon: usize, seed: u64) -> Result<AdjacencySchedule> {
    if n_nodes < 2 {
        return Err(invalid("a network needs at least 2 nodes"));
    }
    let n = n_nodes;
    let frames = match kind {
        ScheduleKind::Static { edges: None } => vec![complete(n)],
        ScheduleKind::Static { edges: Some(e) } => {
            check_edges(n, e)?;
            let mut m = vec![0u8; n * n];
            for &(i, j) in e {
                m[i * n + j] = 1;
            }
            vec![m]
        }
        ScheduleKind::PeriodicFailure { edges, period } => {
            check_edges(n, edges)?;
            if *period == 0 {
                return Err(invalid("failure period must be positive"));
            }
            (0..*period)
                .map(|t| {
                    let mut m = complete(n);
                    if t != 0 {
                        for &(i, j) in edges {
                            m[i * n + j] = 0;
                        }
                    }
                    m
                })
                .collect()
        }
        ScheduleKind::Bursty { persistence, fail_prob } => {
            if !(0.0..1.0).contains(persistence) {
                return Err(invalid("persistence must lie in [0, 1)"));
            }
            if !(0.0..=1.0).contains(fail_prob) {
                return Err(invalid("fail_prob must lie in [0, 1]"));
            }
            if horizon == 0 {
                return Err(invalid("bursty schedule needs a positive horizon"));
            }
            let mut rng = substream(seed, "schedule", 0);
            let mut cur = complete(n);
            let mut frames = Vec::with_capacity(horizon);
            frames.push(cur.clone());
            for _ in 1..horizon {
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let u: f64 = rng.gen();
                        let a = &mut cur[i * n + j];
                        *a = if *a == 1 {
                            (u >= *fail_prob) as u8
                        } else {
                            (u >= *persistence) as u8
                        };
                    }
                }
                frames.push(cur.clone());
            }
            frames
        }
        ScheduleKind::Explicit { frames } => {
            if frames.is_empty() {
                return Err(invalid("explicit schedule has no frames"));
            }
            for f in frames {
                if f.len() != n * n {
                    return Err(invalid(format!("frame has {} entries, expected {}", f.len(), n * n)));
                }
                if f.iter().any(|&a| a > 1) {
                    return Err(invalid("adjacency entries must be 0 or 1"));
                }
                if (0..n).any(|i| f[i * n + i] != 0) {
                    return Err(invalid("adjacency diagonal must be zero"));
                }
            }
            frames.clone()
        }
    };
    Ok(AdjacencySchedule {
        n_nodes,
        kind: kind.clone(),
        frames,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// `h(x_j, x_i) = sin(2π(x_j − x_i)) / 2π`
    Diffusive,
    Zero,
}

impl Coupling {
    pub fn lipschitz(self) -> f64 {
        match self {
            Coupling::Diffusive => 1.0,
            Coupling::Zero => 0.0,
        }
    }

    pub fn eval(self, xj: f64, xi: f64) -> f64 {
        match self {
            Coupling::Diffusive => (TAU * (xj - xi)).sin() / TAU,
            Coupling::Zero => 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NetworkSystem {
    family: MapFamily,
    gamma: f64,
    alpha_c: f64,
    coupling: Coupling,
    n_nodes: usize,
    expansion_margin: f64,
}

impl NetworkSystem {
    /// Validates `min f′ − |α_c| · (n − 1) · Lip(h) > 1`, using the largest
    /// possible in-degree so that any schedule is admissible.
    pub fn new(family: MapFamily, gamma: f64, alpha_c: f64, coupling: Coupling, n_nodes: usize) -> Result<Self> {
        if family.domain != Domain::Circle {
            return Err(invalid("network nodes need a circle map"));
        }
        if n_nodes < 2 {
            return Err(invalid("a network needs at least 2 nodes"));
        }
        if !alpha_c.is_finite() {
            return Err(invalid("coupling strength must be finite"));
        }
        let map = family.instantiate(gamma)?;
        let margin = map.min_expansion() - alpha_c.abs() * (n_nodes - 1) as f64 * coupling.lipschitz();
        if margin <= 1.0 {
            return Err(Error::Hypothesis {
                hypothesis: "coupled expansion",
                detail: format!("min f' − |α_c|·deg·Lip(h) = {margin:.4} ≤ 1 (α_c = {alpha_c}, {n_nodes} nodes)"),
            });
        }
        Ok(Self {
            family,
            gamma,
            alpha_c,
            coupling,
            n_nodes,
            expansion_margin: margin,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn alpha_c(&self) -> f64 {
        self.alpha_c
    }

    pub fn expansion_margin(&self) -> f64 {
        self.expansion_margin
    }

    pub fn family(&self) -> &MapFamily {
        &self.family
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `Σ_j A_ij h(x_j, x_i)` for every node, written into `out`.
    fn coupling_terms(&self, state: &[f64], adj: &[u8], out: &mut [f64]) {
        let n = self.n_nodes;
        match self.coupling {
            Coupling::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Coupling::Diffusive => {
                // sin(a − b) = sin a cos b − cos a sin b
                let sc: Vec<(f64, f64)> = state.iter().map(|x| (TAU * x).sin_cos()).collect();
                for i in 0..n {
                    let (mut s, mut c) = (0.0, 0.0);
                    for j in 0..n {
                        if adj[i * n + j] != 0 {
                            s += sc[j].0;
                            c += sc[j].1;
                        }
                    }
                    out[i] = (s * sc[i].1 - c * sc[i].0) / TAU;
                }
            }
        }
    }

    fn step_in_place<R: Rng>(&self, state: &mut [f64], adj: &[u8], scratch: &mut [f64], dither: f64, rngs: &mut [R]) {
        if self.alpha_c != 0.0 {
            self.coupling_terms(state, adj, scratch);
        }
        for (i, x) in state.iter_mut().enumerate() {
            let mut y = self.family.eval(self.gamma, *x);
            if self.alpha_c != 0.0 {
                y = wrap_unit(y + self.alpha_c * scratch[i]);
            }
            if dither > 0.0 {
                y = wrap_unit(y + rngs[i].gen_range(-dither..dither));
            }
            *x = y;
        }
    }
}

/// One exact step of the coupled system at time `t`.
pub fn step_network(system: &NetworkSystem, state: &[f64], t: usize, schedule: &AdjacencySchedule) -> Result<Vec<f64>> {
    if state.len() != system.n_nodes || schedule.n_nodes != system.n_nodes {
        return Err(invalid("state, system and schedule disagree on the node count"));
    }
    let mut next = state.to_vec();
    let mut scratch = vec![0.0; state.len()];
    let mut none: [rand_chacha::ChaCha8Rng; 0] = [];
    system.step_in_place(&mut next, schedule.at(t), &mut scratch, 0.0, &mut none);
    Ok(next)
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnsembleOptions {
    pub checkpoint_every: usize,
    pub bins: usize,
    pub dither: f64,
    /// cells used for the reference invariant density
    pub reference_cells: usize,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            checkpoint_every: 100,
            bins: 32,
            dither: DEFAULT_DITHER,
            reference_cells: 1024,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub ensemble: usize,
    pub n_steps: usize,
    pub bins: usize,
    /// step indices of the checkpoints (0 is the initial state)
    pub checkpoints: Vec<usize>,
    /// `counts[c][node][bin]`; every row sums to `ensemble`
    pub counts: Vec<Vec<Vec<u64>>>,
    /// reference bin masses of the node map's invariant density
    pub reference: Vec<f64>,
    /// `distances[c][node]`: L¹ distance of the marginal to the reference
    pub distances: Vec<Vec<f64>>,
    pub max_distance: Vec<f64>,
    /// expected L¹ distance of an exact sample from uniform,
    /// `√(2B(1 − 1/B)/(πN))`
    pub noise_floor: f64,
    pub note: &'static str,
}

impl EnsembleReport {
    pub fn worst(&self) -> f64 {
        self.max_distance.iter().copied().fold(0.0, f64::max)
    }
}

const MARGINAL_NOTE: &str = "per-node marginals only; closeness of marginals is necessary but not sufficient for closeness of the joint density";

fn bin_of(x: f64, bins: usize) -> usize {
    ((x * bins as f64) as usize).min(bins - 1)
}

fn reference_masses(family: &MapFamily, gamma: f64, opts: &EnsembleOptions) -> Result<Vec<f64>> {
    let b = opts.bins;
    let cells = opts.reference_cells.div_ceil(b) * b;
    let op = build_ulam(&family.instantiate(gamma)?, cells, UlamScheme::Exact)?;
    let fd = fixed_density(&op, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)?;
    let per = cells / b;
    let h = 1.0 / cells as f64;
    Ok(fd
        .density
        .values()
        .chunks(per)
        .map(|c| c.iter().sum::<f64>() * h)
        .collect())
}

fn member_rngs(seed: u64, member: usize, n_nodes: usize) -> Vec<rand_chacha::ChaCha8Rng> {
    (0..n_nodes)
        .map(|i| substream(seed, "network-ensemble", (member * n_nodes + i) as u64))
        .collect()
}

/// Evolves `ensemble` i.i.d. uniform initial states and records per-node
/// histograms every `checkpoint_every` steps.
pub fn simulate_ensemble(
    system: &NetworkSystem,
    schedule: &AdjacencySchedule,
    ensemble: usize,
    n_steps: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<EnsembleReport> {
    if schedule.n_nodes != system.n_nodes {
        return Err(invalid("schedule and system disagree on the node count"));
    }
    if ensemble == 0 || opts.bins == 0 || opts.checkpoint_every == 0 {
        return Err(invalid("ensemble, bins and checkpoint_every must be positive"));
    }
    if !(opts.dither >= 0.0) {
        return Err(invalid("dither width must be nonnegative"));
    }
    let n = system.n_nodes;
    let b = opts.bins;
    let checkpoints: Vec<usize> = (0..=n_steps).step_by(opts.checkpoint_every).collect();
    let n_ck = checkpoints.len();
    let counts_flat = (0..ensemble)
        .into_par_iter()
        .fold(
            || vec![0u64; n_ck * n * b],
            |mut acc, m| {
                let mut rngs = member_rngs(seed, m, n);
                let mut state: Vec<f64> = rngs.iter_mut().map(|r| r.gen::<f64>()).collect();
                let mut scratch = vec![0.0; n];
                let mut ck = 0;
                for t in 0..=n_steps {
                    if ck < n_ck && checkpoints[ck] == t {
                        for (i, &x) in state.iter().enumerate() {
                            acc[(ck * n + i) * b + bin_of(x, b)] += 1;
                        }
                        ck += 1;
                    }
                    if t < n_steps {
                        system.step_in_place(&mut state, schedule.at(t), &mut scratch, opts.dither, &mut rngs);
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![0u64; n_ck * n * b],
            |mut a, c| {
                a.iter_mut().zip(c).for_each(|(x, y)| *x += y);
                a
            },
        );
    let reference = reference_masses(&system.family, system.gamma, opts)?;
    let counts: Vec<Vec<Vec<u64>>> = (0..n_ck)
        .map(|c| {
            (0..n)
                .map(|i| counts_flat[(c * n + i) * b..(c * n + i + 1) * b].to_vec())
                .collect()
        })
        .collect();
    let nf = ensemble as f64;
    let distances: Vec<Vec<f64>> = counts
        .iter()
        .map(|per_node| {
            per_node
                .iter()
                .map(|h| h.iter().zip(&reference).map(|(&k, r)| (k as f64 / nf - r).abs()).sum())
                .collect()
        })
        .collect();
    let max_distance = distances
        .iter()
        .map(|d| d.iter().copied().fold(0.0, f64::max))
        .collect();
    let bf = b as f64;
    Ok(EnsembleReport {
        ensemble,
        n_steps,
        bins: b,
        checkpoints,
        counts,
        reference,
        distances,
        max_distance,
        noise_floor: (2.0 * bf * (1.0 - 1.0 / bf) / (std::f64::consts::PI * nf)).sqrt(),
        note: MARGINAL_NOTE,
    })
}

/// Histograms of a single node map driven by the same random streams the
/// ensemble simulation uses for `node`. With `α_c = 0` these coincide with
/// that node's marginals.
#[allow(clippy::too_many_arguments)]
pub fn single_map_histograms(
    family: &MapFamily,
    gamma: f64,
    node: usize,
    n_nodes: usize,
    ensemble: usize,
    n_steps: usize,
    seed: u64,
    opts: &EnsembleOptions,
) -> Result<Vec<Vec<u64>>> {
    if node >= n_nodes {
        return Err(invalid("node index out of range"));
    }
    family.instantiate(gamma)?;
    let b = opts.bins;
    let checkpoints: Vec<usize> = (0..=n_steps).step_by(opts.checkpoint_every.max(1)).collect();
    let mut counts = vec![vec![0u64; b]; checkpoints.len()];
    for m in 0..ensemble {
        let mut rngs = member_rngs(seed, m, n_nodes);
        let xs: Vec<f64> = rngs.iter_mut().map(|r| r.gen::<f64>()).collect();
        let rng = &mut rngs[node];
        let mut x = xs[node];
        let mut ck = 0;
        for t in 0..=n_steps {
            if ck < checkpoints.len() && checkpoints[ck] == t {
                counts[ck][bin_of(x, b)] += 1;
                ck += 1;
            }
            if t < n_steps {
                x = family.eval(gamma, x);
                if opts.dither > 0.0 {
                    x = wrap_unit(x + rng.gen_range(-opts.dither..opts.dither));
                }
            }
        }
    }
    Ok(counts)
}
