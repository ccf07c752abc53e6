//! Configuration, runners and artifact writing behind the `nonstat-dyn`
//! binary.
//!
//! A run reads an optional TOML file, applies command-line overrides (flags
//! win), validates the result and writes CSV/JSON artifacts plus
//! `manifest.json` into `$NONSTAT_DYN_OUT/<output>`. Every CSV starts with a
//! `# manifest: <run id>` line, where the run id hashes the tool version and
//! the fully resolved configuration. Wall-clock timings go to `timings.json`,
//! which the manifest does not checksum, so reruns reproduce every
//! checksummed byte.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::birkhoff::{
    birkhoff_averages, covariance_decay, lp_distance, orbit, quasi_birkhoff_band, Measure, Observable,
};
use crate::cones::{cone_image_check, contraction_and_diameter, ConeParams, DEFAULT_MIN_CELLS};
use crate::density::{random_step_density, GridDensity};
use crate::error::Error;
use crate::maps::{Domain, MapFamily};
use crate::network::{gen_schedule, simulate_ensemble, Coupling, EnsembleOptions, NetworkSystem, ScheduleKind};
use crate::nonautonomous::{
    adversarial_demo, doubling_gap_schedule, evolve_density, gen_sequence, stability_experiment, EvolveOptions, IidLaw,
    SequenceSpec, StabilityParams,
};
use crate::rng::substream;
use crate::transfer::{
    build_ulam, fixed_density, lasota_yorke_fit, perturbation_probe, spectral_summary, UlamScheme, DEFAULT_FIXED_TOL,
    DEFAULT_MAX_ITER,
};

pub const OUTPUT_ENV: &str = "NONSTAT_DYN_OUT";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Invariant,
    Stability,
    Evolve,
    Adversarial,
    Birkhoff,
    Cone,
    Network,
    LyFit,
    PerturbProbe,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Invariant => "invariant",
            Self::Stability => "stability",
            Self::Evolve => "evolve",
            Self::Adversarial => "adversarial",
            Self::Birkhoff => "birkhoff",
            Self::Cone => "cone",
            Self::Network => "network",
            Self::LyFit => "ly-fit",
            Self::PerturbProbe => "perturb-probe",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilyConfig {
    pub name: String,
    pub kappa: f64,
    pub gamma_range: Option<(f64, f64)>,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            name: "doubling".into(),
            kappa: 0.5,
            gamma_range: None,
        }
    }
}

impl FamilyConfig {
    pub fn build(&self) -> crate::Result<MapFamily> {
        let f = MapFamily::by_name(&self.name, self.kappa)?;
        Ok(match self.gamma_range {
            Some((lo, hi)) => f.with_gamma_range(lo, hi),
            None => f,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    pub n_steps: usize,
    pub n_seqs: usize,
    pub checkpoint_every: usize,
    pub avg_nodes: usize,
    pub initial: Vec<String>,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        Self {
            n_steps: 2000,
            n_seqs: 20,
            checkpoint_every: 10,
            avg_nodes: 64,
            initial: vec!["uniform".into(), "half".into()],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceKind {
    Constant,
    Iid,
    TwoPoint,
    Adversarial,
    Explicit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveConfig {
    pub sequence: SequenceKind,
    pub delta: f64,
    pub steps: usize,
    pub initial: String,
    pub checkpoint_every: usize,
    /// Hölder exponent for the recorded seminorm; 0 disables it
    pub alpha: f64,
    pub eps: f64,
    pub first_gap: u64,
    pub values: Vec<f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        Self {
            sequence: SequenceKind::Iid,
            delta: 0.01,
            steps: 1000,
            initial: "half".into(),
            checkpoint_every: 10,
            alpha: 0.5,
            eps: 0.1,
            first_gap: 100,
            values: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdversarialConfig {
    pub eps: f64,
    pub first_gap: u64,
    pub horizon: usize,
    pub near_zero_width: f64,
    pub initial: String,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            first_gap: 100,
            horizon: 10_000,
            near_zero_width: 0.05,
            initial: "uniform".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BirkhoffConfig {
    pub delta: f64,
    pub points: usize,
    pub steps: usize,
    pub observables: Vec<String>,
    pub band: f64,
    pub dither: f64,
    pub alpha: f64,
    pub cov_window: usize,
    pub cov_ensemble: usize,
    pub lp_balls: usize,
}

impl Default for BirkhoffConfig {
    fn default() -> Self {
        Self {
            delta: 0.01,
            points: 100,
            steps: 100_000,
            observables: vec!["x".into(), "cos2pix".into()],
            band: 0.05,
            dither: crate::birkhoff::DEFAULT_DITHER,
            alpha: 0.5,
            cov_window: 10,
            cov_ensemble: 10_000,
            lp_balls: crate::birkhoff::DEFAULT_BALLS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConeConfig {
    pub a: f64,
    pub nu: f64,
    pub rho0: f64,
    pub lambda: f64,
    pub min_cells: usize,
    pub samples: usize,
    pub pairs: usize,
    pub slack: f64,
    pub tolerance: f64,
    /// parameters of the operators in the contraction probe; empty means
    /// `gamma_hat` alone
    pub gammas: Vec<f64>,
}

impl Default for ConeConfig {
    fn default() -> Self {
        Self {
            a: 2.0,
            nu: 1.0,
            rho0: 0.1,
            lambda: 0.75,
            min_cells: DEFAULT_MIN_CELLS,
            samples: 100,
            pairs: 100,
            slack: 0.0,
            tolerance: 0.05,
            gammas: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub nodes: usize,
    pub alpha_c: f64,
    /// parameter of the node map
    pub gamma: f64,
    pub coupling: Coupling,
    pub schedule: ScheduleKind,
    pub ensemble: usize,
    pub steps: usize,
    pub bins: usize,
    pub checkpoint_every: usize,
    pub dither: f64,
    /// also run the uncoupled control with the same seeds
    pub control: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            nodes: 8,
            alpha_c: 0.01,
            gamma: 0.0,
            coupling: Coupling::Diffusive,
            schedule: ScheduleKind::Bursty {
                persistence: 0.9,
                fail_prob: 0.05,
            },
            ensemble: 10_000,
            steps: 10_000,
            bins: 32,
            checkpoint_every: 100,
            dither: crate::birkhoff::DEFAULT_DITHER,
            control: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LyFitConfig {
    pub alpha: f64,
    pub test_densities: usize,
    pub max_pieces: usize,
    pub powers: usize,
    pub slack: f64,
}

impl Default for LyFitConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            test_densities: 100,
            max_pieces: 8,
            powers: 10,
            slack: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub n_max: usize,
    pub seeds: usize,
    pub alpha: f64,
    pub initial: String,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_max: 30,
            seeds: 10,
            alpha: 0.5,
            initial: "half".into(),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cells: usize,
    pub gamma_hat: f64,
    pub deltas: Vec<f64>,
    /// output subdirectory; defaults to the experiment name
    pub output: Option<String>,
    pub family: FamilyConfig,
    pub stability: StabilityConfig,
    pub evolve: EvolveConfig,
    pub adversarial: AdversarialConfig,
    pub birkhoff: BirkhoffConfig,
    pub cone: ConeConfig,
    pub network: NetworkConfig,
    pub ly_fit: LyFitConfig,
    pub perturb_probe: ProbeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            cells: 1024,
            gamma_hat: 0.1,
            deltas: vec![0.02, 0.01, 0.005],
            output: None,
            family: FamilyConfig::default(),
            stability: StabilityConfig::default(),
            evolve: EvolveConfig::default(),
            adversarial: AdversarialConfig::default(),
            birkhoff: BirkhoffConfig::default(),
            cone: ConeConfig::default(),
            network: NetworkConfig::default(),
            ly_fit: LyFitConfig::default(),
            perturb_probe: ProbeConfig::default(),
        }
    }
}

/// Failure of a run, split by exit status.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    /// exit status 2
    #[error("config error: {0}")]
    Config(String),
    /// exit status 1
    #[error("{context}: {source}")]
    Numeric {
        context: String,
        #[source]
        source: Error,
    },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Numeric { .. } => 1,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> RunError {
    RunError::Config(msg.into())
}

/// Module errors caused by configured values count as config errors; the
/// rest are numeric failures.
fn module_err(kind: ExperimentKind, stage: &str) -> impl Fn(Error) -> RunError {
    let context = format!("{} / {stage}", kind.name());
    move |e| match e {
        Error::Hypothesis { .. }
        | Error::InvalidArgument(_)
        | Error::BranchCountMismatch { .. }
        | Error::BelowResolution { .. }
        | Error::GridMismatch { .. }
        | Error::Parse(_) => RunError::Config(format!("{context}: {e}")),
        other => RunError::Numeric {
            context: context.clone(),
            source: other,
        },
    }
}

fn check(cond: bool, field: &str, msg: &str) -> Result<(), RunError> {
    if cond {
        Ok(())
    } else {
        Err(cfg_err(format!("{field}: {msg}")))
    }
}

impl ExperimentConfig {
    /// Parses a TOML document; errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| cfg_err(e.to_string()))
    }

    /// Field-level checks shared by every experiment kind.
    pub fn validate(&self, kind: ExperimentKind) -> Result<(), RunError> {
        check(self.cells >= 2, "cells", "must be at least 2")?;
        check(self.gamma_hat.is_finite(), "gamma_hat", "must be finite")?;
        for (i, d) in self.deltas.iter().enumerate() {
            check(
                *d >= 0.0 && d.is_finite(),
                &format!("deltas[{i}]"),
                &format!("{d} must be a nonnegative number"),
            )?;
        }
        self.family.build().map_err(|e| cfg_err(format!("family: {e}")))?;
        if let Some(o) = &self.output {
            check(
                !o.is_empty() && !o.contains("..") && !Path::new(o).is_absolute(),
                "output",
                "must be a relative subdirectory name",
            )?;
        }
        match kind {
            ExperimentKind::Stability | ExperimentKind::PerturbProbe => {
                check(!self.deltas.is_empty(), "deltas", "must not be empty")?;
            }
            _ => {}
        }
        match kind {
            ExperimentKind::Stability => {
                let s = &self.stability;
                check(s.n_steps > 0, "stability.n_steps", "must be positive")?;
                check(s.n_seqs > 0, "stability.n_seqs", "must be positive")?;
                check(s.checkpoint_every > 0, "stability.checkpoint_every", "must be positive")?;
                check(s.avg_nodes > 0, "stability.avg_nodes", "must be positive")?;
                check(!s.initial.is_empty(), "stability.initial", "must not be empty")?;
            }
            ExperimentKind::Evolve => {
                let e = &self.evolve;
                check(e.delta >= 0.0, "evolve.delta", "must be nonnegative")?;
                check(e.eps > 0.0, "evolve.eps", "must be positive")?;
                check(e.checkpoint_every > 0, "evolve.checkpoint_every", "must be positive")?;
                check(e.alpha >= 0.0 && e.alpha <= 1.0, "evolve.alpha", "must lie in [0, 1]")?;
            }
            ExperimentKind::Adversarial => {
                let a = &self.adversarial;
                check(a.eps > 0.0, "adversarial.eps", "must be positive")?;
                check(a.first_gap > 0, "adversarial.first_gap", "must be positive")?;
                check(a.horizon > 0, "adversarial.horizon", "must be positive")?;
                check(
                    a.near_zero_width > 0.0 && a.near_zero_width < 1.0,
                    "adversarial.near_zero_width",
                    "must lie in (0, 1)",
                )?;
                check(
                    matches!(self.family.name.as_str(), "pm" | "pomeau_manneville"),
                    "family.name",
                    "the adversarial experiment uses the pm family",
                )?;
            }
            ExperimentKind::Birkhoff => {
                let b = &self.birkhoff;
                check(b.delta >= 0.0, "birkhoff.delta", "must be nonnegative")?;
                check(b.points > 0, "birkhoff.points", "must be positive")?;
                check(b.steps > 0, "birkhoff.steps", "must be positive")?;
                check(b.band >= 0.0, "birkhoff.band", "must be nonnegative")?;
                check(b.dither >= 0.0, "birkhoff.dither", "must be nonnegative")?;
                check(b.cov_ensemble >= 2, "birkhoff.cov_ensemble", "must be at least 2")?;
                check(!b.observables.is_empty(), "birkhoff.observables", "must not be empty")?;
            }
            ExperimentKind::Network => {
                let n = &self.network;
                check(n.nodes >= 2, "network.nodes", "must be at least 2")?;
                check(n.ensemble > 0, "network.ensemble", "must be positive")?;
                check(n.bins > 0, "network.bins", "must be positive")?;
                check(n.checkpoint_every > 0, "network.checkpoint_every", "must be positive")?;
                check(n.dither >= 0.0, "network.dither", "must be nonnegative")?;
            }
            ExperimentKind::LyFit => {
                let l = &self.ly_fit;
                check(l.alpha > 0.0 && l.alpha <= 1.0, "ly_fit.alpha", "must lie in (0, 1]")?;
                check(l.test_densities > 0, "ly_fit.test_densities", "must be positive")?;
                check(l.slack >= 0.0, "ly_fit.slack", "must be nonnegative")?;
            }
            ExperimentKind::PerturbProbe => {
                let p = &self.perturb_probe;
                check(p.n_max > 0, "perturb_probe.n_max", "must be positive")?;
                check(p.seeds > 0, "perturb_probe.seeds", "must be positive")?;
            }
            ExperimentKind::Cone => {
                let c = &self.cone;
                ConeParams::new(c.a, c.nu, c.rho0, c.lambda).map_err(|e| cfg_err(format!("cone: {e}")))?;
            }
            ExperimentKind::Invariant => {}
        }
        Ok(())
    }

    /// Hash of the tool version, experiment kind and resolved config.
    pub fn run_id(&self, kind: ExperimentKind) -> String {
        let mut h = Sha256::new();
        h.update(TOOL_VERSION.as_bytes());
        h.update(kind.name().as_bytes());
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(&h.finalize()[..8])
    }
}

/// Command-line overrides common to every subcommand.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// map family (doubling, pl, tent, pm, lsv, circle)
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// grid resolution
    #[arg(long)]
    pub cells: Option<usize>,
    /// root seed
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "gamma-hat", allow_hyphen_values = true)]
    pub gamma_hat: Option<f64>,
    /// comma-separated perturbation radii
    #[arg(long, allow_hyphen_values = true)]
    pub deltas: Option<String>,
    /// output subdirectory under $NONSTAT_DYN_OUT
    #[arg(long)]
    pub out: Option<String>,
    /// any config key, e.g. `--set network.alpha_c=0.02`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Clone, Debug)]
pub enum Command {
    /// fixed density and spectrum of one operator
    Invariant(Overrides),
    /// distances to the reference density as the perturbation shrinks
    Stability(Overrides),
    /// evolve one density along a parameter sequence
    Evolve(Overrides),
    /// alternating expanding / non-expanding blocks
    Adversarial(Overrides),
    /// time averages, covariance decay and weak distance
    Birkhoff(Overrides),
    /// cone invariance and projective contraction
    Cone(Overrides),
    /// coupled maps on a time-varying graph
    Network(Overrides),
    /// Lasota–Yorke coefficient fit
    LyFit(Overrides),
    /// deviation curves under random perturbations
    PerturbProbe(Overrides),
}

impl Command {
    pub fn split(self) -> (ExperimentKind, Overrides) {
        match self {
            Command::Invariant(o) => (ExperimentKind::Invariant, o),
            Command::Stability(o) => (ExperimentKind::Stability, o),
            Command::Evolve(o) => (ExperimentKind::Evolve, o),
            Command::Adversarial(o) => (ExperimentKind::Adversarial, o),
            Command::Birkhoff(o) => (ExperimentKind::Birkhoff, o),
            Command::Cone(o) => (ExperimentKind::Cone, o),
            Command::Network(o) => (ExperimentKind::Network, o),
            Command::LyFit(o) => (ExperimentKind::LyFit, o),
            Command::PerturbProbe(o) => (ExperimentKind::PerturbProbe, o),
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "nonstat-dyn",
    version,
    about = "Transfer-operator experiments for nonautonomous expanding maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

fn parse_scalar(raw: &str) -> toml::Value {
    // reuse the TOML grammar for numbers, booleans, arrays and inline tables
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), RunError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(cfg_err(format!("--set: malformed key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| cfg_err(format!("--set: `{p}` in `{key}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Merges the config file (if any) with flag overrides and deserializes.
pub fn resolve_config(ov: &Overrides) -> Result<ExperimentConfig, RunError> {
    let mut table = match &ov.config {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
            // typed parse first for line/column diagnostics
            ExperimentConfig::from_toml(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| cfg_err(e.to_string()))?
        }
        None => toml::Table::new(),
    };
    if let Some(f) = &ov.family {
        set_path(&mut table, "family.name", toml::Value::String(f.clone()))?;
    }
    if let Some(k) = ov.kappa {
        set_path(&mut table, "family.kappa", toml::Value::Float(k))?;
    }
    if let Some(c) = ov.cells {
        set_path(&mut table, "cells", toml::Value::Integer(c as i64))?;
    }
    if let Some(s) = ov.seed {
        let v = i64::try_from(s).map_err(|_| cfg_err("seed: must fit in a signed 64-bit integer"))?;
        set_path(&mut table, "seed", toml::Value::Integer(v))?;
    }
    if let Some(g) = ov.gamma_hat {
        set_path(&mut table, "gamma_hat", toml::Value::Float(g))?;
    }
    if let Some(d) = &ov.deltas {
        let mut vals = Vec::new();
        for (i, s) in d.split(',').enumerate() {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| cfg_err(format!("deltas[{i}]: `{s}` is not a number")))?;
            vals.push(toml::Value::Float(v));
        }
        set_path(&mut table, "deltas", toml::Value::Array(vals))?;
    }
    if let Some(o) = &ov.out {
        set_path(&mut table, "output", toml::Value::String(o.clone()))?;
    }
    for kv in &ov.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| cfg_err(format!("--set `{kv}`: expected KEY=VALUE")))?;
        set_path(&mut table, k.trim(), parse_scalar(v.trim()))?;
    }
    let text = toml::to_string(&table).map_err(|e| cfg_err(e.to_string()))?;
    ExperimentConfig::from_toml(&text).map_err(|e| match e {
        RunError::Config(m) => cfg_err(format!("after overrides: {m}")),
        other => other,
    })
}

/// A named file produced by a run.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// CSV text with a leading `# manifest:` line.
struct Csv {
    text: String,
}

impl Csv {
    fn new(run_id: &str, header: &[&str]) -> Self {
        let mut text = format!("# manifest: {run_id}\n");
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text }
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            self.text.push_str(&c);
            first = false;
        }
        self.text.push('\n');
    }

    fn artifact(self, name: &str) -> Artifact {
        Artifact {
            name: name.into(),
            bytes: self.text.into_bytes(),
        }
    }
}

fn json_artifact<T: Serialize>(name: &str, value: &T) -> Result<Artifact, RunError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| RunError::Numeric {
        context: format!("serializing {name}"),
        source: e.into(),
    })?;
    bytes.push(b'\n');
    Ok(Artifact {
        name: name.into(),
        bytes,
    })
}

fn density_csv(run_id: &str, phi: &GridDensity, name: &str) -> Artifact {
    let mut csv = Csv::new(run_id, &["index", "center", "density"]);
    for (i, v) in phi.values().iter().enumerate() {
        csv.row([i.to_string(), phi.cell_center(i).to_string(), v.to_string()]);
    }
    csv.artifact(name)
}

/// Named initial densities: `uniform`, `half` (`2·1_[0,1/2)`) and
/// `indicator:a:b` (normalized).
pub fn initial_density(name: &str, n: usize, domain: Domain) -> crate::Result<GridDensity> {
    match name {
        "uniform" => Ok(GridDensity::uniform(n, domain)),
        "half" => GridDensity::indicator(n, domain, 0.0, 0.5)?.normalized(),
        other => {
            let parts: Vec<&str> = other.split(':').collect();
            if parts.len() == 3 && parts[0] == "indicator" {
                let a: f64 = parts[1]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad bound in `{other}`")))?;
                let b: f64 = parts[2]
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad bound in `{other}`")))?;
                return GridDensity::indicator(n, domain, a, b)?.normalized();
            }
            Err(Error::InvalidArgument(format!("unknown initial density `{other}`")))
        }
    }
}

struct Stages {
    order: Vec<String>,
    timings: BTreeMap<String, f64>,
}

impl Stages {
    fn new() -> Self {
        Self {
            order: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let t = Instant::now();
        let out = f();
        self.order.push(name.into());
        self.timings.insert(name.into(), t.elapsed().as_secs_f64());
        out
    }
}

/// Everything a run produced, before it is written to disk.
#[derive(Debug)]
pub struct RunOutput {
    pub kind: ExperimentKind,
    pub run_id: String,
    pub artifacts: Vec<Artifact>,
    pub stages: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    /// short key figures echoed in the manifest
    pub summary: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    kind: &'static str,
    run_id: &'a str,
    config: &'a ExperimentConfig,
    stages: &'a [String],
    summary: &'a BTreeMap<String, serde_json::Value>,
    /// SHA-256 of every emitted artifact
    files: BTreeMap<&'a str, String>,
    timings_file: &'static str,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Runs one experiment in memory.
pub fn run(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<RunOutput, RunError> {
    cfg.validate(kind)?;
    let run_id = cfg.run_id(kind);
    let mut stages = Stages::new();
    let mut summary = BTreeMap::new();
    let artifacts = match kind {
        ExperimentKind::Invariant => run_invariant(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::Stability => run_stability(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::Evolve => run_evolve(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::Adversarial => run_adversarial(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::Birkhoff => run_birkhoff(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::Cone => run_cone(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::Network => run_network(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::LyFit => run_ly_fit(cfg, &run_id, &mut stages, &mut summary)?,
        ExperimentKind::PerturbProbe => run_probe(cfg, &run_id, &mut stages, &mut summary)?,
    };
    Ok(RunOutput {
        kind,
        run_id,
        artifacts,
        stages: stages.order,
        timings: stages.timings,
        summary,
    })
}

impl RunOutput {
    /// Manifest JSON bytes for this output.
    pub fn manifest(&self, cfg: &ExperimentConfig) -> Result<Artifact, RunError> {
        let files = self
            .artifacts
            .iter()
            .map(|a| (a.name.as_str(), sha256_hex(&a.bytes)))
            .collect();
        json_artifact(
            "manifest.json",
            &Manifest {
                tool: "nonstat-dyn",
                version: TOOL_VERSION,
                kind: self.kind.name(),
                run_id: &self.run_id,
                config: cfg,
                stages: &self.stages,
                summary: &self.summary,
                files,
                timings_file: "timings.json",
            },
        )
    }

    /// Writes artifacts, `manifest.json` and `timings.json` into `dir`.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, RunError> {
        let io = |e: std::io::Error| RunError::Numeric {
            context: format!("writing {}", dir.display()),
            source: e.into(),
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut written = Vec::new();
        let manifest = self.manifest(cfg)?;
        let timings = json_artifact("timings.json", &self.timings)?;
        for a in self.artifacts.iter().chain([&manifest, &timings]) {
            let p = dir.join(&a.name);
            std::fs::write(&p, &a.bytes).map_err(io)?;
            written.push(p);
        }
        Ok(written)
    }
}

/// `$NONSTAT_DYN_OUT/<output or experiment name>`, with `runs` as the
/// default root.
pub fn output_dir(kind: ExperimentKind, cfg: &ExperimentConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"));
    root.join(cfg.output.clone().unwrap_or_else(|| kind.name().to_string()))
}

/// Entry point of the binary; returns the process exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let mut args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    // accept `nonstat-dyn run <subcommand> …` as well
    if args.get(1).is_some_and(|a| a == "run") {
        args.remove(1);
    }
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (kind, ov) = cli.command.split();
    let result = resolve_config(&ov).and_then(|cfg| {
        let out = run(kind, &cfg)?;
        let dir = output_dir(kind, &cfg);
        out.write(&cfg, &dir)?;
        Ok((out, dir))
    });
    match result {
        Ok((out, dir)) => {
            let mut line = format!("{} run {} -> {}", kind.name(), out.run_id, dir.display());
            for (k, v) in &out.summary {
                let _ = write!(line, "\n  {k} = {v}");
            }
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

type Summary = BTreeMap<String, serde_json::Value>;

fn put(summary: &mut Summary, key: &str, v: impl Into<serde_json::Value>) {
    summary.insert(key.into(), v.into());
}

fn reference_density(
    family: &MapFamily,
    gamma: f64,
    n: usize,
    kind: ExperimentKind,
) -> Result<(GridDensity, f64), RunError> {
    let map = family.instantiate(gamma).map_err(module_err(kind, "reference map"))?;
    let op = build_ulam(&map, n, UlamScheme::Exact).map_err(module_err(kind, "reference operator"))?;
    let fd = fixed_density(&op, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER).map_err(module_err(kind, "reference density"))?;
    Ok((fd.density, fd.residual))
}

fn run_invariant(
    cfg: &ExperimentConfig,
    id: &str,
    st: &mut Stages,
    sm: &mut Summary,
) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Invariant;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let map = family.instantiate(cfg.gamma_hat).map_err(module_err(k, "map"))?;
    let op = st
        .time("build", || build_ulam(&map, cfg.cells, UlamScheme::Exact))
        .map_err(module_err(k, "build"))?;
    let fd = st
        .time("fixed_density", || {
            fixed_density(&op, DEFAULT_FIXED_TOL, DEFAULT_MAX_ITER)
        })
        .map_err(module_err(k, "fixed_density"))?;
    let spec = st
        .time("spectrum", || spectral_summary(&op, 6))
        .map_err(module_err(k, "spectrum"))?;
    let l1_uniform = crate::density::l1_distance(&fd.density, &GridDensity::uniform(cfg.cells, family.domain))
        .map_err(module_err(k, "distance"))?;
    put(sm, "residual", fd.residual);
    put(sm, "iterations", fd.iterations);
    put(sm, "gap", spec.gap);
    #[derive(Serialize)]
    struct Report<'a> {
        family: &'static str,
        gamma: f64,
        cells: usize,
        nnz: usize,
        residual: f64,
        iterations: usize,
        l1_to_uniform: f64,
        spectrum: &'a crate::transfer::SpectralSummary,
    }
    Ok(vec![
        density_csv(id, &fd.density, "density.csv"),
        json_artifact(
            "report.json",
            &Report {
                family: family.name(),
                gamma: cfg.gamma_hat,
                cells: cfg.cells,
                nnz: op.nnz(),
                residual: fd.residual,
                iterations: fd.iterations,
                l1_to_uniform: l1_uniform,
                spectrum: &spec,
            },
        )?,
    ])
}

fn run_stability(
    cfg: &ExperimentConfig,
    id: &str,
    st: &mut Stages,
    sm: &mut Summary,
) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Stability;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let s = &cfg.stability;
    let phi0s = s
        .initial
        .iter()
        .map(|n| initial_density(n, cfg.cells, family.domain))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(module_err(k, "stability.initial"))?;
    let params = StabilityParams {
        gamma_hat: cfg.gamma_hat,
        deltas: cfg.deltas.clone(),
        n_steps: s.n_steps,
        n_seqs: s.n_seqs,
        seed: cfg.seed,
        n_cells: cfg.cells,
        checkpoint_every: s.checkpoint_every,
        avg_nodes: s.avg_nodes,
        scheme: UlamScheme::Exact,
    };
    let table = st
        .time("stability", || stability_experiment(&family, &params, &phi0s))
        .map_err(module_err(k, "stability_experiment"))?;
    let mut csv = Csv::new(
        id,
        &[
            "delta",
            "stationary_distance",
            "point_mass_distance",
            "worst_post_transient",
            "n_bar_max",
            "max_mass_error",
        ],
    );
    for r in &table.rows {
        csv.row([
            r.delta.to_string(),
            r.stationary_distance.to_string(),
            r.point_mass_distance.to_string(),
            r.worst_post_transient.to_string(),
            r.n_bar_max.to_string(),
            r.max_mass_error.to_string(),
        ]);
    }
    put(sm, "rows", table.rows.len());
    if let (Some(first), Some(last)) = (table.rows.first(), table.rows.last()) {
        if first.stationary_distance > 0.0 {
            put(
                sm,
                "stationary_ratio_last_first",
                last.stationary_distance / first.stationary_distance,
            );
        }
    }
    Ok(vec![
        csv.artifact("stability.csv"),
        json_artifact("stability.json", &table)?,
    ])
}

fn run_evolve(cfg: &ExperimentConfig, id: &str, st: &mut Stages, sm: &mut Summary) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Evolve;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let e = &cfg.evolve;
    let spec = match e.sequence {
        SequenceKind::Constant => SequenceSpec::Constant { gamma: cfg.gamma_hat },
        SequenceKind::Iid | SequenceKind::TwoPoint => SequenceSpec::Iid {
            law: if e.sequence == SequenceKind::Iid {
                IidLaw::Uniform
            } else {
                IidLaw::TwoPoint
            },
            center: cfg.gamma_hat,
            radius: e.delta,
            seed: cfg.seed,
        },
        SequenceKind::Adversarial => SequenceSpec::Adversarial {
            eps: e.eps,
            schedule: doubling_gap_schedule(e.first_gap, e.steps as u64),
        },
        SequenceKind::Explicit => SequenceSpec::Explicit {
            values: e.values.clone(),
        },
    };
    let gammas = gen_sequence(&spec, e.steps).map_err(module_err(k, "sequence"))?;
    let phi0 = initial_density(&e.initial, cfg.cells, family.domain).map_err(module_err(k, "evolve.initial"))?;
    let reference_gamma = match e.sequence {
        SequenceKind::Adversarial => e.eps,
        _ => cfg.gamma_hat,
    };
    let (reference, _) = reference_density(&family, reference_gamma, cfg.cells, k)?;
    let opts = EvolveOptions {
        checkpoint_every: e.checkpoint_every,
        seminorm: (e.alpha > 0.0).then_some((e.alpha, family.eps0)),
        keep_densities: false,
        unchecked: e.sequence == SequenceKind::Adversarial,
        scheme: UlamScheme::Exact,
    };
    let trace = st
        .time("evolve", || {
            evolve_density(&family, &gammas, &phi0, Some(&reference), &opts)
        })
        .map_err(module_err(k, "evolve_density"))?;
    let mut csv = Csv::new(id, &["step", "gamma", "distance", "mass", "seminorm"]);
    for (i, &step) in trace.steps.iter().enumerate() {
        let g = if step == 0 { f64::NAN } else { gammas[step - 1] };
        csv.row([
            step.to_string(),
            if g.is_nan() { String::new() } else { g.to_string() },
            trace.distances.get(i).map(|v| v.to_string()).unwrap_or_default(),
            trace.masses[i].to_string(),
            trace.seminorms.get(i).map(|v| v.to_string()).unwrap_or_default(),
        ]);
    }
    put(sm, "max_mass_error", trace.max_mass_error());
    if let Some((nbar, worst)) = trace.post_transient() {
        put(sm, "n_bar", nbar);
        put(sm, "worst_post_transient", worst);
    }
    let mut out = vec![csv.artifact("trace.csv")];
    if let Some(f) = &trace.final_density {
        out.push(density_csv(id, f, "final_density.csv"));
    }
    out.push(json_artifact("trace.json", &trace)?);
    Ok(out)
}

fn run_adversarial(
    cfg: &ExperimentConfig,
    id: &str,
    st: &mut Stages,
    sm: &mut Summary,
) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Adversarial;
    let a = &cfg.adversarial;
    let schedule = doubling_gap_schedule(a.first_gap, a.horizon as u64);
    let phi0 = initial_density(&a.initial, cfg.cells, Domain::Circle).map_err(module_err(k, "adversarial.initial"))?;
    let rep = st
        .time("adversarial", || {
            adversarial_demo(cfg.family.kappa, a.eps, &schedule, &phi0, a.horizon, a.near_zero_width)
        })
        .map_err(module_err(k, "adversarial_demo"))?;
    let mut curve = Csv::new(id, &["step", "mass_near_zero", "distance_to_plus"]);
    for (i, (m, d)) in rep.mass_near_zero.iter().zip(&rep.distance).enumerate() {
        curve.row([i.to_string(), m.to_string(), d.to_string()]);
    }
    let mut blocks = Csv::new(id, &["step", "sign", "mass_near_zero", "distance_to_plus"]);
    for b in &rep.block_ends {
        blocks.row([
            b.step.to_string(),
            b.sign.to_string(),
            b.mass_near_zero.to_string(),
            b.distance.to_string(),
        ]);
    }
    put(sm, "concentrated", rep.concentrated);
    put(sm, "equilibrated", rep.equilibrated);
    put(sm, "two_regimes", rep.two_regimes);
    Ok(vec![
        curve.artifact("curve.csv"),
        blocks.artifact("blocks.csv"),
        json_artifact("report.json", &rep)?,
    ])
}

fn run_birkhoff(
    cfg: &ExperimentConfig,
    id: &str,
    st: &mut Stages,
    sm: &mut Summary,
) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Birkhoff;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let b = &cfg.birkhoff;
    let psis = b
        .observables
        .iter()
        .map(|n| Observable::by_name(n, cfg.cells, family.domain, b.alpha, family.eps0))
        .collect::<crate::Result<Vec<_>>>()
        .map_err(module_err(k, "birkhoff.observables"))?;
    let spec = SequenceSpec::Iid {
        law: IidLaw::Uniform,
        center: cfg.gamma_hat,
        radius: b.delta,
        seed: cfg.seed,
    };
    let gammas = gen_sequence(&spec, b.steps.max(b.cov_window)).map_err(module_err(k, "sequence"))?;
    let (phi_ref, _) = st.time("reference", || reference_density(&family, cfg.gamma_hat, cfg.cells, k))?;
    let run = st
        .time("averages", || {
            birkhoff_averages(&family, &gammas, b.points, &psis, b.steps, cfg.seed, b.dither)
        })
        .map_err(module_err(k, "birkhoff_averages"))?;

    let mut finals = Csv::new(
        id,
        &["observable", "point", "x0", "average", "tail_min", "tail_max", "inside"],
    );
    #[derive(Serialize)]
    struct ObsReport {
        observable: String,
        band: crate::birkhoff::BandReport,
        covariance: crate::birkhoff::CovarianceTable,
        lln: LlnBrief,
    }
    #[derive(Serialize)]
    struct LlnBrief {
        c: f64,
        q: f64,
        partial_sum: f64,
        closed_form: f64,
        tail_bound: f64,
        verdict: crate::birkhoff::LlnVerdict,
    }
    let mut reports = Vec::new();
    let mut cov_csv = Csv::new(id, &["observable", "lag", "max_abs_r", "max_se", "fit"]);
    for (o, psi) in psis.iter().enumerate() {
        let band = quasi_birkhoff_band(psi, &phi_ref, b.band).map_err(module_err(k, "band"))?;
        let avg = &run.observables[o];
        let rep = band.evaluate(avg);
        for p in 0..avg.finals.len() {
            let inside = avg.tail_min[p] >= band.lower && avg.tail_max[p] <= band.upper;
            finals.row([
                psi.name().to_string(),
                p.to_string(),
                run.initial_points[p].to_string(),
                avg.finals[p].to_string(),
                avg.tail_min[p].to_string(),
                avg.tail_max[p].to_string(),
                (inside as u8).to_string(),
            ]);
        }
        let cov = st
            .time(&format!("covariance:{}", psi.name()), || {
                covariance_decay(
                    &family,
                    &gammas,
                    psi,
                    b.cov_window,
                    b.cov_ensemble,
                    cfg.seed,
                    b.dither,
                    UlamScheme::Exact,
                )
            })
            .map_err(module_err(k, "covariance_decay"))?;
        for lag in 0..cov.lag_max.len() {
            let se = (0..cov.lag_max.len() - lag)
                .map(|i| cov.se[i][i + lag])
                .fold(0.0, f64::max);
            csv_cov_row(
                &mut cov_csv,
                psi.name(),
                lag,
                cov.lag_max[lag],
                se,
                cov.c * cov.q.powi(lag as i32),
            );
        }
        let lln = cov.lln();
        put(sm, &format!("{}_pass_fraction", psi.name()), rep.pass_fraction);
        put(sm, &format!("{}_q", psi.name()), cov.q);
        reports.push(ObsReport {
            observable: psi.name().to_string(),
            band: rep,
            lln: LlnBrief {
                c: lln.c,
                q: lln.q,
                partial_sum: *lln.partial_sums.last().unwrap_or(&0.0),
                closed_form: lln.closed_form,
                tail_bound: lln.tail_bound,
                verdict: lln.verdict,
            },
            covariance: cov,
        });
    }
    let mut traj = Csv::new(id, &["observable", "point", "step", "average"]);
    for (o, psi) in psis.iter().enumerate() {
        for (p, tr) in run.observables[o].trajectories.iter().enumerate().take(10) {
            for (c, v) in tr.iter().enumerate() {
                traj.row([
                    psi.name().to_string(),
                    p.to_string(),
                    run.checkpoints[c].to_string(),
                    v.to_string(),
                ]);
            }
        }
    }
    let lp = st
        .time("lp_distance", || -> crate::Result<_> {
            let pts = orbit(&family, &gammas, run.initial_points[0], b.steps, cfg.seed, b.dither)?;
            let emp = lp_distance(
                &Measure::empirical(&pts),
                &Measure::Density(&phi_ref),
                b.lp_balls,
                family.domain,
            )?;
            let own = lp_distance(
                &Measure::cell_atoms(&phi_ref),
                &Measure::Density(&phi_ref),
                b.lp_balls,
                family.domain,
            )?;
            Ok((emp, own))
        })
        .map_err(module_err(k, "lp_distance"))?;
    put(sm, "lp_orbit", lp.0.estimate);
    #[derive(Serialize)]
    struct Report {
        observables: Vec<ObsReport>,
        lp_orbit: crate::birkhoff::LpReport,
        lp_reference_atoms: crate::birkhoff::LpReport,
    }
    Ok(vec![
        finals.artifact("averages.csv"),
        traj.artifact("trajectories.csv"),
        cov_csv.artifact("covariance.csv"),
        json_artifact(
            "report.json",
            &Report {
                observables: reports,
                lp_orbit: lp.0,
                lp_reference_atoms: lp.1,
            },
        )?,
    ])
}

fn csv_cov_row(csv: &mut Csv, name: &str, lag: usize, r: f64, se: f64, fit: f64) {
    csv.row([
        name.to_string(),
        lag.to_string(),
        r.to_string(),
        se.to_string(),
        fit.to_string(),
    ]);
}

fn run_cone(cfg: &ExperimentConfig, _id: &str, st: &mut Stages, sm: &mut Summary) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Cone;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let c = &cfg.cone;
    let cone = ConeParams::new(c.a, c.nu, c.rho0, c.lambda)
        .map_err(module_err(k, "cone"))?
        .with_min_cells(c.min_cells);
    let gammas = if c.gammas.is_empty() {
        vec![cfg.gamma_hat]
    } else {
        c.gammas.clone()
    };
    let ops = st
        .time("build", || {
            gammas
                .iter()
                .map(|&g| build_ulam(&family.instantiate(g)?, cfg.cells, UlamScheme::Exact))
                .collect::<crate::Result<Vec<_>>>()
        })
        .map_err(module_err(k, "build"))?;
    let image = st
        .time("image_check", || {
            cone_image_check(&ops[0], &cone, c.samples, cfg.seed, c.slack)
        })
        .map_err(module_err(k, "cone_image_check"))?;
    let refs: Vec<_> = ops.iter().collect();
    let contraction = st
        .time("contraction", || {
            contraction_and_diameter(&refs, &cone, c.pairs, cfg.seed, c.tolerance)
        })
        .map_err(module_err(k, "contraction_and_diameter"))?;
    put(sm, "image_check_passed", image.passed);
    put(sm, "q_hat", contraction.q_hat);
    put(sm, "d_hat", contraction.d_hat);
    #[derive(Serialize)]
    struct Report<'a> {
        cone: ConeParams,
        gammas: &'a [f64],
        image_check: crate::cones::ImageCheckReport,
        contraction: crate::cones::ContractionReport,
    }
    Ok(vec![json_artifact(
        "report.json",
        &Report {
            cone,
            gammas: &gammas,
            image_check: image,
            contraction,
        },
    )?])
}

fn run_network(cfg: &ExperimentConfig, id: &str, st: &mut Stages, sm: &mut Summary) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::Network;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let n = &cfg.network;
    let system = NetworkSystem::new(family.clone(), n.gamma, n.alpha_c, n.coupling, n.nodes)
        .map_err(module_err(k, "network"))?;
    let schedule =
        gen_schedule(&n.schedule, n.nodes, n.steps.max(1), cfg.seed).map_err(module_err(k, "network.schedule"))?;
    let opts = EnsembleOptions {
        checkpoint_every: n.checkpoint_every,
        bins: n.bins,
        dither: n.dither,
        reference_cells: cfg.cells,
    };
    let coupled = st
        .time("coupled", || {
            simulate_ensemble(&system, &schedule, n.ensemble, n.steps, cfg.seed, &opts)
        })
        .map_err(module_err(k, "simulate_ensemble"))?;
    let control = if n.control {
        let sys0 = NetworkSystem::new(family, n.gamma, 0.0, n.coupling, n.nodes).map_err(module_err(k, "network"))?;
        Some(
            st.time("control", || {
                simulate_ensemble(&sys0, &schedule, n.ensemble, n.steps, cfg.seed, &opts)
            })
            .map_err(module_err(k, "simulate_ensemble"))?,
        )
    } else {
        None
    };
    let mut hist = Csv::new(id, &["run", "step", "node", "bin", "count"]);
    let mut dist = Csv::new(id, &["run", "step", "node", "distance"]);
    for (label, r) in std::iter::once(("coupled", &coupled)).chain(control.iter().map(|c| ("control", c))) {
        for (c, &step) in r.checkpoints.iter().enumerate() {
            for node in 0..n.nodes {
                for (bin, cnt) in r.counts[c][node].iter().enumerate() {
                    hist.row([
                        label.into(),
                        step.to_string(),
                        node.to_string(),
                        bin.to_string(),
                        cnt.to_string(),
                    ]);
                }
                dist.row([
                    label.into(),
                    step.to_string(),
                    node.to_string(),
                    r.distances[c][node].to_string(),
                ]);
            }
        }
    }
    put(sm, "worst_coupled", coupled.worst());
    put(sm, "noise_floor", coupled.noise_floor);
    if let Some(c) = &control {
        put(sm, "worst_control", c.worst());
    }
    #[derive(Serialize)]
    struct Brief<'a> {
        worst: f64,
        noise_floor: f64,
        checkpoints: &'a [usize],
        max_distance: &'a [f64],
    }
    #[derive(Serialize)]
    struct Report<'a> {
        nodes: usize,
        alpha_c: f64,
        expansion_margin: f64,
        schedule_frames: usize,
        max_in_degree: usize,
        note: &'static str,
        coupled: Brief<'a>,
        control: Option<Brief<'a>>,
    }
    let brief = |r: &'_ crate::network::EnsembleReport| -> (f64, f64) { (r.worst(), r.noise_floor) };
    let (w, f) = brief(&coupled);
    let report = Report {
        nodes: n.nodes,
        alpha_c: n.alpha_c,
        expansion_margin: system.expansion_margin(),
        schedule_frames: schedule.n_frames(),
        max_in_degree: schedule.max_in_degree(),
        note: coupled.note,
        coupled: Brief {
            worst: w,
            noise_floor: f,
            checkpoints: &coupled.checkpoints,
            max_distance: &coupled.max_distance,
        },
        control: control.as_ref().map(|c| Brief {
            worst: c.worst(),
            noise_floor: c.noise_floor,
            checkpoints: &c.checkpoints,
            max_distance: &c.max_distance,
        }),
    };
    Ok(vec![
        hist.artifact("histograms.csv"),
        dist.artifact("distances.csv"),
        json_artifact("summary.json", &report)?,
    ])
}

fn run_ly_fit(cfg: &ExperimentConfig, id: &str, st: &mut Stages, sm: &mut Summary) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::LyFit;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let l = &cfg.ly_fit;
    let map = family.instantiate(cfg.gamma_hat).map_err(module_err(k, "map"))?;
    let op = build_ulam(&map, cfg.cells, UlamScheme::Exact).map_err(module_err(k, "build"))?;
    let tests: Vec<GridDensity> = (0..l.test_densities)
        .map(|i| {
            let mut rng = substream(cfg.seed, "ly-test", i as u64);
            random_step_density(cfg.cells, family.domain, l.max_pieces, &mut rng)
        })
        .collect();
    let fit = st
        .time("fit", || {
            lasota_yorke_fit(&op, l.alpha, family.eps0, &tests, l.powers, l.slack)
        })
        .map_err(module_err(k, "lasota_yorke_fit"))?;
    let mut csv = Csv::new(id, &["power", "worst_ratio"]);
    for (i, r) in fit.iterated_worst_ratio.iter().enumerate() {
        csv.row([(i + 1).to_string(), r.to_string()]);
    }
    put(sm, "eta", fit.eta);
    put(sm, "c", fit.c);
    put(sm, "iterated_ok", fit.iterated_ok);
    Ok(vec![csv.artifact("iterated.csv"), json_artifact("fit.json", &fit)?])
}

fn run_probe(cfg: &ExperimentConfig, id: &str, st: &mut Stages, sm: &mut Summary) -> Result<Vec<Artifact>, RunError> {
    let k = ExperimentKind::PerturbProbe;
    let family = cfg.family.build().map_err(module_err(k, "family"))?;
    let p = &cfg.perturb_probe;
    let phi = initial_density(&p.initial, cfg.cells, family.domain).map_err(module_err(k, "perturb_probe.initial"))?;
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut reports = Vec::new();
    for &d in &cfg.deltas {
        let r = st
            .time(&format!("probe:{d}"), || {
                perturbation_probe(
                    &family,
                    cfg.gamma_hat,
                    d,
                    p.n_max,
                    &phi,
                    &seeds,
                    p.alpha,
                    UlamScheme::Exact,
                )
            })
            .map_err(module_err(k, "perturbation_probe"))?;
        reports.push(r);
    }
    let mut csv = Csv::new(id, &["delta", "n", "mean", "spread", "envelope"]);
    for r in &reports {
        for i in 0..r.mean.len() {
            csv.row([
                r.delta.to_string(),
                (i + 1).to_string(),
                r.mean[i].to_string(),
                r.spread[i].to_string(),
                (r.c_tilde * r.s_tilde.powi(i as i32 + 1) * r.phi_norm).to_string(),
            ]);
        }
        put(sm, &format!("fit_residual_{}", r.delta), r.fit_residual);
    }
    Ok(vec![csv.artifact("curves.csv"), json_artifact("probe.json", &reports)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_fields_are_rejected_with_position() {
        let e = ExperimentConfig::from_toml("cells = 64\n[family]\nnmae = \"pm\"\n").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("nmae") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn negative_delta_names_the_field() {
        let ov = Overrides {
            deltas: Some("0.02,-0.01".into()),
            ..Default::default()
        };
        let cfg = resolve_config(&ov).unwrap();
        let e = cfg.validate(ExperimentKind::Stability).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("deltas[1]"), "{e}");
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "cells = 64\nseed = 3\n[network]\nnodes = 4\n").unwrap();
        let ov = Overrides {
            config: Some(path),
            cells: Some(128),
            set: vec!["network.alpha_c=0.02".into(), "family.name=\"pm\"".into()],
            ..Default::default()
        };
        let cfg = resolve_config(&ov).unwrap();
        assert_eq!((cfg.cells, cfg.seed, cfg.network.nodes), (128, 3, 4));
        assert_eq!(cfg.network.alpha_c, 0.02);
        assert_eq!(cfg.family.name, "pm");
    }

    #[test]
    fn bare_string_values_in_set() {
        let ov = Overrides {
            set: vec!["family.name=tent".into()],
            ..Default::default()
        };
        assert_eq!(resolve_config(&ov).unwrap().family.name, "tent");
    }

    #[test]
    fn invariant_run_reports_uniform_doubling_density() {
        let cfg = ExperimentConfig {
            cells: 256,
            gamma_hat: 0.0,
            ..Default::default()
        };
        let out = run(ExperimentKind::Invariant, &cfg).unwrap();
        assert!(out.summary["residual"].as_f64().unwrap() < 1e-12);
        let csv = String::from_utf8(out.artifacts[0].bytes.clone()).unwrap();
        assert!(csv.starts_with(&format!("# manifest: {}\n", out.run_id)));
    }

    #[test]
    fn reruns_are_byte_identical() {
        let cfg = ExperimentConfig {
            cells: 128,
            ..Default::default()
        };
        let a = run(ExperimentKind::LyFit, &cfg).unwrap();
        let b = run(ExperimentKind::LyFit, &cfg).unwrap();
        assert_eq!(a.manifest(&cfg).unwrap().bytes, b.manifest(&cfg).unwrap().bytes);
    }

    #[test]
    fn hypothesis_errors_exit_with_config_status() {
        let cfg = ExperimentConfig {
            gamma_hat: 5.0,
            ..Default::default()
        };
        assert_eq!(run(ExperimentKind::Invariant, &cfg).unwrap_err().exit_code(), 2);
    }
}
