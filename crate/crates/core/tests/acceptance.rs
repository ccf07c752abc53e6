//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Thresholds are the pinned desk-scale values.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nonstat_dyn::birkhoff::{
    birkhoff_averages, covariance_decay, lln_summability, lp_distance, orbit, quasi_birkhoff_band, LlnVerdict, Measure,
    Observable, DEFAULT_BALLS, DEFAULT_DITHER,
};
use nonstat_dyn::cones::{
    cone_image_check, contraction_and_diameter, sample_cone_member, theta_holder, theta_plus, ConeParams,
};
use nonstat_dyn::density::{l1_distance, random_step_density};
use nonstat_dyn::experiment::{self, ExperimentConfig, ExperimentKind};
use nonstat_dyn::network::{gen_schedule, simulate_ensemble, Coupling, EnsembleOptions, NetworkSystem, ScheduleKind};
use nonstat_dyn::nonautonomous::{
    adversarial_demo, doubling_gap_schedule, gen_sequence, stability_experiment, IidLaw, SequenceSpec, StabilityParams,
};
use nonstat_dyn::rng::substream;
use nonstat_dyn::transfer::{
    apply_sequence, averaged_operator, build_ulam, fixed_density, lasota_yorke_fit, perturbation_probe, Averaging,
    UlamScheme,
};
use nonstat_dyn::{Domain, GridDensity, MapFamily, Result};

const EXACT: UlamScheme = UlamScheme::Exact;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn pm() -> MapFamily {
    MapFamily::pomeau_manneville(0.5).unwrap()
}

fn half(cells: usize) -> GridDensity {
    GridDensity::indicator(cells, Domain::Circle, 0.0, 0.5)
        .unwrap()
        .normalized()
        .unwrap()
}

fn reference(family: &MapFamily, gamma: f64, cells: usize) -> Result<GridDensity> {
    Ok(fixed_density(&build_ulam(&family.instantiate(gamma)?, cells, EXACT)?, 1e-12, 100_000)?.density)
}

fn golden_invariant() -> Result<Outcome> {
    let t = Instant::now();
    let op = build_ulam(&MapFamily::doubling().instantiate(0.0)?, 1024, EXACT)?;
    let fd = fixed_density(&op, 1e-12, 100_000)?;
    let err = l1_distance(&fd.density, &GridDensity::uniform(1024, Domain::Circle))?;
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        err <= 1e-10 && fd.residual <= 1e-12 && secs < 1.0,
        format!("L1 error {err:.1e}, residual {:.1e}, {secs:.3} s", fd.residual),
    ))
}

fn operator_axioms() -> Result<Outcome> {
    let cells = 512;
    let families = [
        MapFamily::doubling(),
        MapFamily::piecewise_linear(),
        MapFamily::tent(),
        pm(),
        MapFamily::lsv(0.5)?,
        MapFamily::smooth_circle(),
    ];
    let (mut negatives, mut worst_mass, mut worst_expansion) = (0usize, 0.0f64, f64::NEG_INFINITY);
    let mut p4 = true;
    for (fi, f) in families.iter().enumerate() {
        let (lo, hi) = f.gamma_range;
        let params: Vec<f64> = [0.1, 0.5, 0.9].iter().map(|u| lo + (hi - lo) * u).collect();
        let ops = params
            .iter()
            .map(|&g| build_ulam(&f.instantiate(g)?, cells, EXACT))
            .collect::<Result<Vec<_>>>()?;
        for (pi, op) in ops.iter().enumerate() {
            let mut rng = substream(7, "axioms", (fi * 3 + pi) as u64);
            for _ in 0..100 {
                let phi = random_step_density(cells, f.domain, 8, &mut rng);
                let psi = random_step_density(cells, f.domain, 8, &mut rng);
                let img = op.apply(&phi)?;
                negatives += img.values().iter().filter(|&&v| v < 0.0).count();
                worst_mass = worst_mass.max((img.mass() - phi.mass()).abs());
                let diff = phi.combine(1.0, &psi, -1.0)?;
                worst_expansion = worst_expansion.max(op.apply(&diff)?.l1_norm() - diff.l1_norm());
            }
        }
        let seq: Vec<_> = (0..12).map(|k| &ops[k % 3]).collect();
        let phi = random_step_density(cells, f.domain, 8, &mut substream(7, "p4", fi as u64));
        let mut manual = phi.clone();
        for op in &seq {
            manual = op.apply(&manual)?;
        }
        p4 &= apply_sequence(&seq, &phi)?.values() == manual.values();
    }
    Ok(outcome(
        negatives == 0 && worst_mass <= 1e-10 && worst_expansion <= 1e-12 && p4,
        format!(
            "negative entries {negatives}, mass error {worst_mass:.1e}, L1 expansion {worst_expansion:.1e}, sequential identity {p4}"
        ),
    ))
}

fn stationary_trend() -> Result<Outcome> {
    let t = Instant::now();
    let f = pm();
    let cells = 1024;
    let base = reference(&f, 0.1, cells)?;
    let mut d = Vec::new();
    for delta in [0.02, 0.01, 0.005] {
        let op = averaged_operator(&f, &Averaging::uniform(0.1, delta, 64), cells, EXACT)?;
        d.push(l1_distance(&fixed_density(&op, 1e-12, 100_000)?.density, &base)?);
    }
    let secs = t.elapsed().as_secs_f64();
    let monotone = d[0] > d[1] && d[1] > d[2];
    let ratio = d[2] / d[0];
    Ok(outcome(
        monotone && ratio <= 0.6 && secs < 60.0,
        format!(
            "distances {:.3e} {:.3e} {:.3e}, ratio {ratio:.3}, {secs:.1} s",
            d[0], d[1], d[2]
        ),
    ))
}

fn sequence_robustness() -> Result<Outcome> {
    let cells = 1024;
    let params = StabilityParams {
        gamma_hat: 0.1,
        deltas: vec![0.02, 0.01, 0.005],
        n_steps: 2000,
        n_seqs: 20,
        seed: 1,
        n_cells: cells,
        checkpoint_every: 10,
        avg_nodes: 64,
        scheme: EXACT,
    };
    let phi0s = [GridDensity::uniform(cells, Domain::Circle), half(cells)];
    let table = stability_experiment(&pm(), &params, &phi0s)?;
    let worst = |i: usize| table.rows[i].worst_post_transient;
    let ratio = worst(2) / worst(0);
    let mass = table.rows.iter().map(|r| r.max_mass_error).fold(0.0, f64::max);
    Ok(outcome(
        ratio <= 0.6 && mass <= 1e-9,
        format!(
            "worst {:.3e} → {:.3e}, ratio {ratio:.3}, mass error {mass:.1e}",
            worst(0),
            worst(2)
        ),
    ))
}

fn perturbation_shape() -> Result<Outcome> {
    let f = MapFamily::doubling();
    let phi = half(1024);
    let seeds: Vec<u64> = (0..10).collect();
    let reports = [0.02, 0.01, 0.005]
        .iter()
        .map(|&d| perturbation_probe(&f, 0.0, d, 30, &phi, &seeds, 0.5, EXACT))
        .collect::<Result<Vec<_>>>()?;
    let mut shrinks = true;
    for w in reports.windows(2) {
        for n in 0..30 {
            let tol = 2.0 * w[0].spread[n].max(w[1].spread[n]);
            shrinks &= w[1].mean[n] <= w[0].mean[n] + tol;
        }
    }
    let dominated = reports.iter().all(|r| r.dominated);
    let worst_fit = reports.iter().map(|r| r.fit_residual).fold(0.0, f64::max);
    Ok(outcome(
        shrinks && dominated && worst_fit < 0.2,
        format!("shrinks {shrinks}, dominated {dominated}, worst normalized fit residual {worst_fit:.3}"),
    ))
}

fn lasota_yorke() -> Result<Outcome> {
    let cells = 1024;
    let f = MapFamily::doubling();
    let op = build_ulam(&f.instantiate(0.0)?, cells, EXACT)?;
    let tests: Vec<_> = (0..100)
        .map(|k| random_step_density(cells, Domain::Circle, 8, &mut substream(1, "ly", k)))
        .collect();
    let fit = lasota_yorke_fit(&op, 0.5, f.eps0, &tests, 10, 0.05)?;
    Ok(outcome(
        fit.eta < 1.0 && fit.iterated_ok,
        format!(
            "η̂ {:.3}, Ĉ {:.3}, iterated bound holds {}",
            fit.eta, fit.c, fit.iterated_ok
        ),
    ))
}

fn cone_machinery() -> Result<Outcome> {
    let cells = 512;
    let cone = ConeParams::new(2.0, 1.0, 0.1, 0.75)?;
    let mut rng = substream(1, "cone-acceptance", 0);
    let (mut axioms, mut ordered) = (true, true);
    for _ in 0..100 {
        let p = sample_cone_member(cells, Domain::Circle, &cone, &mut rng);
        let q = sample_cone_member(cells, Domain::Circle, &cone, &mut rng);
        let r = sample_cone_member(cells, Domain::Circle, &cone, &mut rng);
        let pq = theta_plus(&p, &q)?.theta;
        axioms &= (pq - theta_plus(&q, &p)?.theta).abs() <= 1e-9;
        axioms &= pq <= theta_plus(&p, &r)?.theta + theta_plus(&r, &q)?.theta + 1e-9;
        axioms &= theta_plus(&p, &p.scaled(3.7))?.theta.abs() <= 1e-9;
        ordered &= pq <= theta_holder(&p, &q, &cone)?.theta + 1e-9;
    }
    let op = build_ulam(&MapFamily::doubling().instantiate(0.0)?, cells, EXACT)?;
    let img = cone_image_check(&op, &cone, 100, 1, 0.0)?;
    let c = contraction_and_diameter(&[&op], &cone, 100, 1, 0.05)?;
    let bound = c.q_hat < 1.0 && c.q_hat <= 1.0 - (-c.d_hat).exp() + 0.05;
    Ok(outcome(
        axioms && ordered && img.passed && bound,
        format!(
            "θ₊ axioms {axioms}, θ₊ ≤ θ_(a,ν) {ordered}, image worst a {:.3} ≤ {:.3}, q̂ {:.3} D̂ {:.3}",
            img.worst_a_min, img.threshold, c.q_hat, c.d_hat
        ),
    ))
}

fn quasi_birkhoff() -> Result<Outcome> {
    let t = Instant::now();
    let f = pm();
    let cells = 1024;
    let n = 100_000;
    let spec = SequenceSpec::Iid {
        law: IidLaw::Uniform,
        center: 0.1,
        radius: 0.01,
        seed: 1,
    };
    let gammas = gen_sequence(&spec, n)?;
    let phi = reference(&f, 0.1, cells)?;
    let psis = [
        Observable::identity(cells, Domain::Circle, 0.5, f.eps0)?,
        Observable::cosine(cells, Domain::Circle, 0.5, f.eps0)?,
    ];
    let run = birkhoff_averages(&f, &gammas, 100, &psis, n, 1, DEFAULT_DITHER)?;
    let mut fractions = Vec::new();
    for (o, psi) in psis.iter().enumerate() {
        fractions.push(
            quasi_birkhoff_band(psi, &phi, 0.05)?
                .evaluate(&run.observables[o])
                .pass_fraction,
        );
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        fractions.iter().all(|&p| p >= 0.95) && secs < 120.0,
        format!(
            "pass fractions x {:.2}, cos {:.2}, {secs:.1} s",
            fractions[0], fractions[1]
        ),
    ))
}

fn covariance() -> Result<Outcome> {
    let cells = 1024;
    let doubling = MapFamily::doubling();
    let psi = Observable::cosine(cells, Domain::Circle, 0.5, doubling.eps0)?;
    let cov = covariance_decay(&doubling, &[0.0; 10], &psi, 10, 10_000, 1, DEFAULT_DITHER, EXACT)?;
    let mut worst_z: f64 = 0.0;
    for i in 0..=10 {
        for j in 0..=10 {
            if i != j {
                worst_z = worst_z.max(cov.r[i][j].abs() / cov.se[i][j]);
            }
        }
    }
    let f = pm();
    let spec = SequenceSpec::Iid {
        law: IidLaw::Uniform,
        center: 0.1,
        radius: 0.01,
        seed: 1,
    };
    let gammas = gen_sequence(&spec, 10)?;
    let psi = Observable::cosine(cells, Domain::Circle, 0.5, f.eps0)?;
    let fit = covariance_decay(&f, &gammas, &psi, 10, 10_000, 1, DEFAULT_DITHER, EXACT)?;
    let lln = fit.lln();
    let unit = lln_summability(1.0, fit.q);
    let series_gap = (unit.partial_sums[unit.partial_sums.len() - 1] + (1.0 - fit.q).ln()).abs();
    Ok(outcome(
        worst_z < 3.0 && fit.q < 1.0 && lln.verdict == LlnVerdict::Summable && series_gap <= 1e-6,
        format!(
            "doubling worst |R|/se {worst_z:.2}, pm q̂ {:.3} ({:?}), series gap {series_gap:.1e}",
            fit.q, lln.verdict
        ),
    ))
}

fn adversarial() -> Result<Outcome> {
    let schedule = doubling_gap_schedule(100, 10_000);
    let phi0 = GridDensity::uniform(2048, Domain::Circle);
    let r = adversarial_demo(0.5, 0.1, &schedule, &phi0, 10_000, 0.05)?;
    Ok(outcome(
        r.concentrated && r.equilibrated && r.two_regimes,
        format!(
            "concentrated {}, equilibrated {}, two regimes {}",
            r.concentrated, r.equilibrated, r.two_regimes
        ),
    ))
}

fn weak_distance() -> Result<Outcome> {
    let f = MapFamily::doubling();
    let n = 100_000;
    let spec = SequenceSpec::Iid {
        law: IidLaw::Uniform,
        center: 0.0,
        radius: 0.01,
        seed: 1,
    };
    let gammas = gen_sequence(&spec, n)?;
    let phi = reference(&f, 0.0, 1024)?;
    let pts = orbit(&f, &gammas, 0.3, n, 1, DEFAULT_DITHER)?;
    let lp = lp_distance(
        &Measure::empirical(&pts),
        &Measure::Density(&phi),
        DEFAULT_BALLS,
        Domain::Circle,
    )?;
    let own = lp_distance(
        &Measure::cell_atoms(&phi),
        &Measure::Density(&phi),
        DEFAULT_BALLS,
        Domain::Circle,
    )?;
    Ok(outcome(
        lp.estimate < 0.05 && own.estimate <= own.ball_radius,
        format!(
            "orbit estimate {:.3}, self-distance {:.3} ≤ radius {:.4}",
            lp.estimate, own.estimate, own.ball_radius
        ),
    ))
}

fn network() -> Result<Outcome> {
    let t = Instant::now();
    let nodes = 8;
    let steps = 10_000;
    let schedule = gen_schedule(
        &ScheduleKind::Bursty {
            persistence: 0.9,
            fail_prob: 0.05,
        },
        nodes,
        steps,
        1,
    )?;
    let opts = EnsembleOptions::default();
    let mut worst = Vec::new();
    let mut floor = 0.0;
    for alpha in [0.01, 0.0] {
        let system = NetworkSystem::new(MapFamily::doubling(), 0.0, alpha, Coupling::Diffusive, nodes)?;
        let rep = simulate_ensemble(&system, &schedule, 10_000, steps, 1, &opts)?;
        worst.push(rep.worst());
        floor = rep.noise_floor;
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(outcome(
        worst[0] < 0.1 && worst[1] <= 2.0 * floor && secs < 300.0,
        format!(
            "coupled worst {:.4}, control worst {:.4} vs 2×floor {:.4}, {secs:.0} s",
            worst[0],
            worst[1],
            2.0 * floor
        ),
    ))
}

const SMALL_CONFIG: &str = r#"
cells = 128
[stability]
n_steps = 60
n_seqs = 2
avg_nodes = 16
[evolve]
steps = 60
[adversarial]
horizon = 800
[birkhoff]
points = 10
steps = 2000
cov_ensemble = 500
[cone]
samples = 5
pairs = 5
[network]
ensemble = 100
steps = 200
[ly_fit]
test_densities = 10
[perturb_probe]
n_max = 10
seeds = 3
"#;

fn reproducibility() -> Result<Outcome> {
    let kinds = [
        ExperimentKind::Invariant,
        ExperimentKind::Stability,
        ExperimentKind::Evolve,
        ExperimentKind::Adversarial,
        ExperimentKind::Birkhoff,
        ExperimentKind::Cone,
        ExperimentKind::Network,
        ExperimentKind::LyFit,
        ExperimentKind::PerturbProbe,
    ];
    let mut differing = Vec::new();
    for kind in kinds {
        let mut cfg = ExperimentConfig::from_toml(SMALL_CONFIG).expect("valid config");
        if kind == ExperimentKind::Adversarial {
            cfg.family.name = "pm".into();
        }
        let snapshot = || -> Vec<(String, Vec<u8>)> {
            let out = experiment::run(kind, &cfg).expect("experiment runs");
            let mut files: Vec<_> = out
                .artifacts
                .iter()
                .map(|a| (a.name.clone(), a.bytes.clone()))
                .collect();
            let m = out.manifest(&cfg).expect("manifest");
            files.push((m.name, m.bytes));
            files
        };
        if snapshot() != snapshot() {
            differing.push(kind.name());
        }
    }
    Ok(outcome(
        differing.is_empty(),
        format!("{} experiments rerun, differing: {differing:?}", kinds.len()),
    ))
}

type Criterion = fn() -> Result<Outcome>;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 13] = [
        ("golden invariant density", golden_invariant),
        ("operator axioms", operator_axioms),
        ("stationary density trend in δ", stationary_trend),
        ("robustness along random sequences", sequence_robustness),
        ("perturbation bound shape", perturbation_shape),
        ("Lasota–Yorke fit", lasota_yorke),
        ("cone machinery", cone_machinery),
        ("quasi-Birkhoff band", quasi_birkhoff),
        ("covariance decay", covariance),
        ("adversarial counterexample", adversarial),
        ("weak distance of an orbit", weak_distance),
        ("network marginals", network),
        ("reproducibility", reproducibility),
    ];
    let mut failures = 0;
    let mut total = Duration::ZERO;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = check();
        total += t.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failures += usize::from(!pass);
        println!(
            "{} criterion {:>2} {name}: {detail} [{:.1} s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "{} of {} criteria passed in {:.0} s",
        criteria.len() - failures,
        criteria.len(),
        total.as_secs_f64()
    );
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
