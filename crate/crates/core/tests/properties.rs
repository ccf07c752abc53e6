//! Property tests for the invariants that must hold for every input.

use nonstat_dyn::cones::{sample_cone_member, theta_holder, theta_plus, ConeParams};
use nonstat_dyn::density::{l1_distance, random_step_density};
use nonstat_dyn::network::{gen_schedule, ScheduleKind};
use nonstat_dyn::nonautonomous::{gen_sequence, IidLaw, SequenceSpec};
use nonstat_dyn::rng::substream;
use nonstat_dyn::transfer::{apply_family_sequence, apply_sequence, build_ulam, UlamScheme};
use nonstat_dyn::{Domain, GridDensity, MapFamily};
use proptest::prelude::*;

fn family(idx: usize) -> MapFamily {
    match idx {
        0 => MapFamily::doubling(),
        1 => MapFamily::piecewise_linear(),
        2 => MapFamily::tent(),
        3 => MapFamily::pomeau_manneville(0.5).unwrap(),
        4 => MapFamily::lsv(0.3).unwrap(),
        _ => MapFamily::smooth_circle(),
    }
}

fn param_in(f: &MapFamily, u: f64) -> f64 {
    let (lo, hi) = f.gamma_range;
    lo + (hi - lo) * (0.05 + 0.9 * u)
}

fn signed(values: Vec<f64>, domain: Domain) -> GridDensity {
    GridDensity::function(values, domain).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transfer_is_positive_mass_preserving_and_l1_contracting(
        fam in 0usize..6,
        u in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let f = family(fam);
        let op = build_ulam(&f.instantiate(param_in(&f, u)).unwrap(), 128, UlamScheme::Exact).unwrap();
        let mut rng = substream(seed, "prop", 0);
        let phi = random_step_density(128, f.domain, 6, &mut rng);
        let img = op.apply(&phi).unwrap();
        prop_assert!(img.values().iter().all(|&v| v >= 0.0));
        prop_assert!((img.mass() - phi.mass()).abs() <= 1e-10);
        let psi = random_step_density(128, f.domain, 6, &mut rng);
        let diff: Vec<f64> = phi.values().iter().zip(psi.values()).map(|(a, b)| a - b).collect();
        let d = signed(diff, f.domain);
        let ld = op.apply(&d).unwrap();
        prop_assert!(ld.l1_norm() <= d.l1_norm() + 1e-12);
    }

    #[test]
    fn sequence_application_matches_stepwise(seed in any::<u64>(), len in 1usize..6) {
        let f = MapFamily::pomeau_manneville(0.5).unwrap();
        let spec = SequenceSpec::Iid { law: IidLaw::Uniform, center: 0.2, radius: 0.1, seed };
        let gammas = gen_sequence(&spec, len).unwrap();
        let ops: Vec<_> = gammas
            .iter()
            .map(|&g| build_ulam(&f.instantiate(g).unwrap(), 64, UlamScheme::Exact).unwrap())
            .collect();
        let refs: Vec<_> = ops.iter().collect();
        let phi = random_step_density(64, Domain::Circle, 4, &mut substream(seed, "phi", 0));
        let mut manual = phi.clone();
        for op in &ops {
            manual = op.apply(&manual).unwrap();
        }
        let seq = apply_sequence(&refs, &phi).unwrap();
        prop_assert_eq!(seq.values(), manual.values());
        let free = apply_family_sequence(&f, &gammas, &phi, UlamScheme::Exact).unwrap();
        prop_assert!(l1_distance(&free, &manual).unwrap() < 1e-12);
    }

    #[test]
    fn iid_sequences_stay_in_the_ball(seed in any::<u64>(), radius in 0.0f64..0.2, two_point in any::<bool>()) {
        let law = if two_point { IidLaw::TwoPoint } else { IidLaw::Uniform };
        let spec = SequenceSpec::Iid { law, center: 0.25, radius, seed };
        let g = gen_sequence(&spec, 200).unwrap();
        prop_assert!(g.iter().all(|x| (x - 0.25).abs() <= radius + 1e-15));
        prop_assert_eq!(g, gen_sequence(&spec, 200).unwrap());
    }

    #[test]
    fn theta_plus_is_a_projective_pseudometric(seed in any::<u64>(), c in 0.1f64..10.0) {
        let cone = ConeParams::new(2.0, 1.0, 0.1, 0.75).unwrap();
        let mut rng = substream(seed, "theta", 0);
        let p = sample_cone_member(128, Domain::Circle, &cone, &mut rng);
        let q = sample_cone_member(128, Domain::Circle, &cone, &mut rng);
        let r = sample_cone_member(128, Domain::Circle, &cone, &mut rng);
        let pq = theta_plus(&p, &q).unwrap().theta;
        prop_assert!((pq - theta_plus(&q, &p).unwrap().theta).abs() <= 1e-9);
        let pr = theta_plus(&p, &r).unwrap().theta;
        let rq = theta_plus(&r, &q).unwrap().theta;
        prop_assert!(pq <= pr + rq + 1e-9);
        prop_assert_eq!(theta_plus(&p, &p.scaled(c)).unwrap().theta, 0.0);
        prop_assert!(pq <= theta_holder(&p, &q, &cone).unwrap().theta + 1e-9);
    }

    #[test]
    fn schedules_have_zero_diagonal_and_binary_entries(
        seed in any::<u64>(),
        n in 2usize..7,
        p in 0.0f64..0.99,
    ) {
        let s = gen_schedule(&ScheduleKind::Bursty { persistence: p, fail_prob: 0.1 }, n, 200, seed).unwrap();
        for t in 0..200 {
            let a = s.at(t);
            prop_assert!(a.iter().all(|&v| v <= 1));
            prop_assert!((0..n).all(|i| a[i * n + i] == 0));
        }
        prop_assert_eq!(&s, &gen_schedule(&ScheduleKind::Bursty { persistence: p, fail_prob: 0.1 }, n, 200, seed).unwrap());
    }

    #[test]
    fn csv_and_json_round_trip(seed in any::<u64>()) {
        let phi = random_step_density(40, Domain::Interval, 5, &mut substream(seed, "io", 0));
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        let back = GridDensity::read_csv(&buf[..], Domain::Interval).unwrap();
        prop_assert_eq!(back.values(), phi.values());
        let json = phi.to_json().unwrap();
        let parsed = GridDensity::from_json(&json).unwrap();
        prop_assert_eq!(parsed.values(), phi.values());
    }
}
