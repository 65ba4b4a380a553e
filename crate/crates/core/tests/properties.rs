use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ghzverify::adversary::{
    decompose_vs_ghz, helstrom_guess_probability, theta_cheat_pass_curve, xy_cheat_pass_curve, Coalition,
};
use ghzverify::analytics::{
    dishonest_fidelity_bound, gme_threshold, honest_fidelity_bound, max_tolerable_loss, verdict_from_estimate,
    Decision, TrustModel,
};
use ghzverify::protocol::{
    exact_pass_probability_theta, exact_pass_probability_xy, sample_angles, ProtocolKind,
};
use ghzverify::qstate::{
    fidelity, ghz_state, partial_trace, rz_all, sample_outcomes, setting_pass_probability, sum_parity,
    DensityMatrix, PureState,
};
use ghzverify::simnet::{run_session, SessionConfig};
use ghzverify::sources::{
    calibrate_to_fidelity, higher_order_fidelity, prepare, NoiseFamily, SourceModel,
};

fn kind() -> impl Strategy<Value = ProtocolKind> {
    prop_oneof![Just(ProtocolKind::Theta), Just(ProtocolKind::Xy)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_assignments_are_valid(seed in any::<u64>(), n in 2usize..9, k in kind()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = sample_angles(k, n, &mut rng).unwrap();
        let t = a.radians();
        prop_assert_eq!(t.len(), n);
        prop_assert!(t.iter().all(|x| (0.0..PI).contains(x)));
        prop_assert_eq!(sum_parity(&t, 1e-9), Some(a.parity()));
        if k == ProtocolKind::Xy {
            let ys = t.iter().filter(|&&x| x == FRAC_PI_2).count();
            prop_assert!(t.iter().all(|&x| x == 0.0 || x == FRAC_PI_2));
            prop_assert_eq!(ys % 2, 0);
        }
    }

    #[test]
    fn rz_composes(seed in any::<u64>(), n in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = PureState::random(n, &mut rng).unwrap();
        let a: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..PI)).collect();
        let b: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0.0..PI)).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let twice = rz_all(&rz_all(&psi, &a).unwrap(), &b).unwrap();
        let once = rz_all(&psi, &ab).unwrap();
        for (x, y) in twice.amplitudes().iter().zip(once.amplitudes()) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn rz_rotates_ghz_phase(theta in 0.0..PI, a in proptest::collection::vec(0.0..PI, 4)) {
        let rotated = rz_all(&ghz_state(4, theta).unwrap(), &a).unwrap();
        let expect = ghz_state(4, theta - a.iter().sum::<f64>()).unwrap();
        prop_assert!((rotated.inner(&expect).unwrap().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pure_fidelity_is_overlap(seed in any::<u64>(), n in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, q) = (PureState::random(n, &mut rng).unwrap(), PureState::random(n, &mut rng).unwrap());
        let f = fidelity(&p.to_density().unwrap(), &q.to_density().unwrap()).unwrap();
        prop_assert!((f - p.inner(&q).unwrap().norm_sqr()).abs() < 1e-9);
    }

    #[test]
    fn reduced_ghz_self_fidelity(n in 2usize..7, keep_mask in 1u32..64) {
        let keep: Vec<usize> = (0..n).filter(|j| keep_mask >> j & 1 == 1).collect();
        prop_assume!(!keep.is_empty());
        let r = partial_trace(&ghz_state(n, 0.0).unwrap().to_density().unwrap(), &keep).unwrap();
        prop_assert!((fidelity(&r, &r).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn honest_bound_holds(seed in any::<u64>(), n in 2usize..5, w in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = ghz_state(n, 0.0).unwrap().to_density().unwrap();
        let r = DensityMatrix::random(n, &mut rng).unwrap();
        let rho = DensityMatrix::mixture(&[(w, &g), (1.0 - w, &r)]).unwrap();
        let f = fidelity(&rho, &g).unwrap();
        prop_assert!(f >= honest_fidelity_bound(exact_pass_probability_theta(&rho).unwrap()) - 1e-9);
        prop_assert!(f >= honest_fidelity_bound(exact_pass_probability_xy(&rho).unwrap()) - 1e-9);
    }

    #[test]
    fn decomposition_norms_sum_to_one(seed in any::<u64>(), theta in 0.0..PI) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = PureState::random(4, &mut rng).unwrap();
        for d in [vec![3], vec![2, 3], vec![1, 2, 3]] {
            let dec = decompose_vs_ghz(&psi, &Coalition::new(4, &d, 0).unwrap(), theta).unwrap();
            prop_assert!((dec.p_theta + dec.q_theta + dec.chi_norm_sqr() - 1.0).abs() < 1e-9);
            let p = helstrom_guess_probability(&dec).unwrap();
            prop_assert!((0.5..=1.0 + 1e-12).contains(&p));
        }
    }

    #[test]
    fn verdict_is_monotone(est in 0.5f64..1.0, bump in 0.0f64..0.2, se in 0.0f64..0.05, k in kind()) {
        let d = |e: f64| verdict_from_estimate(e, se, k, TrustModel::DishonestAllowed, 0.0, 3.0).unwrap().decision;
        if d(est) == Decision::GmeVerified {
            prop_assert_eq!(d(est + bump), Decision::GmeVerified);
        }
    }

    #[test]
    fn bisection_inverts_threshold(p in 0.8184f64..0.9999, k in kind()) {
        let t0 = gme_threshold(k, TrustModel::DishonestAllowed, 0.0).unwrap();
        prop_assume!(p >= t0);
        let l = max_tolerable_loss(p, k, TrustModel::DishonestAllowed).unwrap();
        prop_assert!((gme_threshold(k, TrustModel::DishonestAllowed, l).unwrap() - p).abs() < 1e-6);
    }

    #[test]
    fn bound_ordering(p in 0.0f64..=1.0) {
        prop_assert!(dishonest_fidelity_bound(p) <= honest_fidelity_bound(p));
    }

    #[test]
    fn thresholds_nondecreasing(a in 0.0f64..0.5, b in 0.0f64..0.5) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(theta_cheat_pass_curve(lo).unwrap() <= theta_cheat_pass_curve(hi).unwrap());
        prop_assert!(xy_cheat_pass_curve(lo).unwrap() <= xy_cheat_pass_curve(hi).unwrap());
    }

    #[test]
    fn higher_order_strictly_decreasing(a in 0.001f64..0.998, step in 0.0005f64..0.001) {
        for n in [3, 4] {
            prop_assert!(higher_order_fidelity(n, a + step).unwrap() < higher_order_fidelity(n, a).unwrap());
        }
    }

    #[test]
    fn calibration_round_trips(n in 2usize..6, f in 0.5f64..=1.0, dep in any::<bool>()) {
        let fam = if dep { NoiseFamily::Depolarized } else { NoiseFamily::Dephased };
        let rho = prepare(&calibrate_to_fidelity(n, f, fam).unwrap()).unwrap();
        rho.validate().unwrap();
        let g = ghz_state(n, 0.0).unwrap().to_density().unwrap();
        prop_assert!((fidelity(&rho, &g).unwrap() - f).abs() < 1e-9);
    }

    #[test]
    fn prepared_sources_are_valid(n in 2usize..6, p in 0.0f64..=1.0, theta in 0.0..(2.0 * PI)) {
        for m in [
            SourceModel::IdealGhz { n },
            SourceModel::DephasedGhz { n, p },
            SourceModel::DepolarizedGhz { n, v: p },
            SourceModel::BiseparableGhzPlus { n },
            SourceModel::RotatedBellPlus { n, theta },
        ] {
            prop_assert!(prepare(&m).unwrap().validate().is_ok());
        }
    }
}

/// Sampled pass frequency matches the exact per-setting value within 4/√N.
#[test]
fn setting_probability_matches_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let shots = 100_000;
    for _ in 0..20 {
        let rho = DensityMatrix::random(3, &mut rng).unwrap();
        let a = sample_angles(ProtocolKind::Theta, 3, &mut rng).unwrap();
        let exact = setting_pass_probability(&rho, a.angles()).unwrap();
        let mut pass = 0u32;
        for _ in 0..shots {
            let y = sample_outcomes(&rho, a.angles(), &mut rng).unwrap();
            pass += u32::from(y.iter().fold(0, |x, b| x ^ b) == a.parity());
        }
        let freq = pass as f64 / shots as f64;
        assert!((freq - exact).abs() < 4.0 / (shots as f64).sqrt(), "{freq} vs {exact}");
    }
}

/// Identical configurations serialize to identical transcripts.
#[test]
fn sessions_are_seed_deterministic() {
    let strategy = ghzverify::adversary::make_strategy("projective-cheat:lambda=0.2").unwrap();
    let cfg = SessionConfig::cheating(4, ProtocolKind::Theta, strategy, 3000, 99);
    let dump = || {
        let t = run_session(&cfg).unwrap();
        let mut buf = Vec::new();
        t.write_messages(&mut buf).unwrap();
        buf.extend(serde_json::to_vec(&t.summary()).unwrap());
        buf
    };
    assert_eq!(dump(), dump());
}
