use std::collections::BTreeMap;

use proptest::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qobs::channels::KrausChannel;
use qobs::dynamics::{periodic_timeline, ControlSchedule};
use qobs::lie::{dynamical_lie_algebra, observability_spaces, OperatorSubspace};
use qobs::matrix::{frobenius, matrix_from_json, matrix_to_json, pauli, trace_product, Hermitian};
use qobs::random::{random_channel, random_density, random_hermitian, random_luders, random_unitary};
use qobs::reconstruction::{reconstruct, synthetic_record};
use qobs::scenario::{parse_samples, parse_scenario, parse_schedule_file, write_samples};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_is_trace_preserving_and_dual(seed in any::<u64>(), n in 2usize..5, m in 1usize..4, r in 1usize..3) {
        let mut g = rng(seed);
        let ch = random_channel(&mut g, n, m, r);
        let rho = random_density(&mut g, n);
        let s = random_hermitian(&mut g, n);
        let out = ch.apply(&rho).unwrap();
        prop_assert!((out.trace() - 1.0).abs() < 1e-12);
        let lhs = trace_product(s.matrix(), out.matrix());
        let rhs = trace_product(ch.dual_apply(&s).unwrap().matrix(), rho.matrix());
        prop_assert!((lhs - rhs).norm() < 1e-11);
        let total: f64 = (0..m).map(|k| ch.probability(rho.matrix(), k)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matrix_json_is_lossless(seed in any::<u64>(), n in 1usize..5) {
        let u = random_unitary(&mut rng(seed), n);
        prop_assert_eq!(matrix_from_json(&matrix_to_json(&u)).unwrap(), u);
    }

    #[test]
    fn channel_json_is_lossless(seed in any::<u64>(), n in 2usize..4) {
        let ch = random_channel(&mut rng(seed), n, 2, 2);
        let back = KrausChannel::from_json(&ch.to_json()).unwrap();
        prop_assert_eq!(back.to_json(), ch.to_json());
    }

    #[test]
    fn generic_pair_generates_su(seed in any::<u64>(), n in 2usize..4) {
        let mut g = rng(seed);
        let hams = vec![random_hermitian(&mut g, n), random_hermitian(&mut g, n)];
        let l = dynamical_lie_algebra(&hams).unwrap();
        prop_assert!(l.traceless_rank() == n * n - 1);
        for h in &hams {
            prop_assert!(l.residual(&qobs::lie::times_i(h)) < 1e-9);
        }
    }

    #[test]
    fn luders_spaces_are_nested(seed in any::<u64>(), n in 2usize..4) {
        let mut g = rng(seed);
        let h = random_hermitian(&mut g, n);
        let l = dynamical_lie_algebra(&[h]).unwrap();
        let ch = random_luders(&mut g, n);
        let s = random_hermitian(&mut g, n).traceless();
        let spaces = observability_spaces(&l, &s, &ch, 3).unwrap();
        for w in spaces.windows(2).skip(1) {
            prop_assert!(w[0].containment_residual(&w[1]) < 1e-8);
        }
    }

    #[test]
    fn evolution_keeps_spectrum(seed in any::<u64>(), t in 0.0f64..20.0) {
        let mut g = rng(seed);
        let mut hams = BTreeMap::new();
        hams.insert("a".to_string(), random_hermitian(&mut g, 3));
        hams.insert("b".to_string(), random_hermitian(&mut g, 3));
        let sched = ControlSchedule::new(hams, periodic_timeline(&["a", "b"], 0.7, 20.0)).unwrap();
        let rho = random_density(&mut g, 3);
        let later = sched.evolve(&rho, t).unwrap();
        for (x, y) in rho.eigenvalues().iter().zip(later.eigenvalues()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn samples_round_trip(values in prop::collection::vec((0.0f64..1e3, -1e6f64..1e6), 0..40)) {
        let mut buf = Vec::new();
        write_samples(&mut buf, &values).unwrap();
        let back = parse_samples(buf.as_slice()).unwrap();
        prop_assert_eq!(back, values);
    }

    #[test]
    fn parsers_reject_garbage_without_panicking(text in ".{0,200}") {
        let _ = parse_scenario(&text);
        let _ = parse_schedule_file(&text);
        let _ = parse_samples(text.as_bytes());
        let _ = matrix_from_json(&text);
        let _ = KrausChannel::from_json(&text);
    }
}

#[test]
fn reconstruction_recovers_random_states() {
    let mut g = rng(11);
    let mut hams = BTreeMap::new();
    hams.insert("x".to_string(), Hermitian::new(pauli::x()).unwrap());
    hams.insert("y".to_string(), Hermitian::new(pauli::y()).unwrap());
    let sched = ControlSchedule::new(hams, periodic_timeline(&["x", "y"], 1.0, 4.0)).unwrap();
    let s = Hermitian::new(pauli::z()).unwrap();
    for _ in 0..10 {
        let rho = random_density(&mut g, 2);
        let times: Vec<f64> = (0..=800).map(|k| k as f64 * 0.005).collect();
        let record = synthetic_record(&sched, &s, &rho, &times).unwrap();
        let r = reconstruct(&record, &sched, &s, 4.0, 801).unwrap();
        assert_close(frobenius(&(r.state.matrix() - rho.matrix())), 1e-9);
    }
}

#[test]
fn su_space_is_full() {
    for n in 2..5 {
        let su = OperatorSubspace::su(n).unwrap();
        assert_eq!(su.rank(), n * n - 1);
        assert_eq!(su.traceless_rank(), n * n - 1);
    }
}

fn assert_close(err: f64, tol: f64) {
    assert!(err < tol, "error {err:.3e} above {tol:.1e}");
}
