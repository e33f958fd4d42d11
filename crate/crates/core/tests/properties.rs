use lhs_core::features::odd_harmonics;
use lhs_core::measurements::{ginibre, sample_povm, sample_qudit_pvm, MeasurementClass};
use lhs_core::model::{hidden_state, init_model, HiddenStateParam, ModelConfig};
use lhs_core::quantum::{quantum_assemblage, trace_distance, CMatrix};
use lhs_core::states::{isotropic3, werner};
use lhs_core::sweep::{estimate_threshold, SweepRecord};
use lhs_core::trainer::{batch_loss, Verdict};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn hermitian(d: usize, seed: u64) -> CMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ginibre(d, &mut rng);
    (&g + g.adjoint()) * Complex64::new(0.5, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trace_distance_is_a_metric(d in 2usize..5, s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>()) {
        let (a, b, c) = (hermitian(d, s1), hermitian(d, s2), hermitian(d, s3));
        let ab = trace_distance(&a, &b).unwrap();
        let ba = trace_distance(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
        prop_assert!(trace_distance(&a, &a).unwrap() <= 1e-12);
        let ac = trace_distance(&a, &c).unwrap();
        let cb = trace_distance(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn sampled_measurements_are_valid(d in 2usize..5, extra in 0usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pvm = sample_qudit_pvm(d, &mut rng);
        prop_assert!(pvm.validate().is_ok());
        prop_assert_eq!(pvm.n_outcomes(), d);
        let n = 2 + extra % (d * d - 1);
        let povm = sample_povm(d, n, &mut rng).unwrap();
        prop_assert!(povm.validate().is_ok());
        prop_assert_eq!(povm.n_outcomes(), n);
    }

    #[test]
    fn hidden_states_are_density_matrices(d in 2usize..5, seed in any::<u64>(), re in -3.0f64..3.0, im in -3.0f64..3.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ginibre(d, &mut rng);
        let s = hidden_state(&HiddenStateParam { m: m.clone() }).unwrap();
        prop_assert!((s.trace() - 1.0).abs() <= 1e-12);
        prop_assert!(s.min_eigenvalue() >= -1e-12);
        let t = hidden_state(&HiddenStateParam { m: m * Complex64::new(re, im) }).unwrap();
        let diff = (s.matrix() - t.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-12);
    }

    #[test]
    fn quantum_assemblage_elements_are_positive(v in 0.0f64..=1.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = isotropic3(v).unwrap();
        let m = sample_povm(3, 5, &mut rng).unwrap();
        let total: f64 = quantum_assemblage(&state.rho, 3, 3, &m)
            .unwrap()
            .iter()
            .map(|e| {
                assert!(e.min_eigenvalue() >= -1e-12);
                e.trace()
            })
            .sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn odd_harmonics_are_odd(order in (0usize..4).prop_map(|k| 2 * k + 1), x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0) {
        let n = (x * x + y * y + z * z).sqrt();
        prop_assume!(n > 1e-3);
        let g = [x / n, y / n, z / n];
        let f = odd_harmonics(order, &g).unwrap();
        let h = odd_harmonics(order, &[-g[0], -g[1], -g[2]]).unwrap();
        prop_assert_eq!(f.len(), (order + 1) * (order + 2) / 2);
        for (a, b) in f.iter().zip(&h) {
            prop_assert_eq!(*a, -*b);
        }
    }

    #[test]
    fn batch_loss_is_permutation_invariant(seed in any::<u64>(), v in 0.0f64..=1.0) {
        let class = MeasurementClass::qubit_pvm();
        let model = init_model(ModelConfig::for_class(&class, 3, 3, 2, seed)).unwrap();
        let state = werner(v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = class.batch(40, &mut rng);
        let a = batch_loss(&model, &state, &batch).unwrap();
        batch.shuffle(&mut rng);
        let b = batch_loss(&model, &state, &batch).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12);
    }

    #[test]
    fn threshold_ignores_record_order(losses in proptest::collection::vec(1e-6f64..1e-1, 4..12), seed in any::<u64>()) {
        let records: Vec<SweepRecord> = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| SweepRecord {
                v: i as f64 / 20.0,
                train_loss: l,
                test_loss: l,
                steps: 1,
                seed: 0,
                verdict: Verdict::from_loss(l, 1e-3),
                wall_time_s: 0.0,
            })
            .collect();
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        match (estimate_threshold(&records, 1e-3), estimate_threshold(&shuffled, 1e-3)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a, b.clone());
                prop_assert!(b.lo < b.hi);
            }
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "order changed the outcome: {:?} vs {:?}", a, b),
        }
    }
}
