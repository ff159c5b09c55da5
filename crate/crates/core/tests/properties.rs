use num_complex::Complex64;
use proptest::prelude::*;
use qpflow_core::dcpf::{five_bus_system, scale_system};
use qpflow_core::harness::random_spd_system;
use qpflow_core::hybrid::{calibrate_signs, run_hmpea, HybridConfig, DEFAULT_SIGN_TOLERANCE};
use qpflow_core::linalg::{eigh, SymMatrix};
use qpflow_core::qpe::{failure_bound_single, kernel_probabilities, module_count, window_success_probability};
use qpflow_core::statevector::{gates, RegisterLayout, StateVector};
use qpflow_core::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn symmetric(n: usize, values: &[f64]) -> SymMatrix {
    let mut e = vec![0.0; n * n];
    let mut it = values.iter();
    for i in 0..n {
        for j in i..n {
            let v = *it.next().unwrap();
            e[i * n + j] = v;
            e[j * n + i] = v;
        }
    }
    SymMatrix::new(n, e).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigh_reconstructs(n in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..n * (n + 1) / 2).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = symmetric(n, &values);
        let sd = eigh(&m).unwrap();
        let back = sd.reconstruct();
        for (a, b) in back.iter().zip(m.entries()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert!(sd.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn kernel_distribution_is_normalized(phase in 0.0f64..1.0, m in 1usize..12) {
        let total: f64 = kernel_probabilities(phase, m).iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gates_preserve_norm(seed in any::<u64>(), angle in -6.3f64..6.3) {
        let layout = RegisterLayout::new(1, 3, 2, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let amps: Vec<Complex64> = (0..1 << layout.total())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let n = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        let mut s = StateVector::from_amplitudes(layout, amps.iter().map(|a| a / n).collect()).unwrap();
        s.apply_single_qubit(0, &gates::ry(angle)).unwrap();
        s.apply_hadamard_block(&layout.medium_qubits()).unwrap();
        s.apply_qft(&layout.medium_qubits()).unwrap();
        s.apply_multiplexed_rotation(&layout.accuracy_qubits(), 0, |v| Some(angle * v as f64)).unwrap();
        s.apply_inverse_qft(&layout.accuracy_qubits()).unwrap();
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn window_success_respects_bound(phase in 0.001f64..0.999, a in 1usize..6, r in 2usize..8) {
        let eps = failure_bound_single(r).unwrap();
        prop_assert!(window_success_probability(phase, a, r) >= 1.0 - eps - 1e-10);
    }

    #[test]
    fn module_count_law(m_prec in 1usize..12, n_accur in 1usize..6) {
        let sys = scale_system(&five_bus_system()).unwrap();
        let cfg = HybridConfig::new(m_prec.max(6), n_accur, 3);
        let stats = run_hmpea(&sys, &cfg).unwrap();
        prop_assert_eq!(stats.n_module, module_count(m_prec.max(6), n_accur));
        prop_assert_eq!(stats.n_module, m_prec.max(6).div_ceil(n_accur));
    }

    #[test]
    fn branch_magnitudes_are_unit_vectors(n_accur in 1usize..4, r in 3usize..8) {
        let sys = scale_system(&five_bus_system()).unwrap();
        let stats = run_hmpea(&sys, &HybridConfig::new(9, n_accur, r)).unwrap();
        let total: f64 = stats.branches.iter().map(|b| b.joint_probability).sum();
        prop_assert!(total <= 1.0 + 1e-12);
        for b in &stats.branches {
            prop_assert!(b.joint_probability <= 1.0);
            let norm: f64 = b.magnitudes.iter().map(|u| u * u).sum::<f64>().sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_survives_magnitude_noise(seed in any::<u64>()) {
        let sys = scale_system(&five_bus_system()).unwrap();
        let mut stats = run_hmpea(&sys, &HybridConfig::single(9, 9)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in &mut stats.branches {
            for u in &mut b.magnitudes {
                *u = (*u + rng.random_range(-0.03..0.03)).max(0.0);
            }
        }
        let cal = calibrate_signs(&stats, &sys.p, DEFAULT_SIGN_TOLERANCE).unwrap();
        for (q, p) in sys.p.iter().enumerate() {
            let s: f64 = cal.products.iter().map(|row| row[q]).sum();
            prop_assert!((s - p).abs() <= DEFAULT_SIGN_TOLERANCE);
        }
    }
}

#[test]
fn multi_module_tree_matches_trajectory_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    for seed in 0..40u64 {
        let dim = rng.random_range(2..=3);
        let Ok(sys) = scale_system(&random_spd_system(dim, seed)) else { continue };
        let cfg = HybridConfig::new(4, 2, 2);
        let (Ok(tree), Ok(circ)) = (
            run_hmpea(&sys, &cfg),
            run_hmpea(&sys, &cfg.clone().with_engine(Engine::Circuit)),
        ) else {
            continue;
        };
        assert_eq!(tree.branches.len(), circ.branches.len());
        for (a, b) in tree.branches.iter().zip(&circ.branches) {
            assert_eq!(a.bits, b.bits);
            assert!((a.joint_probability - b.joint_probability).abs() < 1e-9);
        }
        assert!((tree.leakage - circ.leakage).abs() < 1e-9);
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} random systems had separated spectra");
}
