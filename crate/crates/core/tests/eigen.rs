use ono::eigen::*;
use ono::linalg::DenseMatrix;
use ono::rng::stream;
use proptest::prelude::*;
use std::f64::consts::PI;

fn min_eigenvalue(j: usize) -> f64 {
    1.0 / ((j as f64 - 0.5).powi(2) * PI * PI)
}

#[test]
fn min_kernel_spectrum_matches_analytic_values() {
    let truth = spectral_truth(&AnalyticKernel::Min, 512, 3).unwrap();
    let expected = [0.4053, 0.0450, 0.0162];
    for j in 0..3 {
        assert!((truth.eigenvalues[j] - expected[j]).abs() < 1e-3, "{j}: {}", truth.eigenvalues[j]);
        assert!((truth.eigenvalues[j] - min_eigenvalue(j + 1)).abs() < 1e-3);
    }
    assert!(truth.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn min_kernel_leading_eigenfunction_is_quarter_sine() {
    let truth = spectral_truth(&AnalyticKernel::Min, 512, 3).unwrap();
    let psi = truth.eigenfunctions(1).column(0);
    let exact: Vec<f64> = truth.grid.iter().map(|x| 2f64.sqrt() * (PI * x / 2.0).sin()).collect();
    let sign = if psi.iter().zip(&exact).map(|(a, b)| a * b).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let dev = psi
        .iter()
        .zip(&exact)
        .map(|(a, b)| (sign * a - b).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-2, "max deviation {dev}");
}

#[test]
fn eigenfunctions_are_orthonormal_on_the_grid() {
    for kernel in [AnalyticKernel::Min, AnalyticKernel::Rbf { length_scale: 0.2 }] {
        let truth = spectral_truth(&kernel, 128, 8).unwrap();
        let psi = truth.eigenfunctions(8);
        let gram = psi.t_matmul(&psi).unwrap().scale(1.0 / 128.0);
        assert!(gram.max_abs_diff(&DenseMatrix::identity(8)) < 1e-8);
    }
}

#[test]
fn narrow_rbf_has_flat_spectrum_with_trace_identity() {
    let truth = spectral_truth(&AnalyticKernel::Rbf { length_scale: 1e-4 }, 64, 4).unwrap();
    let sum: f64 = truth.eigenvalues.iter().sum();
    // trace of K/M is the mean of the diagonal, which is 1 for this kernel
    assert!((sum - 1.0).abs() < 1e-10);
    let (hi, lo) = (truth.eigenvalues[0], truth.eigenvalues[63]);
    assert!(hi / lo < 1.01, "{hi} vs {lo}");
}

#[test]
fn spectral_truth_requires_a_fine_grid() {
    assert!(spectral_truth(&AnalyticKernel::Min, 11, 3).is_err());
    assert!(spectral_truth(&AnalyticKernel::Min, 12, 0).is_err());
}

#[test]
fn mercer_error_spectrum_and_frobenius_agree() {
    let truth = spectral_truth(&AnalyticKernel::Min, 256, 3).unwrap();
    let full = truth.operator.frobenius_norm();
    assert!((mercer_truncation_error(&truth, 0).unwrap() - full).abs() < 1e-10);
    assert_eq!(mercer_truncation_error(&truth, 256).unwrap(), 0.0);
    assert!(mercer_frobenius_error(&truth, 256).unwrap() < 1e-10);
    for k in 0..=256 {
        let a = mercer_truncation_error(&truth, k).unwrap();
        let b = mercer_frobenius_error(&truth, k).unwrap();
        assert!((a - b).abs() < 1e-8, "k={k}: {a} vs {b}");
    }
    assert!(mercer_truncation_error(&truth, 257).is_err());
}

fn identity_rows(k: usize, n: usize) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(k, n);
    for i in 0..k {
        a.set(i, i, 1.0);
    }
    a
}

#[test]
fn closed_form_at_top_identity_rows() {
    let mu = vec![0.9, 0.5, 0.3, 0.1];
    let prob = CoordinateProblem::new(DenseMatrix::identity(4), mu.clone(), identity_rows(2, 4)).unwrap();
    let expected = 2.0 - 2.0 * (0.9 + 0.5);
    assert!((appendix_loss_closed(&prob) - expected).abs() < 1e-14);
}

#[test]
fn coordinate_problem_rejects_non_orthonormal_rows() {
    let a = DenseMatrix::from_rows(&[vec![1.0, 0.1, 0.0]]);
    assert!(CoordinateProblem::new(DenseMatrix::identity(3), vec![1.0; 3], a).is_err());
}

#[test]
fn zero_operator_objective_is_nonnegative() {
    let mut rng = stream(3, "coords");
    let mut prob = CoordinateProblem::random(&mut rng, 5, 2).unwrap();
    prob.mu = vec![0.0; 5];
    let samples = sample_coordinates(&mut rng, &prob.a_f, 1000).unwrap();
    assert!(appendix_loss_terms(&prob, &samples).unwrap().iter().all(|&t| t >= 0.0));
    assert!(appendix_loss_closed(&prob) >= 0.0);
}

#[test]
fn closed_form_matches_monte_carlo_on_random_instances() {
    let mut rng = stream(11, "coords");
    for trial in 0..20 {
        let n = 2 + trial % 5;
        let k = 1 + trial % n;
        let prob = CoordinateProblem::random(&mut rng, n, k).unwrap();
        let samples = sample_coordinates(&mut rng, &prob.a_f, 100_000).unwrap();
        let terms = appendix_loss_terms(&prob, &samples).unwrap();
        let mean = terms.iter().sum::<f64>() / terms.len() as f64;
        let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (terms.len() - 1) as f64;
        let sigma = (var / terms.len() as f64).sqrt();
        let closed = appendix_loss_closed(&prob);
        assert!((mean - closed).abs() < 3.0 * sigma, "trial {trial}: {mean} vs {closed} (σ {sigma})");
        assert_eq!(mean, appendix_loss_direct(&prob, &samples).unwrap());
    }
}

#[test]
fn sphere_search_finds_leading_axis() {
    let a = sphere_minimizer([0.7, 0.3, 0.1], 60).unwrap();
    assert!((a[0].abs() - 1.0).abs() < 1e-9, "{a:?}");
}

proptest! {
    #[test]
    fn identity_second_moment_closed_form(seed in 0u64..500, n in 1usize..7, kk in 1usize..7) {
        let k = kk.min(n);
        let mut rng = stream(seed, "coords");
        let mut prob = CoordinateProblem::random(&mut rng, n, k).unwrap();
        prob.a_f = DenseMatrix::identity(n);
        let mut expected = k as f64;
        for i in 0..k {
            for j in 0..n {
                expected -= 2.0 * prob.mu[j] * prob.a.get(i, j).powi(2);
            }
        }
        prop_assert!((appendix_loss_closed(&prob) - expected).abs() < 1e-12);
    }
}

#[test]
fn recovers_three_leading_min_kernel_eigenfunctions() {
    let cfg = RecoveryConfig {
        grid: 256,
        k: 3,
        steps: 2000,
        ..RecoveryConfig::default()
    };
    let report = recover_eigenfunctions(&AnalyticKernel::Min, &cfg).unwrap();
    let expected = [0.4053, 0.0450, 0.0162];
    for i in 0..3 {
        let rel = (report.eigenvalues_learned[i] - expected[i]).abs() / expected[i];
        assert!(rel < 0.1, "eigenvalue {i}: {} vs {}", report.eigenvalues_learned[i], expected[i]);
        assert!(report.alignment[i] > 0.99, "alignment {i}: {}", report.alignment[i]);
    }
    assert!(report.principal_angles_deg.iter().all(|&t| t < 5.0));
    assert_eq!(report.to_csv().lines().next().unwrap(), REPORT_HEADER);
    assert_eq!(report.to_csv().lines().count(), 4);
}

#[test]
fn recovers_leading_eigenfunction_alone() {
    let cfg = RecoveryConfig {
        k: 1,
        ..RecoveryConfig::default()
    };
    let report = recover_eigenfunctions(&AnalyticKernel::Min, &cfg).unwrap();
    let grid = midpoint_grid(cfg.grid);
    let exact: Vec<f64> = grid.iter().map(|x| 2f64.sqrt() * (PI * x / 2.0).sin()).collect();
    let got = report.eigenfunctions.column(0);
    let err = got.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
        / exact.iter().map(|b| b * b).sum::<f64>().sqrt();
    assert!(err < 0.05, "relative L2 {err}");
}

#[test]
fn recovery_report_is_seed_deterministic() {
    let cfg = RecoveryConfig {
        grid: 64,
        k: 2,
        steps: 50,
        seed: 4,
        ..RecoveryConfig::default()
    };
    let a = recover_eigenfunctions(&AnalyticKernel::Min, &cfg).unwrap();
    let b = recover_eigenfunctions(&AnalyticKernel::Min, &cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
}
