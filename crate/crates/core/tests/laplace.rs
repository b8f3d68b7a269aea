use nalgebra::{DMatrix, DVector};
use nlselect_core::laplace::{
    find_mode, gradient, hessian, laplace_from_mode, log_marginal, log_marginal_with_mode, log_posterior_ratio,
    null_log_marginal, score_model, LaplaceScale, ModelObjective, GRADIENT_TOLERANCE,
};
use nlselect_core::oracle::{
    finite_difference_check, fixture, quadrature_log_marginal, random_point, FiniteDifferenceKind, QuadratureConfig,
};
use nlselect_core::priors::{log_joint, TauMode};
use nlselect_core::{Dataset, Error, HyperConfig, ModelIndex, ParamPoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quad(d: &Dataset, m: &ModelIndex, cfg: &HyperConfig) -> f64 {
    let q = quadrature_log_marginal(d, m, cfg, &QuadratureConfig::default()).unwrap();
    assert!(!q.accuracy_warning, "quadrature change {}", q.relative_change);
    q.log_marginal
}

#[test]
fn derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for k in [1usize, 2, 3, 5] {
        let beta: Vec<f64> = (0..k + 1).map(|j| if j < k { 1.0 } else { 0.0 }).collect();
        let d = fixture(40, &beta, 100 + k as u64).unwrap();
        let cfg = HyperConfig::for_sample_size(d.n());
        let obj = ModelObjective::new(&d, &ModelIndex::new((0..k).collect()), &cfg).unwrap();
        for _ in 0..10 {
            let pt = random_point(&mut rng, k);
            let g = finite_difference_check(FiniteDifferenceKind::Gradient, &obj, &pt);
            let h = finite_difference_check(FiniteDifferenceKind::Hessian, &obj, &pt);
            assert!(g <= 1e-6, "k={k} gradient deviation {g}");
            assert!(h <= 1e-5, "k={k} hessian deviation {h}");
        }
    }
}

#[test]
fn fixed_tau_derivatives_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = fixture(40, &[1.0, -0.5, 0.0], 5).unwrap();
    let mut cfg = HyperConfig::for_sample_size(d.n());
    cfg.tau_mode = TauMode::Fixed(0.072);
    let obj = ModelObjective::new(&d, &ModelIndex::new(vec![0, 1]), &cfg).unwrap();
    assert_eq!(obj.dim(), 3);
    for _ in 0..10 {
        let pt = random_point(&mut rng, 2);
        assert!(finite_difference_check(FiniteDifferenceKind::Gradient, &obj, &pt) <= 1e-6);
        assert!(finite_difference_check(FiniteDifferenceKind::Hessian, &obj, &pt) <= 1e-5);
    }
}

#[test]
fn gradient_contains_barrier_and_hessian_blocks() {
    let d = fixture(30, &[0.9, -1.3, 0.0], 3).unwrap();
    let cfg = HyperConfig::for_sample_size(d.n());
    let model = ModelIndex::new(vec![0, 1]);
    let pt = ParamPoint {
        beta: vec![0.6, -1.4],
        tau: 2.5,
        sigma2: 0.8,
    };
    let obj = ModelObjective::new(&d, &model, &cfg).unwrap();
    let xk = d.design(&model);
    let beta = DVector::from_column_slice(&pt.beta);
    let (tau, s) = (pt.tau, pt.sigma2);
    let resid = d.y() - &xk * &beta;
    let g = obj.gradient_original(&pt).unwrap();
    for i in 0..2 {
        let smooth = xk.column(i).dot(&resid) / s - beta[i] / (tau * s);
        assert!((g[i] - smooth - 2.0 * cfg.r as f64 / beta[i]).abs() < 1e-10);
    }

    let v = hessian(&d, &model, &pt, &cfg).unwrap();
    assert_eq!(v.shape(), (4, 4));
    let expected11 = DMatrix::<f64>::identity(2, 2) / (tau * s)
        + xk.tr_mul(&xk) / s
        + DMatrix::from_diagonal(&beta.map(|b| 2.0 * cfg.r as f64 / (b * b)));
    for a in 0..2 {
        for b in 0..2 {
            assert!((v[(a, b)] - expected11[(a, b)]).abs() < 1e-10);
        }
    }
    assert!((&v - v.transpose()).abs().max() < 1e-10);
    // σ² diagonal: the residual enters as RSS/σ⁶.
    let n = d.n() as f64;
    let k = 2.0;
    let r = cfg.r as f64;
    let power = r * k + 0.5 * (n + k) + cfg.alpha1 + 1.0;
    let v33 = -power / (s * s) + beta.norm_squared() / (tau * s.powi(3)) + resid.norm_squared() / s.powi(3)
        + 2.0 * cfg.alpha2 / s.powi(3);
    assert!((v[(3, 3)] - v33).abs() < 1e-9 * v33.abs().max(1.0));

    // Working gradient is the chain rule applied to the original one.
    let gw = gradient(&d, &model, &pt, &cfg).unwrap();
    assert!((gw[2] - g[2] * tau).abs() < 1e-12 && (gw[3] - g[3] * s).abs() < 1e-12);
}

#[test]
fn derivatives_reject_zero_coefficients() {
    let d = fixture(20, &[1.0, 0.0], 1).unwrap();
    let cfg = HyperConfig::for_sample_size(20);
    let pt = ParamPoint {
        beta: vec![0.0],
        tau: 1.0,
        sigma2: 1.0,
    };
    let m = ModelIndex::new(vec![0]);
    assert!(matches!(gradient(&d, &m, &pt, &cfg), Err(Error::ZeroCoefficient { .. })));
    assert!(matches!(hessian(&d, &m, &pt, &cfg), Err(Error::ZeroCoefficient { .. })));
}

/// f must drop along ±each eigenvector of V from the mode.
fn assert_local_max(obj: &ModelObjective, pt: &ParamPoint, v: &DMatrix<f64>) {
    let eig = v.clone().symmetric_eigen();
    assert!(eig.eigenvalues.min() > 0.0, "V not positive definite: {}", eig.eigenvalues);
    let f0 = obj.value(pt).unwrap();
    let k = pt.beta.len();
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let dir = eig.eigenvectors.column(j);
        let h = 1e-3 / lam.sqrt();
        for sgn in [-1.0, 1.0] {
            let mut moved = pt.clone();
            for i in 0..k {
                moved.beta[i] += sgn * h * dir[i];
            }
            if obj.is_hierarchical() {
                moved.tau += sgn * h * dir[k];
                moved.sigma2 += sgn * h * dir[k + 1];
            } else {
                moved.sigma2 += sgn * h * dir[k];
            }
            assert!(obj.value(&moved).unwrap() < f0, "f increased along eigenvector {j}");
        }
    }
}

#[test]
fn converged_modes_are_local_maxima() {
    for seed in 0..20u64 {
        let k = 1 + (seed % 4) as usize;
        let mut beta = vec![0.0; k + 2];
        for (j, b) in beta.iter_mut().take(k).enumerate() {
            *b = if j % 2 == 0 { 1.2 } else { -0.9 };
        }
        let d = fixture(60, &beta, 500 + seed).unwrap();
        let cfg = HyperConfig::for_sample_size(d.n());
        let model = ModelIndex::new((0..k).collect());
        let mode = find_mode(&d, &model, &cfg, None).unwrap();
        assert!(mode.converged);
        assert!(mode.grad_norm <= GRADIENT_TOLERANCE * (1.0 + mode.objective.abs()));
        let g = gradient(&d, &model, &mode.point, &cfg).unwrap();
        assert!(g.amax() <= GRADIENT_TOLERANCE * (1.0 + mode.objective.abs()));
        assert!((&mode.hessian - mode.hessian.transpose()).abs().max() < 1e-10);
        let obj = ModelObjective::new(&d, &model, &cfg).unwrap();
        assert!((mode.objective - log_joint(&d, &model, &mode.point, &cfg).unwrap()).abs() < 1e-9);
        assert_local_max(&obj, &mode.point, &mode.hessian);
    }
}

#[test]
fn restart_at_mode_is_a_fixed_point() {
    let d = fixture(80, &[1.5, -0.7, 0.0, 0.3], 21).unwrap();
    let cfg = HyperConfig::for_sample_size(d.n());
    let model = ModelIndex::new(vec![0, 1, 3]);
    let mode = find_mode(&d, &model, &cfg, None).unwrap();
    let again = find_mode(&d, &model, &cfg, Some(&mode.point)).unwrap();
    assert!(again.iterations <= 2, "{} iterations", again.iterations);
    for (a, b) in mode.point.beta.iter().zip(&again.point.beta) {
        assert!((a - b).abs() < 1e-8);
    }
    // Deterministic.
    assert_eq!(find_mode(&d, &model, &cfg, None).unwrap(), mode);
}

#[test]
fn permuting_columns_permutes_the_mode() {
    let d = fixture(70, &[1.1, 0.0, -1.6, 0.4], 9).unwrap();
    let cfg = HyperConfig::for_sample_size(d.n());
    // Reverse the column order: model {0, 2, 3} becomes {3, 1, 0}.
    let p = d.p();
    let rev = DMatrix::from_fn(d.n(), p, |i, j| d.x()[(i, p - 1 - j)]);
    let dr = Dataset::new(rev, d.y().clone()).unwrap();
    let a = find_mode(&d, &ModelIndex::new(vec![0, 2, 3]), &cfg, None).unwrap();
    let b = find_mode(&dr, &ModelIndex::new(vec![0, 1, 3]), &cfg, None).unwrap();
    let mapped: Vec<f64> = b.point.beta.iter().rev().copied().collect();
    for (x, y) in a.point.beta.iter().zip(&mapped) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
    assert!((a.point.tau - b.point.tau).abs() < 1e-8 * a.point.tau);
    assert!((a.point.sigma2 - b.point.sigma2).abs() < 1e-8 * a.point.sigma2);

    let la = log_marginal(&d, &ModelIndex::new(vec![0, 2, 3]), &cfg).unwrap();
    let lb = log_marginal(&dr, &ModelIndex::new(vec![0, 1, 3]), &cfg).unwrap();
    assert!((la - lb).abs() < 1e-10, "{la} vs {lb}");
}

#[test]
fn null_model_closed_form() {
    // y = 0, n = 2: Γ(1 + α₁) = α₁Γ(α₁) collapses everything to −log 2π.
    let x = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
    let d = Dataset::new(x, DVector::zeros(2)).unwrap();
    let cfg = HyperConfig::for_sample_size(2);
    let v = log_marginal(&d, &ModelIndex::empty(), &cfg).unwrap();
    assert!((v - (-(2.0 * std::f64::consts::PI).ln())).abs() < 1e-12, "{v}");

    let d = fixture(30, &[1.0], 4).unwrap();
    assert_eq!(log_marginal(&d, &ModelIndex::empty(), &cfg).unwrap(), null_log_marginal(&d, &cfg));
    assert!(find_mode(&d, &ModelIndex::empty(), &cfg, None).is_err());
}

#[test]
fn size_cap_is_enforced() {
    let d = fixture(10, &[1.0; 12], 4).unwrap();
    let mut cfg = HyperConfig::for_sample_size(10);
    cfg.q_n = 20;
    let big = ModelIndex::new((0..10).collect());
    assert!(matches!(log_marginal(&d, &big, &cfg), Err(Error::ModelTooLarge { .. })));
    cfg.q_n = 3;
    let four = ModelIndex::new((0..4).collect());
    assert!(matches!(score_model(&d, &four, &cfg), Err(Error::ModelTooLarge { .. })));
}

#[test]
fn laplace_close_to_quadrature_k1_n50() {
    let d = fixture(50, &[0.8, 0.0], 20240611).unwrap();
    let cfg = HyperConfig::for_sample_size(50);
    let m = ModelIndex::new(vec![0]);
    let err = (log_marginal(&d, &m, &cfg).unwrap() - quad(&d, &m, &cfg)).abs();
    assert!(err <= 0.1, "error {err}");
}

#[test]
fn ranking_matches_quadrature_n100() {
    let d = fixture(100, &[0.6, 0.0], 77).unwrap();
    let cfg = HyperConfig::for_sample_size(100);
    let models = [ModelIndex::empty(), ModelIndex::new(vec![0]), ModelIndex::new(vec![1]), ModelIndex::new(vec![0, 1])];
    let order = |vals: &[f64]| {
        let mut idx: Vec<usize> = (0..vals.len()).collect();
        idx.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        idx
    };
    let lap: Vec<f64> = models.iter().map(|m| log_marginal(&d, m, &cfg).unwrap()).collect();
    let exact: Vec<f64> = models.iter().map(|m| quad(&d, m, &cfg)).collect();
    assert_eq!(order(&lap), order(&exact), "laplace {lap:?} quadrature {exact:?}");
    assert_eq!(order(&exact)[0], 1);
}

#[test]
fn error_shrinks_with_n() {
    let cfg_for = HyperConfig::for_sample_size;
    let m = ModelIndex::new(vec![0]);
    let mut errs = Vec::new();
    for n in [50usize, 200, 800] {
        let d = fixture(n, &[0.8, 0.0], 31).unwrap();
        let cfg = cfg_for(n);
        errs.push((log_marginal(&d, &m, &cfg).unwrap() - quad(&d, &m, &cfg)).abs());
    }
    assert!(errs[2] <= errs[0], "{errs:?}");
}

#[test]
fn original_scale_is_available() {
    let d = fixture(400, &[0.8, -0.5], 8).unwrap();
    let mut cfg = HyperConfig::for_sample_size(400);
    let m = ModelIndex::new(vec![0, 1]);
    let log_scale = log_marginal(&d, &m, &cfg).unwrap();
    cfg.laplace_scale = LaplaceScale::Original;
    let (orig, mode) = log_marginal_with_mode(&d, &m, &cfg).unwrap();
    let mode = mode.unwrap();
    assert_eq!(mode.scale, LaplaceScale::Original);
    let obj = ModelObjective::new(&d, &m, &cfg).unwrap();
    assert_eq!(laplace_from_mode(&obj, &mode).unwrap(), orig);
    // Both expansions approximate the same integral.
    assert!((orig - log_scale).abs() < 0.5, "{orig} vs {log_scale}");
}

#[test]
fn posterior_ratio_identities() {
    let d = fixture(60, &[1.0, 0.0, -0.8], 13).unwrap();
    let cfg = HyperConfig::for_sample_size(60);
    let t = ModelIndex::new(vec![0, 2]);
    let k = ModelIndex::new(vec![1]);
    assert_eq!(log_posterior_ratio(&d, &t, &t, &cfg).unwrap(), 0.0);
    let a = log_posterior_ratio(&d, &k, &t, &cfg).unwrap();
    let b = log_posterior_ratio(&d, &t, &k, &cfg).unwrap();
    assert_eq!(a, -b);
    assert!(a < 0.0);
    let st = score_model(&d, &t, &cfg).unwrap();
    let sk = score_model(&d, &k, &cfg).unwrap();
    assert_eq!(a, sk.log_posterior_unnorm - st.log_posterior_unnorm);
    assert_eq!(st.log_posterior_unnorm, st.log_marginal);
}

#[test]
fn strong_signal_mode_near_truth() {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let beta0 = [2.0, -2.0];
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * DVector::from_column_slice(&beta0) + DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let d = Dataset::new(x.clone(), y.clone()).unwrap();
    let cfg = HyperConfig::for_sample_size(n);
    let m = ModelIndex::new(vec![0, 1]);
    let mode = find_mode(&d, &m, &cfg, None).unwrap();
    // Posterior sd approximated by the least-squares sampling covariance σ̂²(X'X)⁻¹.
    let xtx_inv = x.tr_mul(&x).try_inverse().unwrap();
    let b_ols = &xtx_inv * x.tr_mul(&y);
    let s2 = (&y - &x * &b_ols).norm_squared() / (n - 2) as f64;
    for j in 0..2 {
        let sd = (s2 * xtx_inv[(j, j)]).sqrt();
        let b = mode.point.beta[j];
        assert!((b - beta0[j]).abs() <= 3.0 * sd, "j={j}: {b} (sd {sd})");
    }
}
