use nalgebra::{DMatrix, DVector};
use nlselect_core::priors::*;
use nlselect_core::{Dataset, Error, ModelIndex};
use proptest::prelude::*;

/// Composite Simpson on [a, b] with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// ∫₀^∞ g(x) dx by substituting x = e^u over a wide window.
fn integrate_positive(g: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    simpson(|u| g(u.exp()) * u.exp(), lo, hi, 200_000)
}

#[test]
fn pmom_scalar_example() {
    // (2π)^{-1/2} e^{-1/2} · 1² with d_1 = 1 for r = 1.
    let v = log_pmom_prior(&[1.0], 1.0, 1.0, 1).unwrap();
    assert!((v - (-1.4189385332046727)).abs() < 1e-12, "{v}");
}

#[test]
fn pmom_rejects_zero_and_bad_scales() {
    assert!(matches!(log_pmom_prior(&[0.0], 1.0, 1.0, 2), Err(Error::ZeroCoefficient { .. })));
    assert!(matches!(log_pmom_prior(&[1.0], 0.0, 1.0, 2), Err(Error::NonPositiveScale { .. })));
    assert!(matches!(log_pmom_prior(&[1.0], 1.0, -1.0, 2), Err(Error::NonPositiveScale { .. })));
}

#[test]
fn pmom_normalizes() {
    for (r, tau, s2) in [(1u32, 1.0f64, 1.0f64), (2, 0.5, 2.0), (1, 3.0, 0.2), (2, 0.1, 0.7)] {
        let sd = (tau * s2).sqrt();
        let f = |b: f64| if b == 0.0 { 0.0 } else { log_pmom_prior(&[b], tau, s2, r).unwrap().exp() };
        let total = simpson(f, -40.0 * sd, 40.0 * sd + 1e-9, 100_000);
        assert!((total - 1.0).abs() < 1e-6, "r={r} tau={tau} s2={s2}: {total}");
    }
}

#[test]
fn pmom_two_dimensional_normalizes() {
    // The product form factorizes, so the 2-D integral is the square of the 1-D one.
    let (tau, s2, r) = (0.8f64, 1.5f64, 2);
    let sd = (tau * s2).sqrt();
    let one = simpson(
        |b| if b == 0.0 { 0.0 } else { (log_pmom_prior(&[b], tau, s2, r).unwrap()).exp() },
        -40.0 * sd,
        40.0 * sd + 1e-9,
        100_000,
    );
    let joint = log_pmom_prior(&[0.7, -1.2], tau, s2, r).unwrap();
    let split = log_pmom_prior(&[0.7], tau, s2, r).unwrap() + log_pmom_prior(&[-1.2], tau, s2, r).unwrap();
    assert!((joint - split).abs() < 1e-12);
    assert!((one - 1.0).abs() < 1e-6);
}

#[test]
fn marginal_beta_prior_matches_tau_integral() {
    for (beta, s2, n, r) in [(1.0, 1.0, 1usize, 1u32), (0.4, 2.0, 20, 2), (-2.5, 0.5, 100, 2), (1.7, 1.0, 7, 1)] {
        let direct = integrate_positive(
            |tau| (log_pmom_prior(&[beta], tau, s2, r).unwrap() + log_tau_prior(tau, n).unwrap()).exp(),
            -40.0,
            40.0,
        );
        let closed = log_marginal_beta_prior(&[beta], s2, n, r).unwrap().exp();
        assert!(((closed - direct) / direct).abs() < 1e-6, "beta={beta}: {closed} vs {direct}");
    }
}

#[test]
fn marginal_beta_prior_vanishes_at_zero_and_is_even() {
    let small = log_marginal_beta_prior(&[1e-20], 1.0, 10, 2).unwrap();
    assert!(small < -100.0);
    let a = log_marginal_beta_prior(&[0.9], 1.3, 10, 2).unwrap();
    let b = log_marginal_beta_prior(&[-0.9], 1.3, 10, 2).unwrap();
    assert_eq!(a, b);
}

#[test]
fn tau_prior_normalizes_and_peaks_at_n_over_3() {
    let n = 4;
    let total = integrate_positive(|t| log_tau_prior(t, n).unwrap().exp(), -30.0, 60.0);
    assert!((total - 1.0).abs() < 1e-6, "{total}");
    let mode = n as f64 / 3.0;
    let at = log_tau_prior(mode, n).unwrap();
    assert!(at > log_tau_prior(mode * 1.01, n).unwrap());
    assert!(at > log_tau_prior(mode * 0.99, n).unwrap());
    assert!(log_tau_prior(1e-300, n).unwrap() < -1e299);
}

#[test]
fn sigma2_prior_normalizes_and_peaks() {
    // Mass of IG(0.01, 0.01) outside [1e-8, 1e8] is ≈ 1e8^{-0.01}·(…) — noticeable,
    // so compare against the truncated mass computed from the regularized gamma.
    let (a1, a2) = (0.01, 0.01);
    let inside = integrate_positive(|s| log_sigma2_prior(s, a1, a2).unwrap().exp(), (1e-8f64).ln(), (1e8f64).ln());
    // P(σ² < 1e8) = Q(α₁, α₂/1e8) and the lower truncation is negligible.
    let expected = upper_regularized_gamma_small_x(a1, a2 / 1e8);
    assert!((inside - expected).abs() < 1e-6, "{inside} vs {expected}");

    let (a1, a2) = (3.0, 2.0);
    let mode = a2 / (a1 + 1.0);
    let at = log_sigma2_prior(mode, a1, a2).unwrap();
    assert!(at > log_sigma2_prior(mode * 1.001, a1, a2).unwrap());
    assert!(at > log_sigma2_prior(mode * 0.999, a1, a2).unwrap());
    let total = integrate_positive(|s| log_sigma2_prior(s, a1, a2).unwrap().exp(), -30.0, 30.0);
    assert!((total - 1.0).abs() < 1e-8);
    assert!(matches!(log_sigma2_prior(0.0, a1, a2), Err(Error::NonPositiveScale { .. })));
}

/// Q(a, x) = 1 − γ(a, x)/Γ(a) for tiny x by the lower-series expansion.
fn upper_regularized_gamma_small_x(a: f64, x: f64) -> f64 {
    // γ(a, x) = x^a Σ (−x)^m / (m! (a + m))
    let mut sum = 0.0;
    let mut term = 1.0;
    for m in 0..30 {
        sum += term / (a + m as f64);
        term *= -x / (m as f64 + 1.0);
    }
    let gamma_a = (ln_gamma_lanczos(a)).exp();
    1.0 - x.powf(a) * sum / gamma_a
}

fn ln_gamma_lanczos(z: f64) -> f64 {
    // Γ(z) = Γ(z + 1) / z, with Γ(1 + z) from a Lanczos (g = 7) series.
    const G: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    let x = z; // computing Γ(1 + z)
    let mut s = G[0];
    for (i, g) in G.iter().enumerate().skip(1) {
        s += g / (x + i as f64);
    }
    let t = x + 7.5;
    let ln_gamma_1pz = 0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + s.ln();
    ln_gamma_1pz - z.ln()
}

#[test]
fn model_prior_examples() {
    let uni = ModelPriorSpec::UniformRestricted;
    let cx = ModelPriorSpec::Complexity { c1: 1.0, c2: 2.0 };
    let one = ModelIndex::new(vec![3]);
    let two = ModelIndex::new(vec![3, 7]);
    assert_eq!(log_model_prior(&ModelIndex::empty(), &uni, 100, 5), 0.0);
    assert_eq!(log_model_prior(&ModelIndex::empty(), &cx, 100, 5), 0.0);
    let ratio = log_model_prior(&one, &cx, 100, 5) - log_model_prior(&two, &cx, 100, 5);
    assert!((ratio - 2.0 * 100f64.ln()).abs() < 1e-12);
    assert_eq!(log_model_prior(&two, &uni, 100, 1), f64::NEG_INFINITY);
    assert_eq!(log_model_prior(&two, &cx, 100, 1), f64::NEG_INFINITY);
    assert_eq!(log_model_prior(&two, &uni, 100, 2), 0.0);
}

#[test]
fn dk_matches_double_factorial() {
    assert_eq!(double_factorial_odd(1), 1.0);
    assert_eq!(double_factorial_odd(2), 3.0);
    assert_eq!(double_factorial_odd(3), 15.0);
    assert!((dk_normalizer(2, 2) - 1.0 / 9.0).abs() < 1e-15);
}

fn small_dataset() -> Dataset {
    let x = DMatrix::from_row_slice(
        6,
        3,
        &[0.3, -1.2, 0.5, 1.1, 0.4, -0.7, -0.8, 0.9, 1.3, 0.2, -0.1, -1.5, 1.7, -0.6, 0.1, -0.5, 0.8, 0.9],
    );
    let y = DVector::from_column_slice(&[0.4, 1.9, -0.7, 0.1, 2.2, -0.3]);
    Dataset::standardized(x, y).unwrap()
}

#[test]
fn log_joint_decomposes() {
    let d = small_dataset();
    let model = ModelIndex::new(vec![0, 2]);
    let cfg = HyperConfig::for_sample_size(d.n());
    let pt = ParamPoint {
        beta: vec![0.7, -1.1],
        tau: 1.4,
        sigma2: 0.6,
    };
    let whole = log_joint(&d, &model, &pt, &cfg).unwrap();
    let parts = log_likelihood(&d, &model, &pt.beta, pt.sigma2).unwrap()
        + log_pmom_prior(&pt.beta, pt.tau, pt.sigma2, cfg.r).unwrap()
        + log_tau_prior(pt.tau, d.n()).unwrap()
        + log_sigma2_prior(pt.sigma2, cfg.alpha1, cfg.alpha2).unwrap();
    assert!((whole - parts).abs() < 1e-12);

    // Gaussian likelihood by hand.
    let x = d.x();
    let mut rss = 0.0;
    for i in 0..d.n() {
        rss += (d.y()[i] - 0.7 * x[(i, 0)] + 1.1 * x[(i, 2)]).powi(2);
    }
    let ll = -(d.n() as f64) / 2.0 * (2.0 * std::f64::consts::PI * 0.6).ln() - rss / 1.2;
    assert!((log_likelihood(&d, &model, &pt.beta, pt.sigma2).unwrap() - ll).abs() < 1e-12);
}

#[test]
fn log_joint_fixed_tau_ignores_point_tau() {
    let d = small_dataset();
    let model = ModelIndex::new(vec![1]);
    let mut cfg = HyperConfig::for_sample_size(d.n());
    cfg.tau_mode = TauMode::Fixed(0.072);
    let a = ParamPoint {
        beta: vec![0.5],
        tau: 1.0,
        sigma2: 0.9,
    };
    let b = ParamPoint { tau: 55.0, ..a.clone() };
    let va = log_joint(&d, &model, &a, &cfg).unwrap();
    assert_eq!(va, log_joint(&d, &model, &b, &cfg).unwrap());
    let expected = log_likelihood(&d, &model, &a.beta, a.sigma2).unwrap()
        + log_pmom_prior(&a.beta, 0.072, a.sigma2, cfg.r).unwrap()
        + log_sigma2_prior(a.sigma2, cfg.alpha1, cfg.alpha2).unwrap();
    assert!((va - expected).abs() < 1e-12);
}

#[test]
fn log_joint_permutation_invariant() {
    let d = small_dataset();
    let cfg = HyperConfig::for_sample_size(d.n());
    // Swap columns 0 and 2 and relabel the model accordingly.
    let mut xs = d.x().clone();
    xs.swap_columns(0, 2);
    let swapped = Dataset::new(xs, d.y().clone()).unwrap();
    let pt = ParamPoint {
        beta: vec![0.7, -1.1],
        tau: 1.4,
        sigma2: 0.6,
    };
    let a = log_joint(&d, &ModelIndex::new(vec![0, 1]), &pt, &cfg).unwrap();
    let pt_swapped = ParamPoint {
        beta: vec![-1.1, 0.7],
        ..pt.clone()
    };
    let b = log_joint(&swapped, &ModelIndex::new(vec![1, 2]), &pt_swapped, &cfg).unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
}

proptest! {
    #[test]
    fn pmom_even_in_each_coordinate(
        b in prop::collection::vec(0.01f64..5.0, 1..5),
        flips in prop::collection::vec(any::<bool>(), 5),
        tau in 0.01f64..50.0,
        s2 in 0.01f64..50.0,
        r in 1u32..4,
    ) {
        let flipped: Vec<f64> = b.iter().zip(&flips).map(|(v, &f)| if f { -v } else { *v }).collect();
        let a = log_pmom_prior(&b, tau, s2, r).unwrap();
        let c = log_pmom_prior(&flipped, tau, s2, r).unwrap();
        prop_assert!((a - c).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn densities_never_nan(
        v in prop_oneof![Just(1e-300), Just(1e300), Just(f64::MIN_POSITIVE), 1e-10f64..1e10],
        n in 1usize..10_000,
    ) {
        prop_assert!(!log_tau_prior(v, n).unwrap().is_nan());
        prop_assert!(!log_sigma2_prior(v, 0.01, 0.01).unwrap().is_nan());
        prop_assert!(!log_marginal_beta_prior(&[v.clamp(1e-250, 1e150)], 1.0, n, 2).unwrap().is_nan());
    }

    #[test]
    fn uniform_prior_flat_below_cap(k in 0usize..30, q in 1usize..30) {
        let m = ModelIndex::new((0..k).collect());
        let v = log_model_prior(&m, &ModelPriorSpec::UniformRestricted, 50, q);
        if k <= q { prop_assert_eq!(v, 0.0); } else { prop_assert_eq!(v, f64::NEG_INFINITY); }
    }

    #[test]
    fn marginal_beta_prior_finite(b in 0.01f64..10.0, s2 in 0.01f64..10.0, n in 1usize..500) {
        prop_assert!(log_marginal_beta_prior(&[b, -b / 2.0], s2, n, 2).unwrap().is_finite());
    }
}
