//! A self-contained battery of oracle checks on small seeded fixtures.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::finite_diff::{finite_difference_check, FiniteDifferenceKind};
use super::marginal::{importance_sampling_log_marginal, quadrature_log_marginal, QuadratureConfig};
use super::tail::chisq_tail_check;
use crate::data::{Dataset, ModelIndex};
use crate::error::Result;
use crate::laplace::{find_mode, log_marginal, ModelObjective};
use crate::priors::{HyperConfig, ParamPoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl VerifyCheck {
    fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        VerifyCheck {
            name: name.into(),
            value,
            threshold,
            pass: value <= threshold,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Random interior points per model size for the derivative checks.
    pub derivative_points: usize,
    pub tail_draws: usize,
    pub importance_samples: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 20240611,
            derivative_points: 25,
            tail_draws: 1_000_000,
            importance_samples: 200_000,
        }
    }
}

/// Standardized Gaussian design with y = Xβ + N(0, 1) noise.
pub fn fixture(n: usize, beta: &[f64], seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = beta.len();
    let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DVector::from_column_slice(beta);
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Dataset::standardized(x.clone(), &x * b + noise)
}

/// A random interior point: |β_i| ∈ [0.2, 2] with random sign, log τ ∈
/// [−1, 2], log σ² ∈ [−1, 1].
pub fn random_point<R: Rng + ?Sized>(rng: &mut R, k: usize) -> ParamPoint {
    ParamPoint {
        beta: (0..k)
            .map(|_| {
                let m = rng.random_range(0.2..2.0);
                if rng.random::<bool>() {
                    m
                } else {
                    -m
                }
            })
            .collect(),
        tau: rng.random_range(-1.0f64..2.0).exp(),
        sigma2: rng.random_range(-1.0f64..1.0).exp(),
    }
}

/// Derivative checks over random points for each model size in `sizes`:
/// returns (worst gradient deviation, worst Hessian deviation).
pub fn derivative_deviations(sizes: &[usize], points: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0f64, 0.0f64);
    for &k in sizes {
        let beta: Vec<f64> = (0..k + 2).map(|j| if j < k { 1.0 } else { 0.0 }).collect();
        let data = fixture(60, &beta, rng.random())?;
        let cfg = HyperConfig::for_sample_size(data.n());
        let obj = ModelObjective::new(&data, &ModelIndex::new((0..k).collect()), &cfg)?;
        for _ in 0..points {
            let pt = random_point(&mut rng, k);
            worst.0 = worst.0.max(finite_difference_check(FiniteDifferenceKind::Gradient, &obj, &pt));
            worst.1 = worst.1.max(finite_difference_check(FiniteDifferenceKind::Hessian, &obj, &pt));
        }
    }
    Ok(worst)
}

/// Runs every check. Errors in an individual check become failing entries.
pub fn run_suite(cfg: &SuiteConfig) -> Vec<VerifyCheck> {
    let mut checks = Vec::new();
    let failed = |name: &str| VerifyCheck {
        name: name.to_string(),
        value: f64::NAN,
        threshold: f64::NAN,
        pass: false,
    };

    match fixture(50, &[0.8, 0.0], cfg.seed) {
        Ok(data) => {
            let hyper = HyperConfig::for_sample_size(50);
            let model = ModelIndex::new(vec![0]);
            match (
                log_marginal(&data, &model, &hyper),
                quadrature_log_marginal(&data, &model, &hyper, &QuadratureConfig::default()),
            ) {
                (Ok(lap), Ok(q)) => {
                    checks.push(VerifyCheck::at_most("laplace_vs_quadrature_k1_n50", (lap - q.log_marginal).abs(), 0.1));
                    checks.push(VerifyCheck::at_most("quadrature_doubling_k1_n50", q.relative_change, 1e-4));
                    match importance_sampling_log_marginal(&data, &model, &hyper, cfg.importance_samples, cfg.seed) {
                        Ok(is) => checks.push(VerifyCheck::at_most(
                            "importance_sampling_vs_quadrature_k1_n50 (in standard errors)",
                            (is.log_marginal - q.log_marginal).abs() / is.std_error,
                            3.0,
                        )),
                        Err(_) => checks.push(failed("importance_sampling_vs_quadrature_k1_n50")),
                    }
                }
                _ => checks.push(failed("laplace_vs_quadrature_k1_n50")),
            }
            match find_mode(&data, &model, &hyper, None) {
                Ok(mode) => {
                    let min_eig = mode.hessian.symmetric_eigenvalues().min();
                    checks.push(VerifyCheck {
                        name: "mode_hessian_positive_definite".into(),
                        value: min_eig,
                        threshold: 0.0,
                        pass: min_eig > 0.0,
                    });
                }
                Err(_) => checks.push(failed("mode_hessian_positive_definite")),
            }
        }
        Err(_) => checks.push(failed("fixture")),
    }

    match derivative_deviations(&[1, 2, 3, 5], cfg.derivative_points, cfg.seed) {
        Ok((g, h)) => {
            checks.push(VerifyCheck::at_most("gradient_vs_finite_differences", g, 1e-6));
            checks.push(VerifyCheck::at_most("hessian_vs_finite_differences", h, 1e-5));
        }
        Err(_) => checks.push(failed("derivatives")),
    }

    for (i, (dof, a, lambda)) in tail_grid().into_iter().enumerate() {
        let r = chisq_tail_check(dof, a, lambda, cfg.tail_draws, cfg.seed.wrapping_add(i as u64));
        checks.push(VerifyCheck {
            name: format!("tail_bound dof={dof} a={a} lambda={lambda}"),
            value: r.empirical_prob,
            threshold: r.bound + 3.0 * r.std_error,
            pass: r.pass,
        });
    }
    checks
}

/// The nine central (dof, a) pairs {5, 10, 50} × {dof/2, dof, 2·dof} and
/// three noncentral triples.
pub fn tail_grid() -> Vec<(usize, f64, f64)> {
    let mut grid = Vec::new();
    for dof in [5usize, 10, 50] {
        let p = dof as f64;
        for a in [p / 2.0, p, 2.0 * p] {
            grid.push((dof, a, 0.0));
        }
    }
    grid.extend([(5, 50.0, 10.0), (10, 20.0, 5.0), (50, 60.0, 25.0)]);
    grid
}
