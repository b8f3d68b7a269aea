//! Closed-form log densities of the hierarchical pMOM model.
//!
//! The coefficient prior is the order-`r` product-moment (pMOM) density with
//! identity scale matrix,
//!
//! ```text
//! π(β | τ, σ²) = d_k (2π)^{-k/2} (τσ²)^{-rk-k/2} exp(-β'β / 2τσ²) ∏ β_i^{2r},
//! d_k = ((2r-1)!!)^{-k},
//! ```
//!
//! with τ ~ Inverse-Gamma(1/2, n/2) in the hierarchical mode and
//! σ² ~ Inverse-Gamma(α₁, α₂). Everything is evaluated in log space.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::laplace::LaplaceScale;

/// Coefficients smaller than this in magnitude are treated as sitting on the pole.
pub const ZERO_COEFFICIENT: f64 = 1e-300;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// How the pMOM scale τ is handled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauMode {
    /// τ ~ Inverse-Gamma(1/2, n/2) and is integrated out (hyper-pMOM).
    Hierarchical,
    /// τ held at a constant, no prior term.
    Fixed(f64),
}

/// Prior over the model space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelPriorSpec {
    /// Equal mass on every model of size at most `q_n`.
    UniformRestricted,
    /// π(k) ∝ c1^{-|k|} p^{-c2 |k|}, truncated at `q_n`.
    Complexity { c1: f64, c2: f64 },
}

/// Hyperparameters of the hierarchy. The pMOM scale matrix is always the identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub r: u32,
    pub alpha1: f64,
    pub alpha2: f64,
    pub tau_mode: TauMode,
    pub model_prior: ModelPriorSpec,
    /// Largest model size with positive prior mass.
    pub q_n: usize,
    #[serde(default)]
    pub laplace_scale: LaplaceScale,
}

impl HyperConfig {
    /// r = 2, α₁ = α₂ = 0.01, hierarchical τ, uniform prior restricted to ⌈n/2⌉.
    pub fn for_sample_size(n: usize) -> Self {
        HyperConfig {
            r: 2,
            alpha1: 0.01,
            alpha2: 0.01,
            tau_mode: TauMode::Hierarchical,
            model_prior: ModelPriorSpec::UniformRestricted,
            q_n: n.div_ceil(2).max(1),
            laplace_scale: LaplaceScale::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r < 1 {
            return Err(Error::InvalidConfig("r must be at least 1".into()));
        }
        if !(self.alpha1 > 0.0 && self.alpha2 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "alpha1 and alpha2 must be positive, got {} and {}",
                self.alpha1, self.alpha2
            )));
        }
        if self.q_n < 1 {
            return Err(Error::InvalidConfig("q_n must be at least 1".into()));
        }
        if let TauMode::Fixed(tau) = self.tau_mode {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "fixed tau must be positive, got {tau}"
                )));
            }
        }
        if let ModelPriorSpec::Complexity { c1, c2 } = self.model_prior {
            if !(c1 > 0.0 && c2 > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "complexity prior needs c1 > 0 and c2 > 0, got {c1}, {c2}"
                )));
            }
        }
        Ok(())
    }
}

/// A point in (β, τ, σ²) space for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    pub beta: Vec<f64>,
    pub tau: f64,
    pub sigma2: f64,
}

impl ParamPoint {
    pub fn check(&self) -> Result<()> {
        check_beta(&self.beta)?;
        check_scale("tau", self.tau)?;
        check_scale("sigma2", self.sigma2)
    }
}

pub(crate) fn check_beta(beta: &[f64]) -> Result<()> {
    match beta.iter().position(|b| !(b.abs() >= ZERO_COEFFICIENT)) {
        Some(index) => Err(Error::ZeroCoefficient { index }),
        None => Ok(()),
    }
}

pub(crate) fn check_scale(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 {
        Ok(())
    } else {
        Err(Error::NonPositiveScale { name, value })
    }
}

/// (2r-1)!! as a float.
pub fn double_factorial_odd(r: u32) -> f64 {
    (1..=r).map(|i| (2 * i - 1) as f64).product()
}

/// The pMOM normalizing constant d_k = ((2r-1)!!)^{-k}.
pub fn dk_normalizer(k: usize, r: u32) -> f64 {
    log_dk(k, r).exp()
}

pub fn log_dk(k: usize, r: u32) -> f64 {
    -(k as f64) * double_factorial_odd(r).ln()
}

fn sum_log_abs(beta: &[f64]) -> f64 {
    beta.iter().map(|b| b.abs().ln()).sum()
}

/// Log pMOM density of β given τ and σ².
pub fn log_pmom_prior(beta: &[f64], tau: f64, sigma2: f64, r: u32) -> Result<f64> {
    check_beta(beta)?;
    check_scale("tau", tau)?;
    check_scale("sigma2", sigma2)?;
    let k = beta.len() as f64;
    let r = r as f64;
    let ss: f64 = beta.iter().map(|b| b * b).sum();
    Ok(log_dk(beta.len(), r as u32) - 0.5 * k * LN_2PI - (r * k + 0.5 * k) * (tau * sigma2).ln()
        - ss / (2.0 * tau * sigma2)
        + 2.0 * r * sum_log_abs(beta))
}

/// Log density of β given σ² with τ integrated out against its
/// Inverse-Gamma(1/2, n/2) prior.
pub fn log_marginal_beta_prior(beta: &[f64], sigma2: f64, n: usize, r: u32) -> Result<f64> {
    check_beta(beta)?;
    check_scale("sigma2", sigma2)?;
    let k = beta.len() as f64;
    let half_n = n as f64 / 2.0;
    let shape = r as f64 * k + 0.5 * k + 0.5;
    let ss: f64 = beta.iter().map(|b| b * b).sum();
    Ok(0.5 * half_n.ln() - ln_gamma(0.5) + ln_gamma(shape)
        - shape * (half_n + ss / (2.0 * sigma2)).ln()
        + log_dk(beta.len(), r)
        - 0.5 * k * LN_2PI
        - (r as f64 * k + 0.5 * k) * sigma2.ln()
        + 2.0 * r as f64 * sum_log_abs(beta))
}

/// Log Inverse-Gamma(1/2, n/2) density of τ.
pub fn log_tau_prior(tau: f64, n: usize) -> Result<f64> {
    check_scale("tau", tau)?;
    let half_n = n as f64 / 2.0;
    let v = 0.5 * half_n.ln() - ln_gamma(0.5) - 1.5 * tau.ln() - half_n / tau;
    Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
}

/// Log Inverse-Gamma(α₁, α₂) density of σ².
pub fn log_sigma2_prior(sigma2: f64, alpha1: f64, alpha2: f64) -> Result<f64> {
    check_scale("sigma2", sigma2)?;
    let v = alpha1 * alpha2.ln() - ln_gamma(alpha1) - (alpha1 + 1.0) * sigma2.ln() - alpha2 / sigma2;
    Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
}

/// Unnormalized log prior mass of a model; `-inf` beyond the size cap.
pub fn log_model_prior(model: &ModelIndex, spec: &ModelPriorSpec, p: usize, q_n: usize) -> f64 {
    let k = model.len();
    if k > q_n {
        return f64::NEG_INFINITY;
    }
    match *spec {
        ModelPriorSpec::UniformRestricted => 0.0,
        ModelPriorSpec::Complexity { c1, c2 } => {
            if k == 0 {
                0.0
            } else {
                -(k as f64) * (c1.ln() + c2 * (p as f64).ln())
            }
        }
    }
}

/// Gaussian log likelihood of y given X_k β and σ².
pub fn log_likelihood(dataset: &Dataset, model: &ModelIndex, beta: &[f64], sigma2: f64) -> Result<f64> {
    check_scale("sigma2", sigma2)?;
    let rss = residual_sum_of_squares(dataset, model, beta);
    let n = dataset.n() as f64;
    Ok(-0.5 * n * (2.0 * PI * sigma2).ln() - rss / (2.0 * sigma2))
}

pub(crate) fn residual_sum_of_squares(dataset: &Dataset, model: &ModelIndex, beta: &[f64]) -> f64 {
    let x = dataset.x();
    let mut rss = 0.0;
    for i in 0..dataset.n() {
        let fit: f64 = model
            .indices()
            .iter()
            .zip(beta)
            .map(|(&j, b)| x[(i, j)] * b)
            .sum();
        rss += (dataset.y()[i] - fit).powi(2);
    }
    rss
}

/// Log of the unnormalized joint density p(y | β, σ²) π(β | τ, σ²) π(τ) π(σ²),
/// including every normalizing constant. In fixed-τ mode `point.tau` is
/// ignored in favour of the configured value and there is no τ prior.
pub fn log_joint(dataset: &Dataset, model: &ModelIndex, point: &ParamPoint, cfg: &HyperConfig) -> Result<f64> {
    if point.beta.len() != model.len() {
        return Err(Error::InvalidConfig(format!(
            "beta has {} entries for a model of size {}",
            point.beta.len(),
            model.len()
        )));
    }
    model.validate(dataset.p())?;
    let (tau, tau_term) = match cfg.tau_mode {
        TauMode::Hierarchical => (point.tau, log_tau_prior(point.tau, dataset.n())?),
        TauMode::Fixed(t) => (t, 0.0),
    };
    Ok(log_likelihood(dataset, model, &point.beta, point.sigma2)?
        + log_pmom_prior(&point.beta, tau, point.sigma2, cfg.r)?
        + tau_term
        + log_sigma2_prior(point.sigma2, cfg.alpha1, cfg.alpha2)?)
}
