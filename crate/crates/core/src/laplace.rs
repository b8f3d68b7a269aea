//! Posterior mode search and the Laplace approximation of model marginals.
//!
//! For a model of size k ≥ 1 the log joint f(β, τ, σ²) is maximized by a
//! safeguarded Newton method in the working parameterization
//! θ = (β, log τ, log σ²). The marginal is then
//!
//! ```text
//! log m_k ≈ (d/2) log 2π + f(β̂, τ̂, σ̂²) − ½ log |V|,
//! ```
//!
//! where d = k + 2 (k + 1 with fixed τ, where the τ row is absent).
//!
//! Two variants are offered. [`LaplaceScale::Original`] expands f about its
//! mode with V the Hessian of −f in (β, τ, σ²). [`LaplaceScale::Log`] (the
//! default) expands the density of θ, f + log τ + log σ², about its own mode
//! with the Hessian taken in θ. Both integrate the same function; the log
//! scale is far more accurate because the τ and σ² marginals are skewed
//! inverse-gamma shapes that look much more Gaussian after a log transform.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::priors::{self, check_beta, check_scale, HyperConfig, ParamPoint, TauMode};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Newton safeguards.
pub const MAX_ITERATIONS: usize = 200;
pub const GRADIENT_TOLERANCE: f64 = 1e-6;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const INIT_MIN_ABS_BETA: f64 = 1e-3;

/// Coordinates in which the Laplace expansion is carried out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplaceScale {
    /// Expansion in (β, log τ, log σ²), including the change-of-variable
    /// Jacobian τσ².
    #[default]
    Log,
    /// Expansion of f itself in (β, τ, σ²).
    Original,
}

/// Converged Newton state for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeResult {
    pub point: ParamPoint,
    /// f at the mode.
    pub objective: f64,
    /// Hessian of −f in (β, τ, σ²); the τ row and column are absent in fixed-τ mode.
    pub hessian: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Infinity norm of the working-coordinate gradient of the maximized
    /// target at `point`.
    pub grad_norm: f64,
    /// [`LaplaceScale::Log`] when `point` maximizes f + log τ + log σ²
    /// rather than f.
    pub scale: LaplaceScale,
}

/// A model with its Laplace log marginal and unnormalized log posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredModel {
    pub model: ModelIndex,
    pub log_marginal: f64,
    pub log_posterior_unnorm: f64,
    /// β at the Laplace expansion point; empty for the null model.
    pub beta: Vec<f64>,
}

/// The log joint of one model, with analytic derivatives.
///
/// Sufficient statistics X_k'X_k and X_k'y are cached; the residual sum of
/// squares is always recomputed from the residual vector.
#[derive(Debug, Clone)]
pub struct ModelObjective {
    xk: DMatrix<f64>,
    y: DVector<f64>,
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    n: usize,
    r: f64,
    alpha2: f64,
    fixed_tau: Option<f64>,
    /// Coefficient of −log σ².
    sigma2_power: f64,
    /// Coefficient of −log τ (hierarchical mode only).
    tau_power: f64,
    constant: f64,
}

impl ModelObjective {
    pub fn new(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<Self> {
        cfg.validate()?;
        model.validate(dataset.p())?;
        let xk = dataset.design(model);
        let y = dataset.y().clone();
        let xtx = xk.tr_mul(&xk);
        let xty = xk.tr_mul(&y);
        let n = dataset.n();
        let k = model.len() as f64;
        let nf = n as f64;
        let r = cfg.r as f64;
        let sigma_prior_const = cfg.alpha1 * cfg.alpha2.ln() - ln_gamma(cfg.alpha1);
        let base = priors::log_dk(model.len(), cfg.r) - 0.5 * (nf + k) * LN_2PI + sigma_prior_const;
        let (fixed_tau, tau_power, constant) = match cfg.tau_mode {
            TauMode::Hierarchical => {
                let tau_prior_const = 0.5 * (nf / 2.0).ln() - ln_gamma(0.5);
                (None, r * k + 0.5 * (k + 3.0), base + tau_prior_const)
            }
            TauMode::Fixed(t) => (Some(t), 0.0, base - (r * k + 0.5 * k) * t.ln()),
        };
        Ok(ModelObjective {
            xk,
            y,
            xtx,
            xty,
            n,
            r,
            alpha2: cfg.alpha2,
            fixed_tau,
            sigma2_power: r * k + 0.5 * (nf + k) + cfg.alpha1 + 1.0,
            tau_power,
            constant,
        })
    }

    pub fn k(&self) -> usize {
        self.xk.ncols()
    }

    /// Number of free parameters: k + 2, or k + 1 with τ fixed.
    pub fn dim(&self) -> usize {
        self.k() + if self.fixed_tau.is_some() { 1 } else { 2 }
    }

    pub fn is_hierarchical(&self) -> bool {
        self.fixed_tau.is_none()
    }

    fn tau_of(&self, point: &ParamPoint) -> f64 {
        self.fixed_tau.unwrap_or(point.tau)
    }

    fn rss(&self, beta: &DVector<f64>) -> f64 {
        (&self.y - &self.xk * beta).norm_squared()
    }

    /// f(β, τ, σ²).
    pub fn value(&self, point: &ParamPoint) -> Result<f64> {
        self.check(point)?;
        let beta = DVector::from_column_slice(&point.beta);
        let tau = self.tau_of(point);
        let s = point.sigma2;
        let b2 = beta.norm_squared();
        let mut f = self.constant - self.sigma2_power * s.ln() - self.rss(&beta) / (2.0 * s)
            - b2 / (2.0 * tau * s)
            - self.alpha2 / s
            + 2.0 * self.r * beta.iter().map(|b| b.abs().ln()).sum::<f64>();
        if self.is_hierarchical() {
            f -= self.tau_power * tau.ln() + self.n as f64 / (2.0 * tau);
        }
        Ok(f)
    }

    fn check(&self, point: &ParamPoint) -> Result<()> {
        if point.beta.len() != self.k() {
            return Err(Error::InvalidConfig(format!(
                "beta has {} entries for a model of size {}",
                point.beta.len(),
                self.k()
            )));
        }
        check_beta(&point.beta)?;
        check_scale("sigma2", point.sigma2)?;
        if self.is_hierarchical() {
            check_scale("tau", point.tau)?;
        }
        Ok(())
    }

    /// Gradient of f in the original coordinates (β, τ, σ²).
    pub fn gradient_original(&self, point: &ParamPoint) -> Result<DVector<f64>> {
        self.check(point)?;
        let k = self.k();
        let beta = DVector::from_column_slice(&point.beta);
        let tau = self.tau_of(point);
        let s = point.sigma2;
        let b2 = beta.norm_squared();
        let rss = self.rss(&beta);
        let score = (&self.xty - &self.xtx * &beta) / s;
        let mut g = DVector::zeros(self.dim());
        for i in 0..k {
            g[i] = score[i] - beta[i] / (tau * s) + 2.0 * self.r / beta[i];
        }
        let g_s = -self.sigma2_power / s + (rss + b2 / tau + 2.0 * self.alpha2) / (2.0 * s * s);
        if self.is_hierarchical() {
            g[k] = -self.tau_power / tau + (b2 / s + self.n as f64) / (2.0 * tau * tau);
            g[k + 1] = g_s;
        } else {
            g[k] = g_s;
        }
        Ok(g)
    }

    /// Hessian of −f in the original coordinates.
    ///
    /// The σ² diagonal carries RSS/σ⁶, the exact second derivative of
    /// −RSS/(2σ²).
    pub fn hessian_original(&self, point: &ParamPoint) -> Result<DMatrix<f64>> {
        self.check(point)?;
        let k = self.k();
        let beta = DVector::from_column_slice(&point.beta);
        let tau = self.tau_of(point);
        let s = point.sigma2;
        let b2 = beta.norm_squared();
        let rss = self.rss(&beta);
        let d = self.dim();
        let mut v = DMatrix::zeros(d, d);
        v.view_mut((0, 0), (k, k)).copy_from(&(&self.xtx / s));
        for i in 0..k {
            v[(i, i)] += 1.0 / (tau * s) + 2.0 * self.r / (beta[i] * beta[i]);
        }
        let is = if self.is_hierarchical() { k + 1 } else { k };
        let resid_score = &self.xtx * &beta - &self.xty;
        for i in 0..k {
            let v13 = -beta[i] / (tau * s * s) - resid_score[i] / (s * s);
            v[(i, is)] = v13;
            v[(is, i)] = v13;
        }
        v[(is, is)] = -self.sigma2_power / (s * s) + b2 / (tau * s.powi(3)) + rss / s.powi(3)
            + 2.0 * self.alpha2 / s.powi(3);
        if self.is_hierarchical() {
            let it = k;
            for i in 0..k {
                let v12 = -beta[i] / (tau * tau * s);
                v[(i, it)] = v12;
                v[(it, i)] = v12;
            }
            v[(it, it)] = -self.tau_power / (tau * tau) + b2 / (tau.powi(3) * s) + self.n as f64 / tau.powi(3);
            let v23 = b2 / (2.0 * tau * tau * s * s);
            v[(it, is)] = v23;
            v[(is, it)] = v23;
        }
        Ok(v)
    }

    /// Maps a point to θ = (β, log τ, log σ²).
    pub fn to_working(&self, point: &ParamPoint) -> DVector<f64> {
        let k = self.k();
        let mut theta = DVector::zeros(self.dim());
        theta.rows_mut(0, k).copy_from_slice(&point.beta);
        if self.is_hierarchical() {
            theta[k] = point.tau.ln();
            theta[k + 1] = point.sigma2.ln();
        } else {
            theta[k] = point.sigma2.ln();
        }
        theta
    }

    pub fn from_working(&self, theta: &DVector<f64>) -> ParamPoint {
        let k = self.k();
        let beta = theta.rows(0, k).iter().copied().collect();
        match self.fixed_tau {
            None => ParamPoint {
                beta,
                tau: theta[k].exp(),
                sigma2: theta[k + 1].exp(),
            },
            Some(t) => ParamPoint {
                beta,
                tau: t,
                sigma2: theta[k].exp(),
            },
        }
    }

    /// Diagonal of the Jacobian ∂(β, τ, σ²)/∂θ.
    fn jacobian_diag(&self, point: &ParamPoint) -> DVector<f64> {
        let k = self.k();
        let mut j = DVector::from_element(self.dim(), 1.0);
        if self.is_hierarchical() {
            j[k] = point.tau;
            j[k + 1] = point.sigma2;
        } else {
            j[k] = point.sigma2;
        }
        j
    }

    /// Gradient of f in the working coordinates.
    pub fn gradient_working(&self, point: &ParamPoint) -> Result<DVector<f64>> {
        let g = self.gradient_original(point)?;
        Ok(g.component_mul(&self.jacobian_diag(point)))
    }

    /// Hessian of −f in the working coordinates: J V J − diag(J ∘ ∇f) on the
    /// log-scale entries.
    pub fn hessian_working(&self, point: &ParamPoint) -> Result<DMatrix<f64>> {
        let v = self.hessian_original(point)?;
        let g = self.gradient_original(point)?;
        let j = self.jacobian_diag(point);
        let mut h = DMatrix::from_fn(v.nrows(), v.ncols(), |a, b| j[a] * v[(a, b)] * j[b]);
        for a in self.k()..self.dim() {
            h[(a, a)] -= j[a] * g[a];
        }
        Ok(h)
    }

    /// Ridge start: β = (X'X + 1e-6·n·I)⁻¹X'y with small entries pushed off
    /// zero, σ² from the residual variance, τ = 1.
    pub fn initial_point(&self) -> Result<ParamPoint> {
        let k = self.k();
        let ridge = &self.xtx + DMatrix::identity(k, k) * (1e-6 * self.n as f64);
        let chol = ridge.cholesky().ok_or(Error::SingularDesign)?;
        let beta_hat = chol.solve(&self.xty);
        if beta_hat.iter().any(|b| !b.is_finite()) {
            return Err(Error::SingularDesign);
        }
        let beta: Vec<f64> = beta_hat
            .iter()
            .map(|&b| {
                if b.abs() < INIT_MIN_ABS_BETA {
                    INIT_MIN_ABS_BETA.copysign(if b == 0.0 { 1.0 } else { b })
                } else {
                    b
                }
            })
            .collect();
        let rss = self.rss(&DVector::from_column_slice(&beta));
        let y_scale = self.y.norm_squared() / self.n as f64;
        let sigma2 = (rss / self.n as f64).max(1e-6 * y_scale).max(1e-12);
        Ok(ParamPoint {
            beta,
            tau: self.fixed_tau.unwrap_or(1.0),
            sigma2,
        })
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn size_cap(dataset: &Dataset, cfg: &HyperConfig) -> usize {
    cfg.q_n.min(dataset.n() - 1)
}

fn check_size(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<()> {
    let cap = size_cap(dataset, cfg);
    if model.len() > cap {
        return Err(Error::ModelTooLarge {
            size: model.len(),
            cap,
        });
    }
    Ok(())
}

/// Gradient of f in the working coordinates (β, log τ, log σ²).
pub fn gradient(dataset: &Dataset, model: &ModelIndex, point: &ParamPoint, cfg: &HyperConfig) -> Result<DVector<f64>> {
    ModelObjective::new(dataset, model, cfg)?.gradient_working(point)
}

/// Hessian of −f in the original coordinates (β, τ, σ²).
pub fn hessian(dataset: &Dataset, model: &ModelIndex, point: &ParamPoint, cfg: &HyperConfig) -> Result<DMatrix<f64>> {
    ModelObjective::new(dataset, model, cfg)?.hessian_original(point)
}

/// Locates the posterior mode of (β, τ, σ²) for a non-empty model.
pub fn find_mode(
    dataset: &Dataset,
    model: &ModelIndex,
    cfg: &HyperConfig,
    init: Option<&ParamPoint>,
) -> Result<ModeResult> {
    if model.is_empty() {
        return Err(Error::InvalidConfig("the null model has no mode to find".into()));
    }
    check_size(dataset, model, cfg)?;
    let obj = ModelObjective::new(dataset, model, cfg)?;
    let start = match init {
        Some(p) => {
            obj.check(p)?;
            p.clone()
        }
        None => obj.initial_point()?,
    };
    newton_maximize(&obj, start, LaplaceScale::Original)
}

/// Maximizes f (Original) or f + log τ + log σ² (Log) over θ.
fn newton_maximize(obj: &ModelObjective, start: ParamPoint, scale: LaplaceScale) -> Result<ModeResult> {
    let k = obj.k();
    let with_jacobian = scale == LaplaceScale::Log;
    let target = |theta: &DVector<f64>, fv: f64| {
        if with_jacobian {
            fv + theta.rows(k, theta.len() - k).sum()
        } else {
            fv
        }
    };
    let target_grad = |point: &ParamPoint| -> Result<DVector<f64>> {
        let mut g = obj.gradient_working(point)?;
        if with_jacobian {
            g.rows_mut(k, g.len() - k).add_scalar_mut(1.0);
        }
        Ok(g)
    };
    let mut theta = obj.to_working(&start);
    let mut point = start;
    let mut f = target(&theta, obj.value(&point)?);
    let mut iterations = 0;
    let mut grad = target_grad(&point)?;
    let mut converged = false;
    loop {
        let gnorm = inf_norm(&grad);
        if gnorm <= GRADIENT_TOLERANCE * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        if iterations >= MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let h = obj.hessian_working(&point)?;
        let direction = ascent_direction(h, &grad, gnorm);
        let slope = grad.dot(&direction);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &direction * step;
            let crosses_pole = (0..k).any(|i| cand[i].signum() != theta[i].signum());
            if !crosses_pole && cand.iter().all(|v| v.is_finite()) {
                let cp = obj.from_working(&cand);
                if let Ok(fc) = obj.value(&cp).map(|v| target(&cand, v)) {
                    if fc.is_finite() && fc >= f + ARMIJO * step * slope {
                        accepted = Some((cand, cp, fc));
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, cp, fc)) => {
                theta = cand;
                point = cp;
                f = fc;
                grad = target_grad(&point)?;
            }
            None => break,
        }
    }
    let grad_norm = inf_norm(&grad);
    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            grad_norm,
        });
    }
    Ok(ModeResult {
        hessian: obj.hessian_original(&point)?,
        objective: obj.value(&point)?,
        point,
        converged,
        iterations,
        grad_norm,
        scale,
    })
}

/// Newton direction H⁻¹g, or, where H is not positive definite, the shifted
/// direction (H + λI)⁻¹g with the smallest λ = 10^j·scale that factors. Large
/// shifts turn it into steepest ascent of length ‖g‖/λ.
fn ascent_direction(h: DMatrix<f64>, grad: &DVector<f64>, gnorm: f64) -> DVector<f64> {
    if let Some(ch) = h.clone().cholesky() {
        return ch.solve(grad);
    }
    let d = h.nrows();
    let scale = h.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut lambda = 1e-8 * scale;
    for _ in 0..40 {
        let shifted = &h + DMatrix::identity(d, d) * lambda;
        if let Some(ch) = shifted.cholesky() {
            return ch.solve(grad);
        }
        lambda *= 10.0;
    }
    grad / gnorm.max(1.0)
}

fn log_det_pd(m: DMatrix<f64>, mode: &ModeResult) -> Result<f64> {
    let chol = m.cholesky().ok_or(Error::NonConvergence {
        iterations: mode.iterations,
        grad_norm: mode.grad_norm,
    })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

/// Exact log marginal of the null model (σ² integrated against its prior).
pub fn null_log_marginal(dataset: &Dataset, cfg: &HyperConfig) -> f64 {
    let n = dataset.n() as f64;
    let yty = dataset.y().norm_squared();
    -0.5 * n * (2.0 * PI).ln() + cfg.alpha1 * cfg.alpha2.ln() - ln_gamma(cfg.alpha1)
        + ln_gamma(0.5 * n + cfg.alpha1)
        - (0.5 * n + cfg.alpha1) * (0.5 * yty + cfg.alpha2).ln()
}

/// Laplace value assembled from a mode found at the matching scale.
///
/// Original: (d/2) log 2π + f − ½ log|V|. Log: (d/2) log 2π + f + log τ +
/// log σ² − ½ log|H|, H the Hessian of −(f + log τ + log σ²) in θ.
pub fn laplace_from_mode(obj: &ModelObjective, mode: &ModeResult) -> Result<f64> {
    let d = obj.dim() as f64;
    match mode.scale {
        LaplaceScale::Original => Ok(0.5 * d * LN_2PI + mode.objective - 0.5 * log_det_pd(mode.hessian.clone(), mode)?),
        LaplaceScale::Log => {
            // Adding log τ + log σ² shifts the working Hessian by nothing:
            // the Jacobian term is linear in θ.
            let h = obj.hessian_working(&mode.point)?;
            let theta = obj.to_working(&mode.point);
            let k = obj.k();
            let log_jacobian: f64 = theta.rows(k, theta.len() - k).sum();
            Ok(0.5 * d * LN_2PI + mode.objective + log_jacobian - 0.5 * log_det_pd(h, mode)?)
        }
    }
}

/// Laplace-approximated log m_k(y); exact for the null model.
pub fn log_marginal(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<f64> {
    Ok(log_marginal_with_mode(dataset, model, cfg)?.0)
}

/// Like [`log_marginal`] but also returns the expansion point (None for the
/// null model). Under [`LaplaceScale::Log`] this is the mode of the θ density,
/// not of f.
pub fn log_marginal_with_mode(
    dataset: &Dataset,
    model: &ModelIndex,
    cfg: &HyperConfig,
) -> Result<(f64, Option<ModeResult>)> {
    check_size(dataset, model, cfg)?;
    marginal_unchecked(dataset, model, cfg)
}

fn marginal_unchecked(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<(f64, Option<ModeResult>)> {
    cfg.validate()?;
    model.validate(dataset.p())?;
    if model.is_empty() {
        return Ok((null_log_marginal(dataset, cfg), None));
    }
    let obj = ModelObjective::new(dataset, model, cfg)?;
    let mode = newton_maximize(&obj, obj.initial_point()?, cfg.laplace_scale)?;
    Ok((laplace_from_mode(&obj, &mode)?, Some(mode)))
}

/// Scores a model: Laplace log marginal plus log model prior.
pub fn score_model(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<ScoredModel> {
    check_size(dataset, model, cfg)?;
    score_unchecked(dataset, model, cfg)
}

/// [`score_model`] without the min(q_n, n − 1) size cap.
///
/// For |k| ≥ n the Gram matrix X_k'X_k is singular; the β prior still makes
/// the posterior proper, so the Laplace value exists, but it sits outside
/// the regime the approximation is justified for. The model prior still
/// applies, so sizes above q_n score −∞.
pub fn score_model_uncapped(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<ScoredModel> {
    score_unchecked(dataset, model, cfg)
}

fn score_unchecked(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<ScoredModel> {
    let (log_marginal, mode) = marginal_unchecked(dataset, model, cfg)?;
    let prior = priors::log_model_prior(model, &cfg.model_prior, dataset.p(), cfg.q_n);
    Ok(ScoredModel {
        model: model.clone(),
        log_marginal,
        log_posterior_unnorm: log_marginal + prior,
        beta: mode.map(|m| m.point.beta).unwrap_or_default(),
    })
}

/// log π(k | y) − log π(t | y); the evidence π(y) cancels.
pub fn log_posterior_ratio(
    dataset: &Dataset,
    model_k: &ModelIndex,
    model_t: &ModelIndex,
    cfg: &HyperConfig,
) -> Result<f64> {
    if model_k == model_t {
        return Ok(0.0);
    }
    let k = score_model(dataset, model_k, cfg)?;
    let t = score_model(dataset, model_t, cfg)?;
    Ok(k.log_posterior_unnorm - t.log_posterior_unnorm)
}
