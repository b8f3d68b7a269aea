//! Reference marginal likelihoods by direct integration.
//!
//! With β integrated analytically against the Gaussian kernel,
//!
//! ```text
//! m_k(y) = c ∫∫ (σ²)^{-(n/2 + rk + α₁ + 1)} exp{-(R_k + 2α₂)/2σ²}
//!               τ^{-rk - k/2 - 3/2} e^{-n/2τ} E_k(∏ β^{2r}) |C_k|^{-1/2} dσ² dτ,
//! C_k = X_k'X_k + I/τ,  R_k = y'y − y'X_k C_k⁻¹ X_k'y,
//! ```
//!
//! where E_k is taken under N(C_k⁻¹X_k'y, σ²C_k⁻¹). The outer integral runs
//! over (log τ, log σ²) with tensor Gauss–Legendre on an automatically sized
//! box; E_k uses tensor Gauss–Hermite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use super::moments::{eval_polynomial, moment_polynomial};
use super::rules::{gauss_hermite, gauss_legendre, QuadratureRule};
use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::laplace::null_log_marginal;
use crate::priors::{log_dk, HyperConfig, TauMode};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Faces of the integration box must sit this far (in log units) below the peak.
const BOUNDARY_LOG_DROP: f64 = 30.0;
const MAX_BOX_EXPANSIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Gauss–Hermite nodes per coefficient.
    pub hermite_nodes: usize,
    /// Gauss–Legendre nodes per outer (log τ, log σ²) axis.
    pub outer_nodes: usize,
    /// Largest acceptable change of the marginal under node doubling.
    pub doubling_tolerance: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            hermite_nodes: 64,
            outer_nodes: 120,
            doubling_tolerance: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureResult {
    /// Log marginal from the doubled rule.
    pub log_marginal: f64,
    /// Relative change of the marginal between base and doubled rules.
    pub relative_change: f64,
    pub accuracy_warning: bool,
    /// Integration box in (log τ, log σ²), or just log σ² with τ fixed.
    pub bounds: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImportanceEstimate {
    pub log_marginal: f64,
    /// Standard error on the log scale (delta method).
    pub std_error: f64,
    pub samples: usize,
}

/// Conditional quantities at one τ: C⁻¹'s Cholesky factor, posterior mean, R,
/// log|C|, and E_k as a polynomial in σ.
struct TauSlice {
    chol_inv: DMatrix<f64>,
    mean: Vec<f64>,
    resid: f64,
    log_det_c: f64,
    moment: Vec<f64>,
}

struct Integrand {
    xtx: DMatrix<f64>,
    xty: DVector<f64>,
    yty: f64,
    n: f64,
    k: usize,
    r: u32,
    alpha1: f64,
    alpha2: f64,
    fixed_tau: Option<f64>,
    constant: f64,
}

impl Integrand {
    fn new(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Self {
        let xk = dataset.design(model);
        let k = model.len();
        let n = dataset.n() as f64;
        let r = cfg.r;
        let kf = k as f64;
        let rf = r as f64;
        let base = log_dk(k, r) - 0.5 * n * LN_2PI + cfg.alpha1 * cfg.alpha2.ln() - ln_gamma(cfg.alpha1);
        let (fixed_tau, constant) = match cfg.tau_mode {
            TauMode::Hierarchical => (None, base + 0.5 * (n / 2.0).ln() - ln_gamma(0.5)),
            TauMode::Fixed(t) => (Some(t), base - (rf * kf + 0.5 * kf) * t.ln()),
        };
        Integrand {
            xtx: xk.tr_mul(&xk),
            xty: xk.tr_mul(dataset.y()),
            yty: dataset.y().norm_squared(),
            n,
            k,
            r,
            alpha1: cfg.alpha1,
            alpha2: cfg.alpha2,
            fixed_tau,
            constant,
        }
    }

    fn dims(&self) -> usize {
        if self.fixed_tau.is_some() {
            1
        } else {
            2
        }
    }

    fn slice(&self, tau: f64, rule: &QuadratureRule) -> Option<TauSlice> {
        let c = &self.xtx + DMatrix::identity(self.k, self.k) / tau;
        let chol = c.cholesky()?;
        let log_det_c = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mean = chol.solve(&self.xty);
        let resid = (self.yty - self.xty.dot(&mean)).max(0.0);
        let chol_inv = chol.inverse().cholesky()?.l();
        let mean: Vec<f64> = mean.iter().copied().collect();
        let moment = moment_polynomial(&mean, &chol_inv, self.r, rule);
        Some(TauSlice {
            chol_inv,
            mean,
            resid,
            log_det_c,
            moment,
        })
    }

    /// Log integrand in (log τ, log σ²) without the E_k factor, Jacobian included.
    fn log_kernel(&self, log_tau: f64, log_s: f64, slice: &TauSlice) -> f64 {
        let kf = self.k as f64;
        let rf = self.r as f64;
        let s = log_s.exp();
        let mut h = self.constant - (0.5 * self.n + rf * kf + self.alpha1 + 1.0) * log_s
            - (slice.resid + 2.0 * self.alpha2) / (2.0 * s)
            - 0.5 * slice.log_det_c
            + log_s;
        if self.fixed_tau.is_none() {
            let tau = log_tau.exp();
            h += (-rf * kf - 0.5 * kf - 1.5) * log_tau - self.n / (2.0 * tau) + log_tau;
        }
        h
    }

    fn log_value_at(&self, log_tau: f64, log_s: f64, slice: &TauSlice) -> f64 {
        let moment = eval_polynomial(&slice.moment, (0.5 * log_s).exp());
        let h = self.log_kernel(log_tau, log_s, slice) + moment.ln();
        if h.is_nan() {
            f64::NEG_INFINITY
        } else {
            h
        }
    }

    fn tau_for(&self, log_tau: f64) -> f64 {
        self.fixed_tau.unwrap_or_else(|| log_tau.exp())
    }

    /// Evaluates at a point given as (log σ²) or (log τ, log σ²).
    fn log_value(&self, x: &[f64], rule: &QuadratureRule) -> f64 {
        let (log_tau, log_s) = if x.len() == 1 { (0.0, x[0]) } else { (x[0], x[1]) };
        match self.slice(self.tau_for(log_tau), rule) {
            Some(sl) => self.log_value_at(log_tau, log_s, &sl),
            None => f64::NEG_INFINITY,
        }
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Grid points spanning [lo, hi] inclusive.
fn linspace(lo: f64, hi: f64, m: usize) -> impl Iterator<Item = f64> {
    (0..m).map(move |i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
}

/// Coarse-to-fine grid search for the integrand's peak.
fn locate_peak(f: &Integrand, rule: &QuadratureRule) -> (Vec<f64>, f64) {
    let log_scale = (f.yty.max(1e-300) / f.n).ln();
    let mut bounds = vec![(log_scale - 20.0, log_scale + 5.0)];
    if f.dims() == 2 {
        bounds.insert(0, (f.n.ln() - 20.0, f.n.ln() + 12.0));
    }
    const M: usize = 41;
    let mut best = (vec![0.0; bounds.len()], f64::NEG_INFINITY);
    for _ in 0..8 {
        let axes: Vec<Vec<f64>> = bounds.iter().map(|&(lo, hi)| linspace(lo, hi, M).collect()).collect();
        let points: Vec<Vec<f64>> = if axes.len() == 1 {
            axes[0].iter().map(|&v| vec![v]).collect()
        } else {
            axes[0]
                .iter()
                .flat_map(|&u| axes[1].iter().map(move |&v| vec![u, v]))
                .collect()
        };
        let values: Vec<f64> = points.par_iter().map(|x| f.log_value(x, rule)).collect();
        for (x, v) in points.into_iter().zip(values) {
            if v > best.1 {
                best = (x, v);
            }
        }
        bounds = bounds
            .iter()
            .zip(&best.0)
            .map(|(&(lo, hi), &c)| {
                let cell = (hi - lo) / (M - 1) as f64;
                (c - 2.0 * cell, c + 2.0 * cell)
            })
            .collect();
    }
    best
}

/// Grows a box around the peak until every face is BOUNDARY_LOG_DROP below it.
fn size_box(f: &Integrand, rule: &QuadratureRule, peak: &[f64], mut peak_value: f64) -> Result<Vec<(f64, f64)>> {
    let d = peak.len();
    let mut bounds: Vec<(f64, f64)> = peak.iter().map(|&c| (c - 0.25, c + 0.25)).collect();
    const FACE_POINTS: usize = 41;
    for _ in 0..MAX_BOX_EXPANSIONS {
        let mut moved = false;
        for axis in 0..d {
            for upper in [false, true] {
                let at = if upper { bounds[axis].1 } else { bounds[axis].0 };
                let face: Vec<Vec<f64>> = if d == 1 {
                    vec![vec![at]]
                } else {
                    let other = 1 - axis;
                    let (lo, hi) = bounds[other];
                    linspace(lo, hi, FACE_POINTS)
                        .map(|o| {
                            let mut x = vec![0.0; 2];
                            x[axis] = at;
                            x[other] = o;
                            x
                        })
                        .collect()
                };
                let face_max = face
                    .par_iter()
                    .map(|x| f.log_value(x, rule))
                    .reduce(|| f64::NEG_INFINITY, f64::max);
                peak_value = peak_value.max(face_max);
                if face_max > peak_value - BOUNDARY_LOG_DROP {
                    let dist = (at - peak[axis]).abs();
                    let grow = (0.5 * dist).max(0.25);
                    if upper {
                        bounds[axis].1 += grow;
                    } else {
                        bounds[axis].0 -= grow;
                    }
                    moved = true;
                }
            }
        }
        if !moved {
            return Ok(bounds);
        }
    }
    Err(Error::NonConvergedQuadrature(f64::INFINITY))
}

fn tensor_log_integral(f: &Integrand, bounds: &[(f64, f64)], outer: usize, rule: &QuadratureRule) -> f64 {
    let gl = gauss_legendre(outer);
    let map = |(lo, hi): (f64, f64)| -> Vec<(f64, f64)> {
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        gl.nodes
            .iter()
            .zip(&gl.weights)
            .map(|(x, w)| (mid + half * x, (w * half).ln()))
            .collect()
    };
    if bounds.len() == 1 {
        let sl = f.slice(f.tau_for(0.0), rule);
        let values: Vec<f64> = map(bounds[0])
            .par_iter()
            .map(|&(v, lw)| match &sl {
                Some(sl) => lw + f.log_value_at(0.0, v, sl),
                None => f64::NEG_INFINITY,
            })
            .collect();
        return log_sum_exp(&values);
    }
    let vs = map(bounds[1]);
    let rows: Vec<Vec<f64>> = map(bounds[0])
        .par_iter()
        .map(|&(u, lwu)| match f.slice(u.exp(), rule) {
            Some(sl) => vs
                .iter()
                .map(|&(v, lwv)| lwu + lwv + f.log_value_at(u, v, &sl))
                .collect(),
            None => vec![f64::NEG_INFINITY; vs.len()],
        })
        .collect();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    log_sum_exp(&flat)
}

fn check_model(dataset: &Dataset, model: &ModelIndex, cfg: &HyperConfig) -> Result<()> {
    cfg.validate()?;
    model.validate(dataset.p())?;
    if model.len() > 2 {
        return Err(Error::DimensionTooLarge(model.len()));
    }
    Ok(())
}

/// Log marginal likelihood by nested quadrature, for models of size ≤ 2.
pub fn quadrature_log_marginal(
    dataset: &Dataset,
    model: &ModelIndex,
    cfg: &HyperConfig,
    qcfg: &QuadratureConfig,
) -> Result<QuadratureResult> {
    check_model(dataset, model, cfg)?;
    if qcfg.hermite_nodes < 16 || qcfg.outer_nodes < 16 {
        return Err(Error::InvalidConfig("quadrature node counts must be at least 16".into()));
    }
    if model.is_empty() {
        return Ok(QuadratureResult {
            log_marginal: null_log_marginal(dataset, cfg),
            relative_change: 0.0,
            accuracy_warning: false,
            bounds: Vec::new(),
        });
    }
    let f = Integrand::new(dataset, model, cfg);
    let rule = gauss_hermite(qcfg.hermite_nodes);
    let (peak, peak_value) = locate_peak(&f, &rule);
    if !peak_value.is_finite() {
        return Err(Error::NonConvergedQuadrature(f64::NAN));
    }
    let bounds = size_box(&f, &rule, &peak, peak_value)?;
    let coarse = tensor_log_integral(&f, &bounds, qcfg.outer_nodes, &rule);
    let fine_rule = gauss_hermite(2 * qcfg.hermite_nodes);
    let fine = tensor_log_integral(&f, &bounds, 2 * qcfg.outer_nodes, &fine_rule);
    if !fine.is_finite() {
        return Err(Error::NonConvergedQuadrature(f64::NAN));
    }
    let relative_change = (fine - coarse).exp_m1().abs();
    Ok(QuadratureResult {
        log_marginal: fine,
        relative_change,
        accuracy_warning: !(relative_change <= qcfg.doubling_tolerance),
        bounds,
    })
}

/// Monte Carlo estimate of the same marginal: a multivariate-t proposal over
/// (log τ, log σ²) centred at the integrand's peak, and β drawn from its
/// conditional Gaussian so the product moment is sampled instead of
/// integrated.
pub fn importance_sampling_log_marginal(
    dataset: &Dataset,
    model: &ModelIndex,
    cfg: &HyperConfig,
    samples: usize,
    seed: u64,
) -> Result<ImportanceEstimate> {
    check_model(dataset, model, cfg)?;
    if model.is_empty() {
        return Ok(ImportanceEstimate {
            log_marginal: null_log_marginal(dataset, cfg),
            std_error: 0.0,
            samples,
        });
    }
    let f = Integrand::new(dataset, model, cfg);
    let rule = gauss_hermite(16);
    let (peak, _) = locate_peak(&f, &rule);
    let d = peak.len();

    // Curvature at the peak by central differences.
    let step = 1e-3;
    let mut hess = DMatrix::zeros(d, d);
    let at = |x: &[f64]| f.log_value(x, &rule);
    let f0 = at(&peak);
    for a in 0..d {
        for b in a..d {
            let mut pp = peak.clone();
            let mut pm = peak.clone();
            let mut mp = peak.clone();
            let mut mm = peak.clone();
            pp[a] += step;
            pp[b] += step;
            pm[a] += step;
            pm[b] -= step;
            mp[a] -= step;
            mp[b] += step;
            mm[a] -= step;
            mm[b] -= step;
            let v = if a == b {
                let mut p = peak.clone();
                let mut m = peak.clone();
                p[a] += step;
                m[a] -= step;
                (at(&p) - 2.0 * f0 + at(&m)) / (step * step)
            } else {
                (at(&pp) - at(&pm) - at(&mp) + at(&mm)) / (4.0 * step * step)
            };
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    let precision = -hess;
    let cov = precision
        .try_inverse()
        .ok_or(Error::NonConvergedQuadrature(f64::NAN))?
        * 2.25;
    let chol = cov.cholesky().ok_or(Error::NonConvergedQuadrature(f64::NAN))?;
    let l = chol.l();
    let prec_scaled = chol.inverse();
    let log_det_cov = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let nu = 5.0;
    let df = d as f64;
    let t_const = ln_gamma((nu + df) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * df * (nu * std::f64::consts::PI).ln()
        - 0.5 * log_det_cov;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chi = ChiSquared::new(nu).expect("valid degrees of freedom");
    let mut log_w = Vec::with_capacity(samples);
    let two_r = 2.0 * f.r as f64;
    for _ in 0..samples {
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let w: f64 = chi.sample(&mut rng);
        let scale = (nu / w).sqrt();
        let delta = &l * DVector::from_vec(z) * scale;
        let x: Vec<f64> = peak.iter().zip(delta.iter()).map(|(p, q)| p + q).collect();
        let maha = delta.dot(&(&prec_scaled * &delta));
        let log_q = t_const - 0.5 * (nu + df) * (1.0 + maha / nu).ln();
        let (log_tau, log_s) = if d == 1 { (0.0, x[0]) } else { (x[0], x[1]) };
        let Some(sl) = f.slice(f.tau_for(log_tau), &rule) else {
            log_w.push(f64::NEG_INFINITY);
            continue;
        };
        let sd = log_s.exp().sqrt();
        let zb: Vec<f64> = (0..f.k).map(|_| rng.sample(StandardNormal)).collect();
        let beta = DVector::from_vec(sl.mean.clone()) + &sl.chol_inv * DVector::from_vec(zb) * sd;
        let log_prod: f64 = beta.iter().map(|b| two_r * b.abs().ln()).sum();
        let lw = f.log_kernel(log_tau, log_s, &sl) + log_prod - log_q;
        log_w.push(if lw.is_nan() { f64::NEG_INFINITY } else { lw });
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = log_w.iter().map(|v| (v - max).exp()).collect();
    let nf = samples as f64;
    let mean = scaled.iter().sum::<f64>() / nf;
    let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    Ok(ImportanceEstimate {
        log_marginal: max + mean.ln(),
        std_error: (var / nf).sqrt() / mean,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 1.5 * x[(i, 0)] + rng.sample::<f64, _>(StandardNormal));
        Dataset::standardized(x, y).unwrap()
    }

    #[test]
    fn null_model_is_exact() {
        let d = toy(30, 1);
        let cfg = HyperConfig::for_sample_size(30);
        let q = quadrature_log_marginal(&d, &ModelIndex::empty(), &cfg, &QuadratureConfig::default()).unwrap();
        assert_eq!(q.log_marginal, null_log_marginal(&d, &cfg));
    }

    #[test]
    fn rejects_large_models() {
        let d = toy(30, 1);
        let x = DMatrix::from_fn(30, 3, |i, j| d.x()[(i, j % 2)] + j as f64 * (i as f64).sin());
        let d3 = Dataset::standardized(x, d.y().clone()).unwrap();
        let cfg = HyperConfig::for_sample_size(30);
        assert_eq!(
            quadrature_log_marginal(&d3, &ModelIndex::new(vec![0, 1, 2]), &cfg, &QuadratureConfig::default())
                .unwrap_err(),
            Error::DimensionTooLarge(3)
        );
    }

    #[test]
    fn fixed_tau_single_axis_matches_doubling() {
        let d = toy(40, 3);
        let mut cfg = HyperConfig::for_sample_size(40);
        cfg.tau_mode = TauMode::Fixed(0.5);
        let q = quadrature_log_marginal(&d, &ModelIndex::new(vec![0]), &cfg, &QuadratureConfig::default()).unwrap();
        assert_eq!(q.bounds.len(), 1);
        assert!(!q.accuracy_warning, "{q:?}");
    }
}
