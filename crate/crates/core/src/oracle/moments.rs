use nalgebra::DMatrix;

use super::rules::{gauss_hermite, QuadratureRule};
use crate::error::{Error, Result};

/// E[∏ X_i^{2r}] for X ~ N(mu, cov), by tensor Gauss–Hermite with `nodes`
/// points per dimension. Dimensions 0, 1 and 2 are supported.
pub fn gaussian_product_moment(mu: &[f64], cov: &DMatrix<f64>, r: u32, nodes: usize) -> Result<f64> {
    let k = mu.len();
    if k > 2 {
        return Err(Error::DimensionTooLarge(k));
    }
    if cov.nrows() != k || cov.ncols() != k {
        return Err(Error::InvalidConfig("covariance shape does not match mean".into()));
    }
    if k == 0 {
        return Ok(1.0);
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidConfig("covariance is not positive definite".into()))?;
    Ok(product_moment_with_rule(mu, &chol.l(), r, &gauss_hermite(nodes)))
}

/// Same as [`gaussian_product_moment`] with a precomputed Cholesky factor
/// `l` of the covariance and a precomputed Hermite rule.
pub(crate) fn product_moment_with_rule(mu: &[f64], l: &DMatrix<f64>, r: u32, rule: &QuadratureRule) -> f64 {
    let k = mu.len();
    let scale = std::f64::consts::PI.powf(-(k as f64) / 2.0);
    let two_r = 2 * r as i32;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut total = 0.0;
    match k {
        0 => return 1.0,
        1 => {
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                total += w * (mu[0] + sqrt2 * l[(0, 0)] * x).powi(two_r);
            }
        }
        _ => {
            for (x1, w1) in rule.nodes.iter().zip(&rule.weights) {
                let b1 = mu[0] + sqrt2 * l[(0, 0)] * x1;
                let f1 = b1.powi(two_r);
                let c2 = mu[1] + sqrt2 * l[(1, 0)] * x1;
                let mut inner = 0.0;
                for (x2, w2) in rule.nodes.iter().zip(&rule.weights) {
                    inner += w2 * (c2 + sqrt2 * l[(1, 1)] * x2).powi(two_r);
                }
                total += w1 * f1 * inner;
            }
        }
    }
    total * scale
}

/// Coefficients a_m with E[∏ (mu_i + t (L Z)_i)^{2r}] = Σ_m a_m t^m, Z
/// standard normal, by the same tensor Gauss–Hermite sum as
/// [`product_moment_with_rule`]. Lets a caller sweep the covariance scale t²
/// without redoing the node sum.
pub(crate) fn moment_polynomial(mu: &[f64], l: &DMatrix<f64>, r: u32, rule: &QuadratureRule) -> Vec<f64> {
    let k = mu.len();
    let deg = 2 * r as usize;
    let sqrt2 = std::f64::consts::SQRT_2;
    // Coefficients of (m + w t)^{2r} in t.
    let binom: Vec<f64> = (0..=deg)
        .scan(1.0, |c, j| {
            let out = *c;
            *c *= (deg - j) as f64 / (j + 1) as f64;
            Some(out)
        })
        .collect();
    let expand = |m: f64, w: f64, out: &mut [f64], weight: f64| {
        for (j, o) in out.iter_mut().enumerate() {
            *o += weight * binom[j] * m.powi((deg - j) as i32) * w.powi(j as i32);
        }
    };
    match k {
        0 => vec![1.0],
        1 => {
            let mut a = vec![0.0; deg + 1];
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                expand(mu[0], sqrt2 * l[(0, 0)] * x, &mut a, *w);
            }
            let scale = std::f64::consts::PI.powf(-0.5);
            a.iter().map(|v| v * scale).collect()
        }
        _ => {
            let mut a = vec![0.0; 2 * deg + 1];
            let mut inner = vec![0.0; deg + 1];
            let mut outer = vec![0.0; deg + 1];
            for (x1, w1) in rule.nodes.iter().zip(&rule.weights) {
                inner.iter_mut().for_each(|v| *v = 0.0);
                outer.iter_mut().for_each(|v| *v = 0.0);
                expand(mu[0], sqrt2 * l[(0, 0)] * x1, &mut outer, *w1);
                // The second coordinate's t-coefficient mixes both nodes.
                let w_a = sqrt2 * l[(1, 0)] * x1;
                for (x2, w2) in rule.nodes.iter().zip(&rule.weights) {
                    expand(mu[1], w_a + sqrt2 * l[(1, 1)] * x2, &mut inner, *w2);
                }
                for (i, oi) in outer.iter().enumerate() {
                    for (j, ij) in inner.iter().enumerate() {
                        a[i + j] += oi * ij;
                    }
                }
            }
            a.iter().map(|v| v / std::f64::consts::PI).collect()
        }
    }
}

/// Evaluates Σ a_m t^m by Horner's rule.
pub(crate) fn eval_polynomial(a: &[f64], t: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

/// Closed form of E[X^{2r}] for X ~ N(mu, var):
/// Σ_j C(2r, 2j) mu^{2r-2j} var^j (2j-1)!!.
pub fn normal_even_moment(mu: f64, var: f64, r: u32) -> f64 {
    let two_r = 2 * r as u64;
    let mut total = 0.0;
    let mut binom = 1.0; // C(2r, 2j)
    let mut dfact = 1.0; // (2j-1)!!
    for j in 0..=r as u64 {
        if j > 0 {
            let a = (two_r - 2 * j + 2) as f64;
            let b = (two_r - 2 * j + 1) as f64;
            binom *= a * b / ((2 * j - 1) as f64 * (2 * j) as f64);
            dfact *= (2 * j - 1) as f64;
        }
        total += binom * mu.powi((two_r - 2 * j) as i32) * var.powi(j as i32) * dfact;
    }
    total
}
