//! Monte Carlo checks of chi-square concentration bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheckReport {
    pub dof: usize,
    pub noncentrality: f64,
    pub a: f64,
    pub empirical_prob: f64,
    /// The bound that gates `pass`.
    pub bound: f64,
    /// For the central case, the sharper 2exp(−a²/4p) form, reported only.
    pub stated_bound: Option<f64>,
    pub std_error: f64,
    pub draws: usize,
    pub pass: bool,
}

/// 2 exp(−a² / (4(p + a))): the two-sided central bound from the Chernoff argument.
pub fn central_bound_appendix(dof: usize, a: f64) -> f64 {
    2.0 * (-(a * a) / (4.0 * (dof as f64 + a))).exp()
}

/// 2 exp(−a² / 4p).
pub fn central_bound_stated(dof: usize, a: f64) -> f64 {
    2.0 * (-(a * a) / (4.0 * dof as f64)).exp()
}

/// exp(−p/2 {x − log(1 + x)}) with x = a / (p + λ): upper tail of χ²_p(λ) − (p + λ).
pub fn noncentral_bound(dof: usize, noncentrality: f64, a: f64) -> f64 {
    let p = dof as f64;
    let x = a / (p + noncentrality);
    (-(p / 2.0) * (x - x.ln_1p())).exp()
}

/// Draws `draws` seeded chi-square variates and compares the empirical
/// exceedance with the bound. The central case (λ = 0) tests the two-sided
/// event |χ²_p − p| > a; otherwise the upper event χ²_p(λ) − (p + λ) > a.
/// Passes when the empirical probability is within three binomial standard
/// errors of the bound.
pub fn chisq_tail_check(dof: usize, a: f64, noncentrality: f64, draws: usize, seed: u64) -> TailCheckReport {
    assert!(dof >= 1, "degrees of freedom must be positive");
    assert!(a > 0.0, "threshold must be positive");
    assert!(noncentrality >= 0.0, "noncentrality must be nonnegative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = dof as f64;
    let central = noncentrality == 0.0;
    let mut hits = 0usize;
    if central {
        let chi = ChiSquared::new(p).expect("positive dof");
        for _ in 0..draws {
            let x: f64 = chi.sample(&mut rng);
            if (x - p).abs() > a {
                hits += 1;
            }
        }
    } else {
        let shift = noncentrality.sqrt();
        let rest = (dof > 1).then(|| ChiSquared::new(p - 1.0).expect("positive dof"));
        for _ in 0..draws {
            let z: f64 = rng.sample(StandardNormal);
            let mut x = (z + shift).powi(2);
            if let Some(rest) = &rest {
                x += rest.sample(&mut rng);
            }
            if x - (p + noncentrality) > a {
                hits += 1;
            }
        }
    }
    let q = hits as f64 / draws as f64;
    let std_error = (q * (1.0 - q) / draws as f64).sqrt();
    let (bound, stated_bound) = if central {
        (central_bound_appendix(dof, a), Some(central_bound_stated(dof, a)))
    } else {
        (noncentral_bound(dof, noncentrality, a), None)
    };
    TailCheckReport {
        dof,
        noncentrality,
        a,
        empirical_prob: q,
        bound,
        stated_bound,
        std_error,
        draws,
        pass: q <= bound + 3.0 * std_error,
    }
}
