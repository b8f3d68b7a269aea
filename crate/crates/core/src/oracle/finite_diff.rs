use nalgebra::{DMatrix, DVector};

use crate::laplace::ModelObjective;
use crate::priors::ParamPoint;

/// Ridders' extrapolated central difference. Returns (derivative, error estimate).
pub fn ridders_derivative(f: impl Fn(f64) -> f64, x: f64, h0: f64) -> (f64, f64) {
    const CON: f64 = 1.4;
    const CON2: f64 = CON * CON;
    const NTAB: usize = 10;
    const SAFE: f64 = 2.0;
    let mut a = [[0.0f64; NTAB]; NTAB];
    let mut h = h0;
    a[0][0] = (f(x + h) - f(x - h)) / (2.0 * h);
    let mut best = a[0][0];
    let mut err = f64::MAX;
    for i in 1..NTAB {
        h /= CON;
        a[0][i] = (f(x + h) - f(x - h)) / (2.0 * h);
        let mut fac = CON2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= CON2;
            let errt = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if errt <= err {
                err = errt;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    (best, err)
}

fn initial_step(x: f64) -> f64 {
    0.1 * x.abs().max(0.1)
}

/// Gradient of a scalar function by Ridders differences in each coordinate.
pub fn central_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let g = |t: f64| {
                let mut buf = x.to_vec();
                buf[i] = t;
                f(&buf)
            };
            ridders_derivative(g, x[i], initial_step(x[i])).0
        })
        .collect()
}

/// Jacobian (rows = outputs) of a vector function.
pub fn central_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for out in 0..m {
        let grad = central_gradient(|z| f(z)[out], x);
        for (j, g) in grad.into_iter().enumerate() {
            jac[(out, j)] = g;
        }
    }
    jac
}

/// Largest entrywise |a − b| / max(|a|, |b|), with a floor of 1e-8 times the
/// largest entry so that entries that are zero up to round-off do not
/// dominate.
pub fn max_relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-8 * scale).max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiniteDifferenceKind {
    /// Working-coordinate gradient vs differences of the log joint.
    Gradient,
    /// Original-coordinate Hessian of −f vs differences of the gradient.
    Hessian,
}

/// Worst relative deviation between the analytic derivative and its
/// finite-difference reconstruction at `point`.
pub fn finite_difference_check(kind: FiniteDifferenceKind, objective: &ModelObjective, point: &ParamPoint) -> f64 {
    match kind {
        FiniteDifferenceKind::Gradient => {
            let theta = objective.to_working(point);
            let analytic = objective.gradient_working(point).expect("valid interior point");
            let numeric = central_gradient(
                |t| {
                    let p = objective.from_working(&DVector::from_column_slice(t));
                    objective.value(&p).unwrap_or(f64::NAN)
                },
                theta.as_slice(),
            );
            max_relative_deviation(analytic.as_slice(), &numeric)
        }
        FiniteDifferenceKind::Hessian => {
            let k = point.beta.len();
            let hier = objective.is_hierarchical();
            let to_point = |x: &[f64]| ParamPoint {
                beta: x[..k].to_vec(),
                tau: if hier { x[k] } else { point.tau },
                sigma2: x[x.len() - 1],
            };
            let mut x: Vec<f64> = point.beta.clone();
            if hier {
                x.push(point.tau);
            }
            x.push(point.sigma2);
            let analytic = objective.hessian_original(point).expect("valid interior point");
            let numeric = -central_jacobian(
                |z| {
                    objective
                        .gradient_original(&to_point(z))
                        .map(|g| g.iter().copied().collect())
                        .unwrap_or_else(|_| vec![f64::NAN; z.len()])
                },
                &x,
            );
            max_relative_deviation(analytic.as_slice(), numeric.as_slice())
        }
    }
}
