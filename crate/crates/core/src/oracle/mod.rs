//! Slow, independent references used to check the fast paths: tensor
//! quadrature of model marginals, Gaussian product moments, finite
//! differences and Monte Carlo chi-square tail checks.

mod enumerate;
mod finite_diff;
mod marginal;
mod moments;
mod rules;
mod suite;
mod tail;

pub use enumerate::{exhaustive_scores, MAX_ENUMERATION_P};
pub use finite_diff::{
    central_gradient, central_jacobian, finite_difference_check, max_relative_deviation, ridders_derivative,
    FiniteDifferenceKind,
};
pub use marginal::{
    importance_sampling_log_marginal, quadrature_log_marginal, ImportanceEstimate, QuadratureConfig,
    QuadratureResult,
};
pub use moments::{gaussian_product_moment, normal_even_moment};
pub use rules::{gauss_hermite, gauss_legendre, QuadratureRule};
pub use tail::{central_bound_appendix, central_bound_stated, chisq_tail_check, noncentral_bound, TailCheckReport};
pub use suite::{derivative_deviations, fixture, random_point, run_suite, tail_grid, SuiteConfig, VerifyCheck};
