use thiserror::Error;

/// Errors raised while evaluating densities, fitting modes or running the oracles.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("coefficient {index} is zero; the pMOM density vanishes there")]
    ZeroCoefficient { index: usize },
    #[error("scale parameter {name} must be positive, got {value}")]
    NonPositiveScale { name: &'static str, value: f64 },
    #[error("Newton iteration did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("design restricted to the model is numerically singular")]
    SingularDesign,
    #[error("model of size {size} exceeds the admissible cap {cap}")]
    ModelTooLarge { size: usize, cap: usize },
    #[error("model index {index} out of range for p = {p}")]
    IndexOutOfRange { index: usize, p: usize },
    #[error("empty model set")]
    EmptySet,
    #[error("quadrature oracle supports at most 2 coefficients, got {0}")]
    DimensionTooLarge(usize),
    #[error("quadrature did not converge: relative change {0:e} under node doubling")]
    NonConvergedQuadrature(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("zero-variance design columns: {0:?}")]
    ZeroVarianceColumns(Vec<usize>),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("writing output failed: {0}")]
    Output(String),
}

pub type Result<T> = std::result::Result<T, Error>;
