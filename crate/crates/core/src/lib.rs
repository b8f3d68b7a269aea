//! Bayesian variable selection for linear regression under hierarchical
//! (hyper-pMOM) non-local priors.
//!
//! Models are scored by Laplace-approximated marginal likelihoods
//! ([`laplace`]), explored with a screened shotgun stochastic search
//! ([`search`]) and checked against slow exact references ([`oracle`]).
//! [`simulation`] regenerates the consistency and selection experiments.

pub mod data;
pub mod error;
pub mod laplace;
pub mod oracle;
pub mod priors;
pub mod search;
pub mod simulation;

pub use data::{Dataset, ModelIndex, Standardization};
pub use error::{Error, Result};
pub use laplace::{find_mode, log_marginal, log_posterior_ratio, LaplaceScale, ModeResult, ScoredModel};
pub use priors::{HyperConfig, ModelPriorSpec, ParamPoint, TauMode};
pub use search::{map_model, run_search, ScoredModelSet, SearchConfig};
pub use simulation::{BetaPattern, Design, Method, MetricRow, SimSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
