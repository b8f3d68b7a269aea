use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use nlselect_core::simulation::BetaPattern;
use nlselect_core::{Design, HyperConfig, ModelPriorSpec, SearchConfig, TauMode};
use serde::Serialize;

pub const SEED_ENV: &str = "NLSELECT_SEED";

#[derive(Debug, Clone, Parser, Serialize)]
#[command(name = "nlselect", version, about = "Bayesian variable selection with hyper-pMOM non-local priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize)]
#[serde(rename_all = "snake_case", tag = "command")]
pub enum Command {
    /// Select variables on a CSV dataset.
    Select(SelectArgs),
    /// Selection metrics (PPV/TPR/FPR) on simulated data.
    Simulate(SimulateArgs),
    /// Mean log posterior ratios of non-true models against the truth.
    Ratio(RatioArgs),
    /// Run the oracle suite; exits nonzero if any check fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Base seed. NLSELECT_SEED overrides it.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// Output directory.
    #[arg(long, default_value = "nlselect-out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Hyper {
    /// pMOM order.
    #[arg(long, default_value_t = 2)]
    pub r: u32,
    #[arg(long, default_value_t = 0.01)]
    pub alpha1: f64,
    #[arg(long, default_value_t = 0.01)]
    pub alpha2: f64,
    /// `hier` or `fixed:<tau>`.
    #[arg(long, value_parser = parse_tau)]
    pub tau: Option<TauMode>,
    /// `uniform` or `complexity:<c1>,<c2>`.
    #[arg(long = "model-prior", default_value = "uniform", value_parser = parse_model_prior)]
    pub model_prior: ModelPriorSpec,
    /// Largest admissible model size (default ⌈n/2⌉).
    #[arg(long)]
    pub qn: Option<usize>,
}

impl Hyper {
    pub fn config(&self, n: usize) -> HyperConfig {
        let mut cfg = HyperConfig::for_sample_size(n);
        cfg.r = self.r;
        cfg.alpha1 = self.alpha1;
        cfg.alpha2 = self.alpha2;
        cfg.tau_mode = self.tau.unwrap_or(TauMode::Hierarchical);
        cfg.model_prior = self.model_prior;
        if let Some(q) = self.qn {
            cfg.q_n = q;
        }
        cfg
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Search {
    /// Steps per temperature.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Columns kept by residual screening at each step.
    #[arg(long = "screen-size")]
    pub screen_size: Option<usize>,
}

impl Search {
    pub fn config(&self, n: usize, seed: u64, q_n: usize) -> SearchConfig {
        let mut s = SearchConfig::for_sample_size(n, seed);
        s.q_n = q_n;
        if let Some(i) = self.iterations {
            s.iterations_per_temperature = i;
        }
        if let Some(k) = self.screen_size {
            s.screen_size = k;
        }
        s
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Sim {
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    /// Sample size (default p/5).
    #[arg(long)]
    pub n: Option<usize>,
    /// `iso`, `cs` or `ar1` (optionally `cs:<rho>`, `ar1:<rho>`).
    #[arg(long, default_value = "iso")]
    pub design: Design,
    /// `large` or `mixed`.
    #[arg(long, default_value = "large")]
    pub pattern: BetaPattern,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SelectArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Name of the response column.
    #[arg(long, default_value = "y")]
    pub response: String,
    /// Fraction of rows held out for prediction error (0 disables).
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Number of top models reported.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub search: Search,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: Sim,
    /// Also write per-repetition ROC sweeps.
    #[arg(long)]
    pub roc: bool,
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub search: Search,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RatioArgs {
    #[command(flatten)]
    pub sim: Sim,
    /// Comma-separated p values (n = p/5 for each).
    #[arg(long, value_delimiter = ',', default_value = "100,200,400")]
    pub sweep: Vec<usize>,
    /// Comma-separated scenario numbers.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub scenarios: Vec<u8>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VerifyArgs {
    /// Monte Carlo draws per tail check.
    #[arg(long, default_value_t = 1_000_000)]
    pub tail_draws: usize,
    /// Random points per model size in the derivative checks.
    #[arg(long, default_value_t = 25)]
    pub derivative_points: usize,
    #[arg(long, default_value_t = 200_000)]
    pub importance_samples: usize,
    #[command(flatten)]
    pub common: Common,
}

impl Command {
    pub fn common(&self) -> &Common {
        match self {
            Command::Select(a) => &a.common,
            Command::Simulate(a) => &a.common,
            Command::Ratio(a) => &a.common,
            Command::Verify(a) => &a.common,
        }
    }

    pub fn common_mut(&mut self) -> &mut Common {
        match self {
            Command::Select(a) => &mut a.common,
            Command::Simulate(a) => &mut a.common,
            Command::Ratio(a) => &mut a.common,
            Command::Verify(a) => &mut a.common,
        }
    }
}

/// Applies NLSELECT_SEED if set.
pub fn apply_seed_env(cli: &mut Cli, value: Option<String>) -> anyhow::Result<()> {
    if let Some(v) = value {
        let seed = v
            .trim()
            .parse()
            .map_err(|_| anyhow::anyhow!("{SEED_ENV} must be an unsigned integer, got '{v}'"))?;
        cli.command.common_mut().seed = seed;
    }
    Ok(())
}

pub fn parse_tau(s: &str) -> Result<TauMode, String> {
    match s {
        "hier" | "hierarchical" => Ok(TauMode::Hierarchical),
        _ => {
            let v = s
                .strip_prefix("fixed:")
                .ok_or_else(|| format!("expected 'hier' or 'fixed:<tau>', got '{s}'"))?;
            let t: f64 = v.parse().map_err(|_| format!("'{v}' is not a number"))?;
            if t > 0.0 && t.is_finite() {
                Ok(TauMode::Fixed(t))
            } else {
                Err(format!("fixed tau must be positive, got {t}"))
            }
        }
    }
}

pub fn parse_model_prior(s: &str) -> Result<ModelPriorSpec, String> {
    if s == "uniform" {
        return Ok(ModelPriorSpec::UniformRestricted);
    }
    let rest = s
        .strip_prefix("complexity:")
        .ok_or_else(|| format!("expected 'uniform' or 'complexity:<c1>,<c2>', got '{s}'"))?;
    let parts: Vec<&str> = rest.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("complexity prior needs two values, got '{rest}'"));
    }
    let c1: f64 = parts[0].trim().parse().map_err(|_| format!("'{}' is not a number", parts[0]))?;
    let c2: f64 = parts[1].trim().parse().map_err(|_| format!("'{}' is not a number", parts[1]))?;
    if !(c1 > 0.0 && c2 > 0.0) {
        return Err(format!("complexity prior needs c1 > 0 and c2 > 0, got {c1}, {c2}"));
    }
    Ok(ModelPriorSpec::Complexity { c1, c2 })
}
