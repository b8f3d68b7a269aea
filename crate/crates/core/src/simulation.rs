//! Simulated regression experiments: data generation under three covariance
//! designs, posterior ratio curves, selection metrics, ROC sweeps and
//! out-of-sample prediction error.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::laplace::score_model_uncapped;
use crate::priors::{HyperConfig, TauMode};
use crate::search::{map_model, run_search, ScoredModelSet, SearchConfig};

/// Covariance of the covariate rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Isotropic,
    /// Σ_ij = ρ for i ≠ j.
    CompoundSymmetry(f64),
    /// Σ_ij = ρ^|i−j|.
    Ar1(f64),
}

impl Design {
    pub const CS: Design = Design::CompoundSymmetry(0.5);
    pub const AR1: Design = Design::Ar1(0.5);

    fn rho(&self) -> f64 {
        match *self {
            Design::Isotropic => 0.0,
            Design::CompoundSymmetry(r) | Design::Ar1(r) => r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rho = self.rho();
        let ok = match self {
            Design::Isotropic => true,
            Design::CompoundSymmetry(_) => (0.0..1.0).contains(&rho),
            Design::Ar1(_) => rho > -1.0 && rho < 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("correlation {rho} is out of range for {self}")))
        }
    }

    /// Fills `row` with one draw from N(0, Σ) in O(p).
    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R, row: &mut [f64]) {
        match *self {
            Design::Isotropic => row.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
            Design::CompoundSymmetry(rho) => {
                let shared: f64 = rng.sample::<f64, _>(StandardNormal) * rho.sqrt();
                let own = (1.0 - rho).sqrt();
                row.iter_mut()
                    .for_each(|v| *v = shared + own * rng.sample::<f64, _>(StandardNormal));
            }
            Design::Ar1(rho) => {
                let innov = (1.0 - rho * rho).sqrt();
                let mut prev = 0.0;
                for (j, v) in row.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    prev = if j == 0 { z } else { rho * prev + innov * z };
                    *v = prev;
                }
            }
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Design::Isotropic => write!(f, "iso"),
            Design::CompoundSymmetry(r) if r == 0.5 => write!(f, "cs"),
            Design::Ar1(r) if r == 0.5 => write!(f, "ar1"),
            Design::CompoundSymmetry(r) => write!(f, "cs:{r}"),
            Design::Ar1(r) => write!(f, "ar1:{r}"),
        }
    }
}

impl FromStr for Design {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rho) = match s.split_once(':') {
            Some((n, r)) => (
                n,
                Some(
                    r.parse::<f64>()
                        .map_err(|_| Error::InvalidConfig(format!("bad correlation in design '{s}'")))?,
                ),
            ),
            None => (s, None),
        };
        let d = match name {
            "iso" | "isotropic" => Design::Isotropic,
            "cs" => Design::CompoundSymmetry(rho.unwrap_or(0.5)),
            "ar1" => Design::Ar1(rho.unwrap_or(0.5)),
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "unknown design '{s}', expected iso, cs or ar1"
                )))
            }
        };
        d.validate()?;
        Ok(d)
    }
}

/// Dense Σ for a design. Sampling never needs this; it is for checks.
pub fn make_covariance(design: &Design, p: usize) -> DMatrix<f64> {
    let rho = design.rho();
    DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            match design {
                Design::Isotropic => 0.0,
                Design::CompoundSymmetry(_) => rho,
                Design::Ar1(_) => rho.powi(i.abs_diff(j) as i32),
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPattern {
    /// Magnitudes 1.1, 1.2, …, 2.0.
    Large,
    /// Magnitudes 0.3, 0.35, 0.4, 0.45, 0.5, 1.1, …, 1.5.
    Mixed,
    /// A full length-p coefficient vector; its nonzeros are the true model.
    Custom(Vec<f64>),
}

impl BetaPattern {
    fn magnitudes(&self) -> Vec<f64> {
        match self {
            BetaPattern::Large => (11..=20).map(|i| i as f64 / 10.0).collect(),
            BetaPattern::Mixed => vec![0.3, 0.35, 0.4, 0.45, 0.5, 1.1, 1.2, 1.3, 1.4, 1.5],
            BetaPattern::Custom(b) => b.iter().copied().filter(|v| *v != 0.0).collect(),
        }
    }

    pub fn support_size(&self) -> usize {
        self.magnitudes().len()
    }
}

impl fmt::Display for BetaPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaPattern::Large => write!(f, "large"),
            BetaPattern::Mixed => write!(f, "mixed"),
            BetaPattern::Custom(_) => write!(f, "custom"),
        }
    }
}

impl FromStr for BetaPattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "large" => Ok(BetaPattern::Large),
            "mixed" => Ok(BetaPattern::Mixed),
            _ => Err(Error::InvalidConfig(format!("unknown pattern '{s}', expected large or mixed"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub p: usize,
    pub n: usize,
    pub design: Design,
    pub beta_pattern: BetaPattern,
    pub sigma: f64,
    pub sign_flip_prob: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl SimSpec {
    /// n = p/5, large pattern, σ = 1, sign flips with probability 1/2.
    pub fn new(p: usize, design: Design, repetitions: usize, seed: u64) -> Self {
        SimSpec {
            p,
            n: p / 5,
            design,
            beta_pattern: BetaPattern::Large,
            sigma: 1.0,
            sign_flip_prob: 0.5,
            repetitions,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.design.validate()?;
        let t = self.beta_pattern.support_size();
        if let BetaPattern::Custom(b) = &self.beta_pattern {
            if b.len() != self.p {
                return Err(Error::InvalidConfig(format!(
                    "custom coefficient vector has {} entries for p = {}",
                    b.len(),
                    self.p
                )));
            }
        }
        if t > self.p {
            return Err(Error::InvalidConfig(format!("true support {t} exceeds p = {}", self.p)));
        }
        if self.n < t + 2 {
            return Err(Error::InvalidConfig(format!(
                "n = {} must be at least the true support size plus 2 ({})",
                self.n,
                t + 2
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidConfig(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.sign_flip_prob) {
            return Err(Error::InvalidConfig(format!(
                "sign_flip_prob must lie in [0, 1], got {}",
                self.sign_flip_prob
            )));
        }
        Ok(())
    }

    /// Independent generator for one repetition.
    pub fn rng_for(&self, repetition: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(repetition as u64);
        rng
    }
}

/// One simulated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub dataset: Dataset,
    pub raw_x: DMatrix<f64>,
    pub raw_y: DVector<f64>,
    pub true_model: ModelIndex,
    pub beta0: DVector<f64>,
}

/// Draws a dataset. Active positions are chosen uniformly at random (except
/// for a custom vector, which fixes them); signs flip independently.
pub fn sample_dataset<R: Rng + ?Sized>(spec: &SimSpec, rng: &mut R) -> Result<SimDraw> {
    spec.validate()?;
    let p = spec.p;
    let mut beta0 = DVector::zeros(p);
    match &spec.beta_pattern {
        BetaPattern::Custom(b) => beta0.copy_from_slice(b),
        pattern => {
            let mags = pattern.magnitudes();
            let mut positions = sample_indices(rng, p, mags.len()).into_vec();
            positions.sort_unstable();
            for (&j, m) in positions.iter().zip(mags) {
                beta0[j] = m;
            }
        }
    }
    for b in beta0.iter_mut().filter(|b| **b != 0.0) {
        if rng.random::<f64>() < spec.sign_flip_prob {
            *b = -*b;
        }
    }
    let true_model = ModelIndex::new((0..p).filter(|&j| beta0[j] != 0.0).collect());

    let mut raw_x = DMatrix::zeros(spec.n, p);
    let mut row = vec![0.0; p];
    for i in 0..spec.n {
        spec.design.sample_row(rng, &mut row);
        for (j, v) in row.iter().enumerate() {
            raw_x[(i, j)] = *v;
        }
    }
    let noise = DVector::from_fn(spec.n, |_, _| spec.sigma * rng.sample::<f64, _>(StandardNormal));
    let raw_y = &raw_x * &beta0 + noise;
    let dataset = Dataset::standardized(raw_x.clone(), raw_y.clone())?;
    Ok(SimDraw {
        dataset,
        raw_x,
        raw_y,
        true_model,
        beta0,
    })
}

/// Builds the non-true model for a ratio scenario:
/// 1 subset of t of size |t|/2; 2 superset of size 2|t|;
/// 3 arbitrary of size |t|/2; 4 arbitrary of size 2|t|.
pub fn scenario_model<R: Rng + ?Sized>(scenario: u8, truth: &ModelIndex, p: usize, rng: &mut R) -> Result<ModelIndex> {
    let t = truth.len();
    let half = (t / 2).max(1);
    let double = 2 * t;
    match scenario {
        1 => {
            let pick = sample_indices(rng, t, half).into_vec();
            Ok(ModelIndex::new(pick.into_iter().map(|i| truth.indices()[i]).collect()))
        }
        2 => {
            if double > p {
                return Err(Error::InvalidConfig(format!("scenario 2 needs 2|t| = {double} ≤ p = {p}")));
            }
            let outside: Vec<usize> = (0..p).filter(|j| !truth.contains(*j)).collect();
            let pick = sample_indices(rng, outside.len(), t).into_vec();
            let mut ix = truth.indices().to_vec();
            ix.extend(pick.into_iter().map(|i| outside[i]));
            Ok(ModelIndex::new(ix))
        }
        3 | 4 => {
            let size = if scenario == 3 { half } else { double };
            if size > p {
                return Err(Error::InvalidConfig(format!("scenario {scenario} needs {size} ≤ p = {p}")));
            }
            Ok(ModelIndex::new(sample_indices(rng, p, size).into_vec()))
        }
        _ => Err(Error::InvalidConfig(format!("scenario must be 1..=4, got {scenario}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub p: usize,
    pub scenario: u8,
    pub design: String,
    pub mean_log_ratio: f64,
    pub stderr: f64,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Mean log π(k|y)/π(t|y) over repetitions, for each p in `sweep` with
/// n = p/5 and for each scenario.
///
/// `base` supplies r, α₁, α₂, the τ mode and the model prior; q_n is set to
/// max(⌈n/2⌉, 2|t|) so every scenario model carries prior mass. Models with
/// |k| ≥ n are scored without the n − 1 size cap.
pub fn ratio_experiment(
    spec: &SimSpec,
    scenarios: &[u8],
    sweep: &[usize],
    base: &HyperConfig,
) -> Result<Vec<RatioRow>> {
    let mut rows = Vec::new();
    for &p in sweep {
        let mut s = spec.clone();
        s.p = p;
        s.n = p / 5;
        s.validate()?;
        let mut cfg = *base;
        cfg.q_n = s.n.div_ceil(2).max(2 * s.beta_pattern.support_size());
        let per_rep: Vec<Vec<f64>> = (0..s.repetitions)
            .into_par_iter()
            .map(|rep| -> Result<Vec<f64>> {
                let mut rng = s.rng_for(rep);
                let draw = sample_dataset(&s, &mut rng)?;
                let truth = score_model_uncapped(&draw.dataset, &draw.true_model, &cfg)?;
                scenarios
                    .iter()
                    .map(|&sc| {
                        let k = scenario_model(sc, &draw.true_model, p, &mut rng)?;
                        let other = score_model_uncapped(&draw.dataset, &k, &cfg)?;
                        Ok(other.log_posterior_unnorm - truth.log_posterior_unnorm)
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        for (i, &sc) in scenarios.iter().enumerate() {
            let values: Vec<f64> = per_rep.iter().map(|r| r[i]).collect();
            let (mean, se) = mean_and_stderr(&values);
            rows.push(RatioRow {
                p,
                scenario: sc,
                design: s.design.to_string(),
                mean_log_ratio: mean,
                stderr: se,
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub ppv: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

pub fn confusion(selected: &ModelIndex, truth: &ModelIndex, p: usize) -> Confusion {
    let tp = selected.indices().iter().filter(|j| truth.contains(**j)).count();
    let fp = selected.len() - tp;
    let fn_ = truth.len() - tp;
    Confusion {
        tp,
        fp,
        tn: p - tp - fp - fn_,
        fn_,
    }
}

fn ratio_or_zero(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// PPV, TPR and FPR. PPV's 0/0 case is 1 when both models are empty and 0
/// otherwise; TPR and FPR take 0 on an empty denominator.
pub fn selection_metrics(selected: &ModelIndex, truth: &ModelIndex, p: usize) -> MetricRow {
    let c = confusion(selected, truth, p);
    let ppv = if selected.is_empty() {
        if truth.is_empty() {
            1.0
        } else {
            0.0
        }
    } else {
        ratio_or_zero(c.tp, c.tp + c.fp)
    };
    MetricRow {
        ppv,
        tpr: ratio_or_zero(c.tp, c.tp + c.fn_),
        fpr: ratio_or_zero(c.fp, c.fp + c.tn),
    }
}

/// Prior on β's scale used by a selection run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// τ integrated against its inverse-gamma prior.
    HyperPmom,
    /// τ held fixed.
    FixedTau(f64),
}

impl Method {
    /// The conventional fixed scale for the second-order pMOM prior.
    pub const FIXED_DEFAULT: Method = Method::FixedTau(0.072);
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::HyperPmom => write!(f, "hyper-pmom"),
            Method::FixedTau(t) => write!(f, "pmom-tau-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTableRow {
    pub p: usize,
    pub design: String,
    pub pattern: String,
    pub method: String,
    pub ppv: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Outcome of one search on one simulated dataset.
#[derive(Debug, Clone)]
pub struct SelectionRun {
    pub repetition: usize,
    pub method: Method,
    pub truth: ModelIndex,
    pub selected: ModelIndex,
    pub metrics: MetricRow,
    pub scored: ScoredModelSet,
}

/// Runs the search on every repetition for every method.
///
/// `base` supplies r, α₁, α₂, q_n and the model prior; the τ mode comes from
/// the method. `search` supplies the search settings; its seed is replaced
/// per repetition by a draw from that repetition's stream.
pub fn selection_runs(
    spec: &SimSpec,
    methods: &[Method],
    base: &HyperConfig,
    search: &SearchConfig,
) -> Result<Vec<SelectionRun>> {
    spec.validate()?;
    let runs: Vec<Vec<SelectionRun>> = (0..spec.repetitions)
        .into_par_iter()
        .map(|rep| -> Result<Vec<SelectionRun>> {
            let mut rng = spec.rng_for(rep);
            let draw = sample_dataset(spec, &mut rng)?;
            let search_seed = rng.next_u64();
            methods
                .iter()
                .map(|&method| {
                    let mut cfg = *base;
                    cfg.tau_mode = match method {
                        Method::HyperPmom => TauMode::Hierarchical,
                        Method::FixedTau(t) => TauMode::Fixed(t),
                    };
                    let mut scfg = search.clone();
                    scfg.seed = search_seed;
                    let scored = run_search(&draw.dataset, &cfg, &scfg)?;
                    let selected = map_model(&scored)?.model;
                    Ok(SelectionRun {
                        repetition: rep,
                        method,
                        metrics: selection_metrics(&selected, &draw.true_model, spec.p),
                        truth: draw.true_model.clone(),
                        selected,
                        scored,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(runs.into_iter().flatten().collect())
}

/// Averages [`selection_runs`] into one row per method.
pub fn selection_experiment(
    spec: &SimSpec,
    methods: &[Method],
    base: &HyperConfig,
    search: &SearchConfig,
) -> Result<Vec<MetricTableRow>> {
    let runs = selection_runs(spec, methods, base, search)?;
    Ok(summarize_runs(spec, methods, &runs))
}

pub fn summarize_runs(spec: &SimSpec, methods: &[Method], runs: &[SelectionRun]) -> Vec<MetricTableRow> {
    methods
        .iter()
        .map(|m| {
            let rows: Vec<&MetricRow> = runs.iter().filter(|r| r.method == *m).map(|r| &r.metrics).collect();
            let c = rows.len().max(1) as f64;
            MetricTableRow {
                p: spec.p,
                design: spec.design.to_string(),
                pattern: spec.beta_pattern.to_string(),
                method: m.to_string(),
                ppv: rows.iter().map(|r| r.ppv).sum::<f64>() / c,
                tpr: rows.iter().map(|r| r.tpr).sum::<f64>() / c,
                fpr: rows.iter().map(|r| r.fpr).sum::<f64>() / c,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC sweep over inclusion-probability thresholds, selecting
/// {j : π_j ≥ threshold}. Starts at threshold +∞ (nothing selected) and ends
/// at 0 (everything selected).
pub fn roc_points(truth: &ModelIndex, scored: &ScoredModelSet, p: usize) -> Vec<RocPoint> {
    let incl = scored.inclusion_probabilities(p);
    let mut thresholds: Vec<f64> = incl.clone();
    thresholds.push(0.0);
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    std::iter::once(f64::INFINITY)
        .chain(thresholds)
        .map(|threshold| {
            let selected = ModelIndex::new((0..p).filter(|&j| incl[j] >= threshold).collect());
            let m = selection_metrics(&selected, truth, p);
            RocPoint {
                threshold,
                fpr: m.fpr,
                tpr: m.tpr,
            }
        })
        .collect()
}

/// Trapezoidal area under a sweep from [`roc_points`].
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum()
}

/// Least-squares fit of `model` on `train`, mean squared error on `test`.
pub fn mspe(train: &Dataset, test: &Dataset, model: &ModelIndex) -> Result<f64> {
    if train.p() != test.p() {
        return Err(Error::InvalidDataset(format!(
            "train has {} columns but test has {}",
            train.p(),
            test.p()
        )));
    }
    model.validate(train.p())?;
    let m = test.n() as f64;
    if model.is_empty() {
        return Ok(test.y().norm_squared() / m);
    }
    let xk = train.design(model);
    let gram = xk.tr_mul(&xk);
    let largest = gram.diagonal().amax();
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    // Round-off can let an exactly singular Gram matrix factor; reject tiny pivots.
    if chol.l_dirty().diagonal().iter().any(|l| l * l <= 1e-12 * largest) {
        return Err(Error::SingularDesign);
    }
    let beta = chol.solve(&xk.tr_mul(train.y()));
    let resid = test.y() - test.design(model) * beta;
    Ok(resid.norm_squared() / m)
}

/// Writes rows as CSV with a header taken from the field names.
pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Output(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Output(e.to_string()))?;
    Ok(())
}
