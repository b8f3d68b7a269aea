//! Shotgun stochastic search with screening over the model space.
//!
//! Each step screens the columns most correlated with the current residual,
//! scores every addition, deletion and swap built from them (in parallel,
//! memoized), and moves to one neighbour with probability proportional to
//! exp(log posterior / T). T walks down a fixed ladder.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::laplace::{score_model, ScoredModel};
use crate::priors::HyperConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub temperature_ladder: Vec<f64>,
    pub iterations_per_temperature: usize,
    pub screen_size: usize,
    pub seed: u64,
    /// Largest model size the search will visit.
    pub q_n: usize,
}

impl SearchConfig {
    /// Ladder of 10 geometric temperatures 3 → 1, 30 steps each,
    /// screen_size = max(20, ⌈n / ln n⌉), q_n = ⌈n/2⌉.
    pub fn for_sample_size(n: usize, seed: u64) -> Self {
        let steps = 10;
        let ratio = (1.0f64 / 3.0).powf(1.0 / (steps - 1) as f64);
        let mut temperature_ladder: Vec<f64> = (0..steps).map(|i| 3.0 * ratio.powi(i)).collect();
        temperature_ladder[steps as usize - 1] = 1.0;
        let nf = n.max(2) as f64;
        SearchConfig {
            temperature_ladder,
            iterations_per_temperature: 30,
            screen_size: ((nf / nf.ln()).ceil() as usize).max(20),
            seed,
            q_n: n.div_ceil(2).max(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature_ladder.is_empty() {
            return Err(Error::InvalidConfig("temperature ladder is empty".into()));
        }
        if let Some(t) = self.temperature_ladder.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidConfig(format!("temperatures must be positive, got {t}")));
        }
        if self.screen_size < 1 {
            return Err(Error::InvalidConfig("screen_size must be at least 1".into()));
        }
        if self.q_n < 1 {
            return Err(Error::InvalidConfig("search q_n must be at least 1".into()));
        }
        Ok(())
    }
}

/// Every model scored during a search, plus the trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoredModelSet {
    entries: BTreeMap<ModelIndex, ScoredModel>,
    visits: Vec<ModelIndex>,
    failures: Vec<(ModelIndex, Error)>,
}

impl ScoredModelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, scored: ScoredModel) {
        self.entries.insert(scored.model.clone(), scored);
    }

    pub fn get(&self, model: &ModelIndex) -> Option<&ScoredModel> {
        self.entries.get(model)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in model order.
    pub fn iter(&self) -> impl Iterator<Item = &ScoredModel> {
        self.entries.values()
    }

    /// The model occupied at each step, starting model first.
    pub fn visits(&self) -> &[ModelIndex] {
        &self.visits
    }

    /// Models whose evaluation failed; they count as −∞.
    pub fn failures(&self) -> &[(ModelIndex, Error)] {
        &self.failures
    }

    /// The `count` best entries, best first, under the [`map_model`] ordering.
    pub fn top(&self, count: usize) -> Vec<ScoredModel> {
        let mut all: Vec<&ScoredModel> = self.entries.values().collect();
        all.sort_by(|a, b| rank(a, b));
        all.into_iter().take(count).cloned().collect()
    }

    /// Posterior-weighted inclusion frequency of each of the p columns,
    /// weights ∝ exp(log posterior − max) over the scored set.
    pub fn inclusion_probabilities(&self, p: usize) -> Vec<f64> {
        let max = self
            .entries
            .values()
            .map(|e| e.log_posterior_unnorm)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut incl = vec![0.0; p];
        if !max.is_finite() {
            return incl;
        }
        let mut total = 0.0;
        for e in self.entries.values() {
            let w = (e.log_posterior_unnorm - max).exp();
            total += w;
            for &j in e.model.indices() {
                if j < p {
                    incl[j] += w;
                }
            }
        }
        incl.iter_mut().for_each(|v| *v /= total);
        incl
    }
}

/// Best first: higher score, then smaller size, then lexicographic indices.
fn rank(a: &ScoredModel, b: &ScoredModel) -> Ordering {
    b.log_posterior_unnorm
        .total_cmp(&a.log_posterior_unnorm)
        .then(a.model.len().cmp(&b.model.len()))
        .then_with(|| a.model.indices().cmp(b.model.indices()))
}

/// The maximum a posteriori entry.
pub fn map_model(set: &ScoredModelSet) -> Result<ScoredModel> {
    set.entries.values().min_by(|a, b| rank(a, b)).cloned().ok_or(Error::EmptySet)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Neighborhood {
    pub additions: Vec<ModelIndex>,
    pub deletions: Vec<ModelIndex>,
    pub swaps: Vec<ModelIndex>,
}

impl Neighborhood {
    /// All neighbours, sorted and deduplicated.
    pub fn all(&self) -> Vec<ModelIndex> {
        let mut v: Vec<ModelIndex> = self
            .additions
            .iter()
            .chain(&self.deletions)
            .chain(&self.swaps)
            .cloned()
            .collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Full neighbourhood with every column a candidate.
pub fn neighbors(model: &ModelIndex, p: usize, q_n: usize) -> Neighborhood {
    let candidates: Vec<usize> = (0..p).collect();
    screened_neighbors(model, &candidates, q_n)
}

/// Neighbourhood restricted to `candidates` for additions and swap-ins.
pub fn screened_neighbors(model: &ModelIndex, candidates: &[usize], q_n: usize) -> Neighborhood {
    let outside: Vec<usize> = candidates.iter().copied().filter(|j| !model.contains(*j)).collect();
    let additions = if model.len() < q_n {
        outside.iter().map(|&j| model.with(j)).collect()
    } else {
        Vec::new()
    };
    let deletions = model.indices().iter().map(|&i| model.without(i)).collect();
    let swaps = model
        .indices()
        .iter()
        .flat_map(|&i| {
            let base = model.without(i);
            outside.iter().map(move |&j| base.with(j))
        })
        .collect();
    Neighborhood {
        additions,
        deletions,
        swaps,
    }
}

/// The `screen_size` columns outside `model` most correlated (in absolute
/// value) with the residual y − X_model β; ties go to the smaller index.
pub fn screen(dataset: &Dataset, model: &ModelIndex, current_beta: &[f64], screen_size: usize) -> Vec<usize> {
    let mut resid = dataset.y().clone();
    if !model.is_empty() && current_beta.len() == model.len() {
        resid -= dataset.design(model) * DVector::from_column_slice(current_beta);
    }
    let x = dataset.x();
    let mut stats: Vec<(usize, f64)> = (0..dataset.p())
        .filter(|j| !model.contains(*j))
        .map(|j| {
            let col = x.column(j);
            let norm = col.norm();
            let c = if norm > 0.0 { col.dot(&resid).abs() / norm } else { 0.0 };
            (j, c)
        })
        .collect();
    stats.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    stats.into_iter().take(screen_size).map(|(j, _)| j).collect()
}

/// Scores every model in `models` not yet in `set` (in parallel) and records
/// the outcomes in model order.
fn score_new(dataset: &Dataset, cfg: &HyperConfig, set: &mut ScoredModelSet, models: &[ModelIndex]) {
    let fresh: Vec<&ModelIndex> = models
        .iter()
        .filter(|m| !set.entries.contains_key(*m) && !set.failures.iter().any(|(f, _)| f == *m))
        .collect();
    let results: Vec<(ModelIndex, Result<ScoredModel>)> = fresh
        .par_iter()
        .map(|m| ((*m).clone(), score_model(dataset, m, cfg)))
        .collect();
    for (m, r) in results {
        match r {
            Ok(s) => set.insert(s),
            Err(e) => {
                log::debug!("model {m} failed to score: {e}");
                set.failures.push((m, e));
            }
        }
    }
}

fn score_of(set: &ScoredModelSet, m: &ModelIndex) -> f64 {
    set.get(m).map_or(f64::NEG_INFINITY, |s| s.log_posterior_unnorm)
}

/// Runs the seeded search and returns every model it scored.
pub fn run_search(dataset: &Dataset, cfg: &HyperConfig, scfg: &SearchConfig) -> Result<ScoredModelSet> {
    cfg.validate()?;
    scfg.validate()?;
    if !dataset.is_standardized() {
        return Err(Error::InvalidDataset("search requires a standardized dataset".into()));
    }
    let cap = scfg.q_n.min(cfg.q_n).min(dataset.n() - 1);
    let p = dataset.p();

    let y = dataset.y();
    let start_var = (0..p)
        .map(|j| {
            let col = dataset.x().column(j);
            (j, col.dot(y).abs() / col.norm().max(f64::MIN_POSITIVE))
        })
        .fold((0, f64::NEG_INFINITY), |best, c| if c.1 > best.1 { c } else { best })
        .0;
    let mut current = ModelIndex::new(vec![start_var]);
    let mut set = ScoredModelSet::new();
    set.insert(score_model(dataset, &current, cfg)?);
    set.visits.push(current.clone());

    let mut rng = ChaCha8Rng::seed_from_u64(scfg.seed);
    for &temperature in &scfg.temperature_ladder {
        for _ in 0..scfg.iterations_per_temperature {
            let beta = set.get(&current).map(|s| s.beta.clone()).unwrap_or_default();
            let screened = screen(dataset, &current, &beta, scfg.screen_size);
            let hood = screened_neighbors(&current, &screened, cap).all();
            if hood.is_empty() {
                break;
            }
            score_new(dataset, cfg, &mut set, &hood);
            let scores: Vec<f64> = hood.iter().map(|m| score_of(&set, m)).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                continue;
            }
            let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / temperature).exp()).collect();
            let total: f64 = weights.iter().sum();
            let mut u = rng.random::<f64>() * total;
            let mut pick = hood.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            current = hood[pick].clone();
            set.visits.push(current.clone());
        }
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn scored(ix: Vec<usize>, s: f64) -> ScoredModel {
        ScoredModel {
            model: ModelIndex::new(ix),
            log_marginal: s,
            log_posterior_unnorm: s,
            beta: Vec::new(),
        }
    }

    #[test]
    fn neighborhood_edges() {
        let hood = neighbors(&ModelIndex::empty(), 4, 2);
        assert!(hood.deletions.is_empty());
        assert!(hood.swaps.is_empty());
        assert_eq!(hood.additions.len(), 4);

        let full = ModelIndex::new(vec![0, 1]);
        assert!(neighbors(&full, 4, 2).additions.is_empty());

        let hood = neighbors(&ModelIndex::new(vec![0]), 3, 3);
        assert_eq!(hood.deletions, vec![ModelIndex::empty()]);
        assert_eq!(hood.additions, vec![ModelIndex::new(vec![0, 1]), ModelIndex::new(vec![0, 2])]);
        assert_eq!(hood.swaps, vec![ModelIndex::new(vec![1]), ModelIndex::new(vec![2])]);
    }

    #[test]
    fn map_tie_rules() {
        let mut set = ScoredModelSet::new();
        assert_eq!(map_model(&set).unwrap_err(), Error::EmptySet);
        set.insert(scored(vec![1, 2], -3.0));
        assert_eq!(map_model(&set).unwrap().model, ModelIndex::new(vec![1, 2]));
        set.insert(scored(vec![3], -3.0));
        assert_eq!(map_model(&set).unwrap().model, ModelIndex::new(vec![3]));
        set.insert(scored(vec![2], -3.0));
        assert_eq!(map_model(&set).unwrap().model, ModelIndex::new(vec![2]));
    }

    #[test]
    fn screen_orders_and_ties() {
        // Orthogonal columns; the residual is column 2.
        let x = DMatrix::from_row_slice(4, 3, &[1., 1., 1., -1., 1., -1., 1., -1., -1., -1., -1., 1.]);
        let y = DVector::from_column_slice(&[1., -1., -1., 1.]);
        let d = Dataset::new(x, y).unwrap();
        assert_eq!(screen(&d, &ModelIndex::empty(), &[], 1), vec![2]);
        assert_eq!(screen(&d, &ModelIndex::empty(), &[], 10), vec![2, 0, 1]);
        assert_eq!(screen(&d, &ModelIndex::new(vec![2]), &[1.0], 5), vec![0, 1]);
    }

    #[test]
    fn default_ladder() {
        let s = SearchConfig::for_sample_size(40, 1);
        assert_eq!(s.temperature_ladder.len(), 10);
        assert_eq!(s.temperature_ladder[0], 3.0);
        assert_eq!(s.temperature_ladder[9], 1.0);
        assert!(s.temperature_ladder.windows(2).all(|w| w[0] > w[1]));
        assert_eq!(s.screen_size, 20);
        assert_eq!(s.q_n, 20);
        assert_eq!(SearchConfig::for_sample_size(1000, 1).screen_size, 145);
    }

    #[test]
    fn inclusion_weights() {
        let mut set = ScoredModelSet::new();
        set.insert(scored(vec![0], 0.0));
        set.insert(scored(vec![0, 1], 0.0));
        let incl = set.inclusion_probabilities(3);
        assert_eq!(incl, vec![1.0, 0.5, 0.0]);
    }
}
