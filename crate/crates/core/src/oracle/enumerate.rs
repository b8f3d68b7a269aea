use rayon::prelude::*;

use crate::data::{Dataset, ModelIndex};
use crate::error::{Error, Result};
use crate::laplace::score_model;
use crate::priors::HyperConfig;
use crate::search::ScoredModelSet;

/// Largest p accepted by [`exhaustive_scores`].
pub const MAX_ENUMERATION_P: usize = 20;

/// Scores every model of size ≤ min(q_n, n − 1). Models whose evaluation
/// fails are left out.
pub fn exhaustive_scores(dataset: &Dataset, cfg: &HyperConfig) -> Result<ScoredModelSet> {
    let p = dataset.p();
    if p > MAX_ENUMERATION_P {
        return Err(Error::InvalidConfig(format!(
            "enumeration is limited to p ≤ {MAX_ENUMERATION_P}, got {p}"
        )));
    }
    let cap = cfg.q_n.min(dataset.n() - 1);
    let models: Vec<ModelIndex> = (0u32..1 << p)
        .filter(|mask| mask.count_ones() as usize <= cap)
        .map(|mask| ModelIndex::new((0..p).filter(|j| mask >> j & 1 == 1).collect()))
        .collect();
    let scored: Vec<_> = models.par_iter().map(|m| score_model(dataset, m, cfg)).collect();
    let mut set = ScoredModelSet::new();
    for s in scored.into_iter().flatten() {
        set.insert(s);
    }
    Ok(set)
}
