//! The black-box recommender being explained.
//!
//! [`ScoringModel`] is the only thing the explainers see. [`CoocModel`] is a
//! co-occurrence softmax scorer whose zero-input output ranks items by
//! popularity; [`toy`] holds closed-form models used to check explainers.

mod cooc;
mod dataset;
mod ingest;
mod synthetic;
pub mod toy;

pub use cooc::{fit_cooc, CoocModel, CoocParams, MODEL_FORMAT, MODEL_VERSION};
pub use dataset::InteractionDataset;
pub use ingest::{ingest_interactions, IngestStats, DEFAULT_RATING_THRESHOLD};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use crate::types::{apply_mask_dim, Instance, Mask, SparseBinary};

/// A deterministic scorer f: {0,1}^d -> R^d.
pub trait ScoringModel: Send + Sync {
    fn item_count(&self) -> usize;

    fn score(&self, x: &SparseBinary) -> Result<Vec<f64>>;

    /// f_t(x) for a single item. Implementations may override with a
    /// cheaper path; the result must agree with `score(x)[item]` up to
    /// rounding.
    fn score_item(&self, x: &SparseBinary, item: usize) -> Result<f64> {
        check_item(self.item_count(), item)?;
        Ok(self.score(x)?[item])
    }

    /// f_item on every masked variant of `instance`, in mask order. Masks
    /// must have length d'. Implementations may share per-instance work.
    fn score_masks(&self, instance: &Instance, item: usize, masks: &[Mask]) -> Result<Vec<f64>> {
        check_item(self.item_count(), item)?;
        masks.iter().map(|m| self.score_item(&apply_mask_dim(instance, m, self.item_count()), item)).collect()
    }
}

pub(crate) fn check_input(item_count: usize, x: &SparseBinary) -> Result<()> {
    if x.dim() != item_count {
        return Err(Error::Dimension { expected: item_count, got: x.dim() });
    }
    Ok(())
}

pub(crate) fn check_item(item_count: usize, item: usize) -> Result<()> {
    if item >= item_count {
        return Err(Error::InvalidInput(format!("item {item} outside catalog of {item_count}")));
    }
    Ok(())
}

/// 1-based position of `target` when items are sorted by descending score,
/// ties broken by ascending index.
pub fn rank_in_scores(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < target)).count()
}

/// Rank of `target` over the full catalog; input items are not excluded.
pub fn rank_of<M: ScoringModel + ?Sized>(model: &M, x: &SparseBinary, target: usize) -> Result<usize> {
    check_item(model.item_count(), target)?;
    let scores = model.score(x)?;
    Ok(rank_in_scores(&scores, target))
}

/// Best-scoring item the user has not interacted with.
pub fn top_recommendation<M: ScoringModel + ?Sized>(model: &M, instance: &Instance) -> Result<usize> {
    let scores = model.score(&instance.to_vector(model.item_count()))?;
    let mut best: Option<usize> = None;
    for (t, &s) in scores.iter().enumerate() {
        if instance.contains(t) {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(t);
        }
    }
    best.ok_or_else(|| Error::InvalidInput(format!("user {:?} has interacted with every item", instance.user_id())))
}
