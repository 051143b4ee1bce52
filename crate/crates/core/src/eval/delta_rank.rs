use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::recmodel::{rank_of, top_recommendation, ScoringModel};
use crate::seed::rng_from;
use crate::types::{Explanation, Instance};

pub const DEFAULT_KS: [usize; 5] = [6, 12, 18, 24, 30];

pub const SIGN_NOTE: &str = "delta_rank = rank_before - rank_after; negative means the target item fell after removal";

/// Target item and its rank before any removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankAnchor {
    pub target: usize,
    pub rank: usize,
}

pub fn rank_anchor<M: ScoringModel + ?Sized>(model: &M, instance: &Instance) -> Result<RankAnchor> {
    let target = top_recommendation(model, instance)?;
    let rank = rank_of(model, &instance.to_vector(model.item_count()), target)?;
    Ok(RankAnchor { target, rank })
}

/// Delta-rank after removing the first `k` items of `removal_order` for every
/// `k` in `ks`. Entries with `k > d'` are `None` (truncated curve).
pub fn removal_curve<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    anchor: RankAnchor,
    removal_order: &[usize],
    ks: &[usize],
) -> Result<Vec<Option<f64>>> {
    if removal_order.len() != instance.d_prime() {
        return Err(Error::Dimension { expected: instance.d_prime(), got: removal_order.len() });
    }
    let x = instance.to_vector(model.item_count());
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Ok(Some(0.0));
            }
            if k > instance.d_prime() {
                return Ok(None);
            }
            let xm = x.without(&removal_order[..k]);
            let after = rank_of(model, &xm, anchor.target)?;
            Ok(Some(anchor.rank as f64 - after as f64))
        })
        .collect()
}

/// Items of the explained instance ordered by descending coefficient.
pub fn attribution_order(explanation: &Explanation) -> Vec<usize> {
    let items = explanation.item_indices();
    explanation.ranked_positions().into_iter().map(|j| items[j]).collect()
}

/// Removes the top-k attributed items and reports the rank change of the
/// explanation's target item.
pub fn delta_rank_curve<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    explanation: &Explanation,
    ks: &[usize],
) -> Result<Vec<Option<f64>>> {
    if explanation.item_indices() != instance.active_items() {
        return Err(Error::InvalidInput(format!(
            "explanation covers items of another instance than user {:?}",
            instance.user_id()
        )));
    }
    let target = explanation.target_item();
    let rank = rank_of(model, &instance.to_vector(model.item_count()), target)?;
    removal_curve(model, instance, RankAnchor { target, rank }, &attribution_order(explanation), ks)
}

pub fn random_order(instance: &Instance, seed: u64) -> Vec<usize> {
    let mut order = instance.active_items().to_vec();
    order.shuffle(&mut rng_from(seed));
    order
}

/// Same as [`delta_rank_curve`] with items removed in a seeded random order;
/// the target is the instance's top recommendation.
pub fn random_removal_control<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    ks: &[usize],
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    let anchor = rank_anchor(model, instance)?;
    removal_curve(model, instance, anchor, &random_order(instance, seed), ks)
}
