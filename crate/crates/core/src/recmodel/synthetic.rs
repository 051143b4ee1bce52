use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::InteractionDataset;
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::types::{digits, Catalog, Instance};

/// Parameters of the long-tail interaction generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub zipf_exponent: f64,
    pub mean_basket: f64,
    pub seed: u64,
    /// Log-scale standard deviation of the basket-size distribution.
    pub basket_sigma: f64,
    /// Items per planted affinity block.
    pub block_size: usize,
    /// Probability that a non-anchor item comes from the anchor's block.
    pub block_affinity: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 1000,
            n_items: 2000,
            zipf_exponent: 1.1,
            mean_basket: 20.0,
            seed: 7,
            basket_sigma: 1.0,
            block_size: 50,
            block_affinity: 0.6,
        }
    }
}

impl SyntheticConfig {
    pub fn new(n_users: usize, n_items: usize, zipf_exponent: f64, mean_basket: f64, seed: u64) -> Self {
        SyntheticConfig { n_users, n_items, zipf_exponent, mean_basket, seed, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_users < 16 {
            return bad(format!("n_users must be >= 16, got {}", self.n_users));
        }
        if self.n_items < 32 {
            return bad(format!("n_items must be >= 32, got {}", self.n_items));
        }
        if !(self.zipf_exponent > 0.0 && self.zipf_exponent.is_finite()) {
            return bad(format!("zipf_exponent must be > 0, got {}", self.zipf_exponent));
        }
        if !(self.mean_basket >= 2.0 && self.mean_basket.is_finite()) {
            return bad(format!("mean_basket must be >= 2, got {}", self.mean_basket));
        }
        if !(self.basket_sigma >= 0.0 && self.basket_sigma.is_finite()) {
            return bad(format!("basket_sigma must be >= 0, got {}", self.basket_sigma));
        }
        if self.block_size < 2 {
            return bad(format!("block_size must be >= 2, got {}", self.block_size));
        }
        if !(0.0..=1.0).contains(&self.block_affinity) {
            return bad(format!("block_affinity must lie in [0, 1], got {}", self.block_affinity));
        }
        Ok(())
    }
}

/// Weighted sampling of `m` distinct candidates without replacement
/// (Efraimidis-Spirakis exponential keys).
fn weighted_distinct<R: Rng>(rng: &mut R, candidates: &[usize], weights: &[f64], m: usize) -> Vec<usize> {
    if m == 0 {
        return Vec::new();
    }
    if m >= candidates.len() {
        return candidates.to_vec();
    }
    let mut keyed: Vec<(f64, usize)> = candidates
        .iter()
        .map(|&t| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / weights[t], t)
        })
        .collect();
    keyed.select_nth_unstable_by(m - 1, |a, b| b.0.total_cmp(&a.0));
    keyed.truncate(m);
    keyed.into_iter().map(|(_, t)| t).collect()
}

/// Long-tail interaction data with planted item affinities.
///
/// Item `t` has Zipf weight `(t + 1)^-s`. Basket sizes are log-normal with
/// mean `mean_basket`, rounded and clipped to `[2, n_items / 2]`. Each basket
/// starts from a popularity-drawn anchor; a binomial share of the remaining
/// slots is filled from the anchor's block (items `t` with equal
/// `t % n_blocks`) and the rest from the whole catalog, both by popularity.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<InteractionDataset> {
    config.validate()?;
    let d = config.n_items;
    let mut rng = rng_from(config.seed);

    let weights: Vec<f64> = (0..d).map(|t| ((t + 1) as f64).powf(-config.zipf_exponent)).collect();
    let anchor_dist = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let n_blocks = (d / config.block_size).max(1);
    let blocks: Vec<Vec<usize>> = (0..n_blocks).map(|b| (b..d).step_by(n_blocks).collect()).collect();

    let sigma = config.basket_sigma;
    let mu = config.mean_basket.ln() - 0.5 * sigma * sigma;
    let size_dist = LogNormal::new(mu, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let max_basket = d / 2;

    let all_items: Vec<usize> = (0..d).collect();
    let width = digits(config.n_users.saturating_sub(1)).max(4);
    let mut users = Vec::with_capacity(config.n_users);
    for u in 0..config.n_users {
        let size = (size_dist.sample(&mut rng).round() as usize).clamp(2, max_basket);
        let anchor = anchor_dist.sample(&mut rng);
        let mut basket = vec![anchor];

        let block: Vec<usize> = blocks[anchor % n_blocks].iter().copied().filter(|&t| t != anchor).collect();
        let from_block = Binomial::new((size - 1) as u64, config.block_affinity)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng) as usize;
        basket.extend(weighted_distinct(&mut rng, &block, &weights, from_block.min(block.len())));

        let rest: Vec<usize> = {
            let taken: std::collections::HashSet<usize> = basket.iter().copied().collect();
            all_items.iter().copied().filter(|t| !taken.contains(t)).collect()
        };
        let need = size - basket.len();
        basket.extend(weighted_distinct(&mut rng, &rest, &weights, need));

        users.push(Instance::from_unsorted(format!("u{u:0width$}"), basket, d)?);
    }
    InteractionDataset::new(Catalog::numbered(d)?, users)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dataset_has_wide_sparsity_spread() {
        let ds = generate_synthetic(&SyntheticConfig::new(1000, 2000, 1.1, 20.0, 7)).unwrap();
        let sizes: Vec<usize> = ds.users().iter().map(Instance::d_prime).collect();
        let (min, max) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
        assert_eq!(ds.user_count(), 1000);
        assert!(max >= 5 * min, "spread {min}..{max}");
        let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
        assert!((mean - 20.0).abs() < 3.0, "mean basket {mean}");
    }

    #[test]
    fn small_dataset_respects_clipping() {
        let ds = generate_synthetic(&SyntheticConfig::new(16, 32, 1.0, 4.0, 0)).unwrap();
        assert_eq!(ds.user_count(), 16);
        assert!(ds.users().iter().all(|u| (2..=16).contains(&u.d_prime())));
    }

    #[test]
    fn deterministic_given_seed() {
        let cfg = SyntheticConfig::new(200, 300, 1.1, 10.0, 3);
        assert_eq!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&cfg).unwrap());
        let other = SyntheticConfig { seed: 4, ..cfg.clone() };
        assert_ne!(generate_synthetic(&cfg).unwrap(), generate_synthetic(&other).unwrap());
    }

    #[test]
    fn popularity_follows_item_order() {
        let ds = generate_synthetic(&SyntheticConfig::default()).unwrap();
        let pop = ds.popularity();
        let head: u64 = pop[..20].iter().sum();
        let tail: u64 = pop[pop.len() - 20..].iter().sum();
        assert!(head > 10 * tail.max(1), "head {head} tail {tail}");
    }

    #[test]
    fn rejects_bad_parameters() {
        for cfg in [
            SyntheticConfig::new(15, 32, 1.0, 4.0, 0),
            SyntheticConfig::new(16, 31, 1.0, 4.0, 0),
            SyntheticConfig::new(16, 32, 0.0, 4.0, 0),
            SyntheticConfig::new(16, 32, 1.0, 1.5, 0),
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))), "{cfg:?}");
        }
    }
}
