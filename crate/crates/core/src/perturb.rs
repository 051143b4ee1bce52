//! Perturbation datasets: masks z', proximity weights pi(z) and labels f(z).
//!
//! Neither sampler ever emits the all-zeros or the all-ones mask. For the
//! constrained methods those two points enter exactly through the
//! completeness constraint; for LIME they are simply absent.

use std::collections::HashMap;

use itertools::Itertools;
use rand::distr::weighted::WeightedIndex;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::Distribution;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::recmodel::ScoringModel;
use crate::seed::rng_from;
use crate::types::{Instance, Mask, Method};

pub const DEFAULT_SAMPLES: usize = 5000;
pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;

/// Masks with their regression weights, before labelling.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDesign {
    pub masks: Vec<Mask>,
    pub weights: Vec<f64>,
}

/// A labelled perturbation dataset Z.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSet {
    method: Method,
    masks: Vec<Mask>,
    weights: Vec<f64>,
    labels: Vec<f64>,
}

impl PerturbationSet {
    pub fn new(method: Method, design: PerturbationDesign, labels: Vec<f64>) -> Result<Self> {
        let PerturbationDesign { masks, weights } = design;
        if masks.len() != weights.len() || masks.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "perturbation set sizes differ: {} masks, {} weights, {} labels",
                masks.len(),
                weights.len(),
                labels.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("kernel weight {w} is not finite and positive")));
        }
        if masks.iter().any(|m| m.is_all_zeros() || m.is_all_ones()) {
            return Err(Error::InvalidInput("perturbation set contains an extreme mask".into()));
        }
        if labels.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidInput("non-finite label".into()));
        }
        Ok(PerturbationSet { method, masks, weights, labels })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn masks(&self) -> &[Mask] {
        &self.masks
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

fn informative_dim(instance: &Instance) -> Result<usize> {
    match instance.d_prime() {
        1 => Err(Error::DegenerateInstance { d_prime: 1 }),
        d => Ok(d),
    }
}

/// LIME's sampler: each mask draws `k ~ U{1, ..., d'-1}` and then `k`
/// positions uniformly without replacement.
pub fn lime_sample(instance: &Instance, n_samples: usize, seed: u64) -> Result<Vec<Mask>> {
    let d = informative_dim(instance)?;
    if n_samples == 0 {
        return Err(Error::Config("n_samples must be positive".into()));
    }
    let mut rng = rng_from(seed);
    Ok((0..n_samples)
        .map(|_| {
            let k = rng.random_range(1..d);
            Mask::from_positions(d, sample(&mut rng, d, k))
        })
        .collect())
}

/// `exp(-D^2 / width^2)` with `D = 1 - sqrt(|z'| / d')`, the cosine distance
/// between z' and the all-ones x'.
pub fn lime_kernel(mask: &Mask, width: f64) -> f64 {
    let distance = 1.0 - (mask.count_ones() as f64 / mask.len() as f64).sqrt();
    (-(distance * distance) / (width * width)).exp()
}

/// LIME masks with their proximity weights.
pub fn lime_design(instance: &Instance, n_samples: usize, width: f64, seed: u64) -> Result<PerturbationDesign> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Config(format!("kernel width must be > 0, got {width}")));
    }
    let masks = lime_sample(instance, n_samples, seed)?;
    let weights = masks.iter().map(|m| lime_kernel(m, width)).collect();
    Ok(PerturbationDesign { masks, weights })
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// The Shapley kernel `(d'-1) / (C(d', k) k (d'-k))`.
///
/// Sizes 0 and d' carry infinite weight and are reported as an error so the
/// caller routes them through the constraint.
pub fn shap_kernel(d_prime: usize, subset_size: usize) -> Result<f64> {
    if subset_size == 0 || subset_size >= d_prime {
        return Err(Error::InfiniteWeight { d_prime, size: subset_size });
    }
    let k = subset_size as f64;
    let d = d_prime as f64;
    if let Some(c) = exact_binomial(d_prime, subset_size) {
        return Ok((d - 1.0) / (c * k * (d - k)));
    }
    Ok(((d - 1.0).ln() - ln_binomial(d_prime, subset_size) - k.ln() - (d - k).ln()).exp())
}

/// `C(n, k)` when it is exactly representable, else `None`.
fn exact_binomial(n: usize, k: usize) -> Option<f64> {
    let k = k.min(n - k) as u128;
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul(n as u128 - i)? / (i + 1);
    }
    (c < 1 << 53).then_some(c as f64)
}

/// Kernel mass of all masks of one size: `C(d', k) * pi(k) = (d'-1) / (k (d'-k))`.
pub fn shap_size_mass(d_prime: usize, subset_size: usize) -> f64 {
    let k = subset_size as f64;
    let d = d_prime as f64;
    (d - 1.0) / (k * (d - k))
}

/// Number of masks of a size, saturating far above any sampling budget.
fn binomial_count(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// KernelSHAP perturbation design within a mask budget.
///
/// Size pairs `(k, d'-k)` are enumerated in full from the extremes inward
/// while the whole pair fits in the remaining budget; every enumerated mask
/// gets its exact kernel weight. Any leftover budget is spent on draws from
/// the remaining sizes, each size chosen with probability proportional to its
/// kernel mass and positions uniform. The sampled part shares that mass
/// equally per draw; repeated draws are merged into one mask with summed
/// weight.
pub fn shap_enumerate(instance: &Instance, budget: usize, seed: u64) -> Result<PerturbationDesign> {
    let d = informative_dim(instance)?;
    if budget == 0 {
        return Err(Error::Config("budget must be positive".into()));
    }
    let mut masks = Vec::new();
    let mut weights = Vec::new();
    let mut remaining = budget as f64;
    let mut enumerated = 0;
    for k in 1..=d / 2 {
        let paired = k != d - k;
        let count = binomial_count(d, k) * if paired { 2.0 } else { 1.0 };
        if count > remaining {
            break;
        }
        let sizes = if paired { vec![k, d - k] } else { vec![k] };
        for size in sizes {
            let w = shap_kernel(d, size)?;
            for combo in (0..d).combinations(size) {
                masks.push(Mask::from_positions(d, combo));
                weights.push(w);
            }
        }
        remaining -= count;
        enumerated = k;
    }

    let open_sizes: Vec<usize> = (enumerated + 1..d - enumerated).collect();
    let draws = remaining as usize;
    if !open_sizes.is_empty() && draws > 0 {
        let mass: Vec<f64> = open_sizes.iter().map(|&k| shap_size_mass(d, k)).collect();
        let total: f64 = mass.iter().sum();
        let per_draw = total / draws as f64;
        let size_dist = WeightedIndex::new(&mass).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = rng_from(seed);
        let mut seen: HashMap<Mask, usize> = HashMap::new();
        for _ in 0..draws {
            let k = open_sizes[size_dist.sample(&mut rng)];
            let mask = Mask::from_positions(d, sample(&mut rng, d, k));
            match seen.get(&mask) {
                Some(&at) => weights[at] += per_draw,
                None => {
                    seen.insert(mask.clone(), masks.len());
                    masks.push(mask);
                    weights.push(per_draw);
                }
            }
        }
    }
    Ok(PerturbationDesign { masks, weights })
}

/// `f_target(apply_mask(instance, m))` for every mask, in input order.
pub fn label_masks<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target_item: usize,
    masks: &[Mask],
) -> Result<Vec<f64>> {
    if let Some(m) = masks.iter().find(|m| m.len() != instance.d_prime()) {
        return Err(Error::Dimension { expected: instance.d_prime(), got: m.len() });
    }
    model.score_masks(instance, target_item, masks)
}
