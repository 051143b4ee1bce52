//! LIME, KernelSHAP and completeness-constrained LIME (CLIMB).
//!
//! All three fit a linear surrogate `f(z) ~ phi0 + phi . z'` on a weighted
//! perturbation set around the instance:
//!
//! * LIME: uniform-size sampler, exponential proximity kernel, ridge fit with
//!   a free intercept.
//! * SHAP: Shapley-kernel design, intercept pinned to `f(b)` and
//!   `sum(phi) = f(x) - f(b)`.
//! * CLIMB: LIME's sampler and kernel with SHAP's constraint.
//!
//! The baseline `b` is the empty interaction vector. Single-feature users get
//! `phi = [f(x) - f(b)]` from every method, flagged as degenerate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perturb::{
    label_masks, lime_design, shap_enumerate, PerturbationDesign, PerturbationSet, DEFAULT_KERNEL_WIDTH,
    DEFAULT_SAMPLES,
};
use crate::recmodel::ScoringModel;
use crate::solver::{solve_completeness_constrained, solve_wls_masks, DEFAULT_RIDGE};
use crate::types::{Explanation, Instance, Method, SparseBinary};

/// Largest d' accepted by [`exact_shapley`] (2^d' model calls).
pub const MAX_EXACT_FEATURES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    /// Size of Z for LIME and CLIMB, and the mask budget for SHAP.
    pub n_samples: usize,
    pub kernel_width: f64,
    /// Ridge penalty of the LIME fit. The constrained fits use none.
    pub ridge: f64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig { n_samples: DEFAULT_SAMPLES, kernel_width: DEFAULT_KERNEL_WIDTH, ridge: DEFAULT_RIDGE }
    }
}

impl ExplainConfig {
    pub fn with_samples(n_samples: usize) -> Self {
        ExplainConfig { n_samples, ..Default::default() }
    }
}

/// f_t(x) and f_t(b) for the zero baseline.
pub fn endpoint_scores<M: ScoringModel + ?Sized>(model: &M, instance: &Instance, target: usize) -> Result<(f64, f64)> {
    let d = model.item_count();
    let fx = model.score_item(&instance.to_vector(d), target)?;
    let fb = model.score_item(&SparseBinary::zeros(d), target)?;
    Ok((fx, fb))
}

/// Unlabelled design for a method; LIME and CLIMB share one sampler, so the
/// same seed yields the same masks for both.
pub fn perturbation_design(
    method: Method,
    instance: &Instance,
    config: &ExplainConfig,
    seed: u64,
) -> Result<PerturbationDesign> {
    match method {
        Method::Lime | Method::Climb => lime_design(instance, config.n_samples, config.kernel_width, seed),
        Method::Shap => shap_enumerate(instance, config.n_samples, seed),
    }
}

/// Fits the surrogate for `method` on a labelled set.
pub fn fit_surrogate(
    method: Method,
    instance: &Instance,
    target: usize,
    set: &PerturbationSet,
    fx: f64,
    fb: f64,
    config: &ExplainConfig,
) -> Result<Explanation> {
    match method {
        Method::Lime => {
            let sol = solve_wls_masks(set.masks(), set.labels(), set.weights(), config.ridge)?;
            Explanation::new(method, instance, target, sol.coefficients, sol.intercept, fx, fb, false)
        }
        Method::Shap | Method::Climb => {
            let phi =
                solve_completeness_constrained(set.masks(), set.weights(), set.labels(), fx, fb, instance.d_prime())?;
            Explanation::new(method, instance, target, phi, fb, fx, fb, false)
        }
    }
}

fn degenerate<M: ScoringModel + ?Sized>(
    model: &M,
    method: Method,
    instance: &Instance,
    target: usize,
) -> Result<Explanation> {
    let (fx, fb) = endpoint_scores(model, instance, target)?;
    Explanation::new(method, instance, target, vec![fx - fb], fb, fx, fb, true)
}

/// Runs the full pipeline for one method: design, labels, fit.
pub fn explain<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    method: Method,
    config: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    if instance.d_prime() == 1 {
        return degenerate(model, method, instance, target);
    }
    let design = perturbation_design(method, instance, config, seed)?;
    let labels = label_masks(model, instance, target, &design.masks)?;
    let set = PerturbationSet::new(method, design, labels)?;
    let (fx, fb) = endpoint_scores(model, instance, target)?;
    fit_surrogate(method, instance, target, &set, fx, fb, config)
}

pub fn explain_lime<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    config: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    explain(model, instance, target, Method::Lime, config, seed)
}

pub fn explain_shap<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    config: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    explain(model, instance, target, Method::Shap, config, seed)
}

pub fn explain_climb<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    config: &ExplainConfig,
    seed: u64,
) -> Result<Explanation> {
    explain(model, instance, target, Method::Climb, config, seed)
}

/// LIME and CLIMB fitted on one shared labelled set. Identical to calling
/// [`explain_lime`] and [`explain_climb`] with the same seed, at the cost of
/// one labelling pass.
pub fn explain_lime_and_climb<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    config: &ExplainConfig,
    seed: u64,
) -> Result<(Explanation, Explanation)> {
    if instance.d_prime() == 1 {
        return Ok((
            degenerate(model, Method::Lime, instance, target)?,
            degenerate(model, Method::Climb, instance, target)?,
        ));
    }
    let design = perturbation_design(Method::Lime, instance, config, seed)?;
    let labels = label_masks(model, instance, target, &design.masks)?;
    let set = PerturbationSet::new(Method::Lime, design, labels)?;
    let (fx, fb) = endpoint_scores(model, instance, target)?;
    Ok((
        fit_surrogate(Method::Lime, instance, target, &set, fx, fb, config)?,
        fit_surrogate(Method::Climb, instance, target, &set, fx, fb, config)?,
    ))
}

/// Exact Shapley values of a cooperative game on `n` players, where
/// `value(s)` is the worth of the coalition with bit `j` of `s` set for each
/// member `j`.
pub fn exact_shapley_game(n: usize, value: impl Fn(u32) -> f64) -> Result<Vec<f64>> {
    if n == 0 || n > MAX_EXACT_FEATURES {
        return Err(Error::InvalidInput(format!("exact Shapley values need 1 <= d' <= {MAX_EXACT_FEATURES}, got {n}")));
    }
    let worth: Vec<f64> = (0..1u32 << n).map(&value).collect();
    // |S|! (n - |S| - 1)! / n! = 1 / (n C(n-1, |S|))
    let mut coalition_weight = vec![0.0; n];
    let mut binom = 1.0;
    for (s, w) in coalition_weight.iter_mut().enumerate() {
        *w = 1.0 / (n as f64 * binom);
        binom = binom * (n - 1 - s) as f64 / (s + 1) as f64;
    }
    let mut phi = vec![0.0; n];
    for s in 0..1u32 << n {
        let size = s.count_ones() as usize;
        if size == n {
            continue;
        }
        let w = coalition_weight[size];
        for (i, p) in phi.iter_mut().enumerate() {
            if s & (1 << i) == 0 {
                *p += w * (worth[(s | (1 << i)) as usize] - worth[s as usize]);
            }
        }
    }
    Ok(phi)
}

/// Exact Shapley values of the target score by exhaustive subset enumeration.
pub fn exact_shapley<M: ScoringModel + ?Sized>(model: &M, instance: &Instance, target: usize) -> Result<Vec<f64>> {
    let n = instance.d_prime();
    if n > MAX_EXACT_FEATURES {
        return Err(Error::InvalidInput(format!("exact Shapley values refused for d' = {n} > {MAX_EXACT_FEATURES}")));
    }
    let d = model.item_count();
    let items = instance.active_items();
    let mut labels = Vec::with_capacity(1 << n);
    for s in 0..1u32 << n {
        let ones = (0..n).filter(|&j| s & (1 << j) != 0).map(|j| items[j]).collect();
        labels.push(model.score_item(&SparseBinary::new(d, ones)?, target)?);
    }
    exact_shapley_game(n, |s| labels[s as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recmodel::toy::{AdditiveModel, FnModel, SaturatingModel, TableModel};
    use crate::recmodel::{fit_cooc, generate_synthetic, CoocParams, SyntheticConfig};

    fn additive(d: usize, active: &[usize]) -> (AdditiveModel, Instance, Vec<f64>) {
        let mut effects = vec![0.0; d];
        let mut v = Vec::new();
        for (k, &i) in active.iter().enumerate() {
            effects[i] = 0.1 * (k as f64 + 1.0) * if k % 2 == 0 { 1.0 } else { -0.7 };
            v.push(effects[i]);
        }
        let model = AdditiveModel::new((0..d).map(|t| 0.01 * t as f64).collect(), effects);
        (model, Instance::new("u", active.to_vec(), d).unwrap(), v)
    }

    #[test]
    fn two_player_game() {
        let phi = exact_shapley_game(2, |s| [0.0, 1.0, 2.0, 4.0][s as usize]).unwrap();
        assert!((phi[0] - 1.5).abs() < 1e-15 && (phi[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn exact_shapley_efficiency_and_additivity() {
        let (model, x, v) = additive(30, &[1, 4, 9, 16, 25]);
        let phi = exact_shapley(&model, &x, 3).unwrap();
        for (a, b) in phi.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        let game = |s: u32| f64::from(s.count_ones()).powi(2) + f64::from(s & 1);
        let phi = exact_shapley_game(6, game).unwrap();
        assert!((phi.iter().sum::<f64>() - (game(63) - game(0))).abs() < 1e-12);
        let big = Instance::new("u", (0..21).collect(), 30).unwrap();
        assert!(exact_shapley(&model, &big, 0).is_err());
    }

    #[test]
    fn additive_model_recovered_by_all_methods() {
        let (model, x, v) = additive(40, &[2, 5, 11, 17, 23, 31, 38]);
        let cfg = ExplainConfig::with_samples(2000);
        let lime = explain_lime(&model, &x, 0, &cfg, 1).unwrap();
        let fb = 0.0;
        for (a, b) in lime.coefficients().iter().zip(&v) {
            assert!((a - b).abs() <= 1e-6, "lime {a} vs {b}");
        }
        assert!((lime.intercept() - fb).abs() <= 1e-6);
        for method in [Method::Shap, Method::Climb] {
            let e = explain(&model, &x, 0, method, &cfg, 1).unwrap();
            for (a, b) in e.coefficients().iter().zip(&v) {
                assert!((a - b).abs() <= 1e-8, "{method} {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_model_gives_zero_coefficients() {
        let model = TableModel::new(vec![0.3; 10]);
        let x = Instance::new("u", vec![1, 2, 5, 7], 10).unwrap();
        let e = explain_lime(&model, &x, 2, &ExplainConfig::with_samples(500), 9).unwrap();
        assert!(e.coefficients().iter().all(|c| c.abs() <= 1e-8));
        assert!((e.intercept() - 0.3).abs() <= 1e-8);
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = generate_synthetic(&SyntheticConfig::new(200, 300, 1.1, 10.0, 1)).unwrap();
        let model = fit_cooc(&ds, CoocParams::default()).unwrap();
        let x = ds.users().iter().find(|u| u.d_prime() >= 6).unwrap();
        let cfg = ExplainConfig::with_samples(300);
        for method in Method::ALL {
            let a = explain(&model, x, 0, method, &cfg, 5).unwrap();
            let b = explain(&model, x, 0, method, &cfg, 5).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.ranked_positions(), b.ranked_positions());
            assert_eq!(a.coefficients().len(), x.d_prime());
        }
    }

    #[test]
    fn shared_labels_match_separate_runs() {
        let ds = generate_synthetic(&SyntheticConfig::new(200, 300, 1.1, 10.0, 2)).unwrap();
        let model = fit_cooc(&ds, CoocParams::default()).unwrap();
        let cfg = ExplainConfig::with_samples(400);
        for x in ds.users().iter().take(10) {
            let (lime, climb) = explain_lime_and_climb(&model, x, 0, &cfg, 17).unwrap();
            assert_eq!(lime, explain_lime(&model, x, 0, &cfg, 17).unwrap());
            assert_eq!(climb, explain_climb(&model, x, 0, &cfg, 17).unwrap());
        }
    }

    #[test]
    fn single_feature_is_analytic() {
        let model = SaturatingModel::new(5, 0.4);
        let x = Instance::new("u", vec![3], 5).unwrap();
        for method in Method::ALL {
            let e = explain(&model, &x, 0, method, &ExplainConfig::default(), 0).unwrap();
            assert!(e.is_degenerate());
            assert!((e.coefficients()[0] - 0.4).abs() < 1e-15);
            assert_eq!(e.intercept(), 0.0);
        }
    }

    #[test]
    fn flat_region_zeroes_lime_but_not_climb() {
        let model = SaturatingModel::new(12, 1.0);
        let x = Instance::new("u", vec![0, 3, 4, 8, 11], 12).unwrap();
        let cfg = ExplainConfig::with_samples(1000);
        let lime = explain_lime(&model, &x, 1, &cfg, 3).unwrap();
        let climb = explain_climb(&model, &x, 1, &cfg, 3).unwrap();
        assert!(lime.coefficient_sum().abs() <= 1e-6);
        assert!((climb.coefficient_sum() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn lime_is_not_constrained() {
        let model = FnModel::new(8, |x: &SparseBinary| {
            let k = x.count_ones() as f64;
            vec![(k * k).sin() + 0.1 * k; 8]
        });
        let x = Instance::new("u", vec![0, 2, 4, 6], 8).unwrap();
        let e = explain_lime(&model, &x, 1, &ExplainConfig::with_samples(800), 1).unwrap();
        assert!(e.completeness_residual().abs() > 1e-6);
    }

    #[test]
    fn symmetric_features_share_credit() {
        // items 1 and 2 play identical roles
        let model = FnModel::new(6, |x: &SparseBinary| {
            let has = |i| x.ones().contains(&i);
            let v = 0.2 * f64::from(u8::from(has(1)) + u8::from(has(2)))
                + 0.5 * f64::from(u8::from(has(1) && has(2)))
                + 0.3 * f64::from(u8::from(has(4)));
            vec![v; 6]
        });
        let x = Instance::new("u", vec![1, 2, 4], 6).unwrap();
        let e = explain_shap(&model, &x, 0, &ExplainConfig::default(), 0).unwrap();
        assert!((e.coefficients()[0] - e.coefficients()[1]).abs() <= 1e-6);
        let exact = exact_shapley(&model, &x, 0).unwrap();
        for (a, b) in e.coefficients().iter().zip(&exact) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}
