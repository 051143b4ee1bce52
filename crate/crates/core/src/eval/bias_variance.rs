use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explainers::{explain, explain_lime_and_climb, ExplainConfig};
use crate::recmodel::ScoringModel;
use crate::seed::{derive_seed, rng_from};
use crate::types::{Instance, Mask, Method};

pub const DEFAULT_BOOTSTRAPS: usize = 50;
pub const DEFAULT_DROP_PROB: f64 = 0.1;
const MIN_SURVIVORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub count: usize,
    pub drop_prob: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { count: DEFAULT_BOOTSTRAPS, drop_prob: DEFAULT_DROP_PROB }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("bootstrap count must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_prob) {
            return Err(Error::Config(format!("drop probability must lie in [0, 1), got {}", self.drop_prob)));
        }
        Ok(())
    }
}

/// Plug-in decomposition of one user's surrogate predictions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasVariance {
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
    /// f(x) for the unperturbed instance.
    pub fx: f64,
    /// Each bootstrap surrogate evaluated at its own instance.
    pub fitted: Vec<f64>,
}

/// `bias^2 = (fx - mean)^2`, population variance, `mse = bias^2 + variance`.
pub fn decompose(fx: f64, fitted: Vec<f64>) -> BiasVariance {
    let p = fitted.len() as f64;
    let mu = fitted.iter().sum::<f64>() / p;
    let bias_sq = (fx - mu).powi(2);
    let variance = fitted.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / p;
    BiasVariance { bias_sq, variance, mse: bias_sq + variance, fx, fitted }
}

/// Drops every active item independently with probability `drop_prob`,
/// redrawing until at least two survive.
pub fn bootstrap_instance(instance: &Instance, drop_prob: f64, seed: u64) -> Result<Instance> {
    if instance.d_prime() <= MIN_SURVIVORS {
        return Err(Error::Skip(format!(
            "user {:?} has d' = {}; bootstrap needs at least {}",
            instance.user_id(),
            instance.d_prime(),
            MIN_SURVIVORS + 1
        )));
    }
    let mut rng = rng_from(seed);
    loop {
        let keep = Mask::new((0..instance.d_prime()).map(|_| !rng.random_bool(drop_prob)).collect());
        if keep.count_ones() >= MIN_SURVIVORS {
            return instance.restrict(&keep);
        }
    }
}

/// Bias-variance of several methods on one user. Every method sees the same
/// bootstrap instances and explainer seeds, so the comparison uses common
/// random numbers; results are identical to separate single-method calls.
pub fn bias_variance_methods<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    methods: &[Method],
    explain_config: &ExplainConfig,
    bootstrap: &BootstrapConfig,
    seed: u64,
) -> Result<Vec<BiasVariance>> {
    bootstrap.validate()?;
    if instance.d_prime() <= MIN_SURVIVORS {
        return Err(Error::Skip(format!("user {:?} has d' = {} < 3", instance.user_id(), instance.d_prime())));
    }
    let fx = model.score_item(&instance.to_vector(model.item_count()), target)?;
    let want_pair = methods.contains(&Method::Lime) && methods.contains(&Method::Climb);
    let mut fitted = vec![Vec::with_capacity(bootstrap.count); methods.len()];
    for p in 0..bootstrap.count as u64 {
        let xp = bootstrap_instance(instance, bootstrap.drop_prob, derive_seed(seed, "bootstrap-drop", p))?;
        let fit_seed = derive_seed(seed, "bootstrap-fit", p);
        let pair =
            if want_pair { Some(explain_lime_and_climb(model, &xp, target, explain_config, fit_seed)?) } else { None };
        for (slot, &method) in methods.iter().enumerate() {
            let e = match (&pair, method) {
                (Some((lime, _)), Method::Lime) => lime.fitted_at_instance(),
                (Some((_, climb)), Method::Climb) => climb.fitted_at_instance(),
                _ => explain(model, &xp, target, method, explain_config, fit_seed)?.fitted_at_instance(),
            };
            fitted[slot].push(e);
        }
    }
    Ok(fitted.into_iter().map(|f| decompose(fx, f)).collect())
}

pub fn bias_variance<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    method: Method,
    explain_config: &ExplainConfig,
    bootstrap: &BootstrapConfig,
    seed: u64,
) -> Result<BiasVariance> {
    let mut out = bias_variance_methods(model, instance, target, &[method], explain_config, bootstrap, seed)?;
    Ok(out.remove(0))
}
