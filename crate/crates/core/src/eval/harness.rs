use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bench::{bench_explainers, median, TimingReport, MIN_REPETITIONS};
use super::bias_variance::{bias_variance_methods, BootstrapConfig, DEFAULT_BOOTSTRAPS, DEFAULT_DROP_PROB};
use super::delta_rank::{attribution_order, random_order, rank_anchor, removal_curve, DEFAULT_KS};
use super::segment::{segment_by_sparsity, SparsitySegmentation, DEFAULT_BUCKETS};
use crate::error::{Error, Result};
use crate::explainers::{explain, explain_lime_and_climb, ExplainConfig};
use crate::perturb::{DEFAULT_KERNEL_WIDTH, DEFAULT_SAMPLES};
use crate::recmodel::{InteractionDataset, ScoringModel};
use crate::seed::derive_seed;
use crate::solver::DEFAULT_RIDGE;
use crate::types::{Instance, Method};

pub const DEFAULT_BV_CAP: usize = 1000;
pub const RANDOM_ARM: &str = "random";

/// Every knob of a full evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub ks: Vec<usize>,
    pub samples: usize,
    pub kernel_width: f64,
    pub ridge: f64,
    /// Bootstrap perturbations per user (P).
    #[serde(alias = "P")]
    pub bootstraps: usize,
    /// Per-feature drop probability of the bootstrap.
    pub rho: f64,
    pub buckets: usize,
    /// Size of the bias-variance sub-population.
    pub bias_variance_cap: usize,
    /// Adds a random-removal arm to the delta-rank report.
    pub random_control: bool,
    /// Users and repetitions of the timing benchmark; 0 users disables it.
    pub timing_users: usize,
    pub timing_reps: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: Method::ALL.to_vec(),
            ks: DEFAULT_KS.to_vec(),
            samples: DEFAULT_SAMPLES,
            kernel_width: DEFAULT_KERNEL_WIDTH,
            ridge: DEFAULT_RIDGE,
            bootstraps: DEFAULT_BOOTSTRAPS,
            rho: DEFAULT_DROP_PROB,
            buckets: DEFAULT_BUCKETS,
            bias_variance_cap: DEFAULT_BV_CAP,
            random_control: true,
            timing_users: 10,
            timing_reps: MIN_REPETITIONS,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn explain_config(&self) -> ExplainConfig {
        ExplainConfig { n_samples: self.samples, kernel_width: self.kernel_width, ridge: self.ridge }
    }

    pub fn bootstrap_config(&self) -> BootstrapConfig {
        BootstrapConfig { count: self.bootstraps, drop_prob: self.rho }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.samples == 0 {
            return bad("samples must be positive".into());
        }
        if !(self.kernel_width > 0.0 && self.kernel_width.is_finite()) {
            return bad(format!("kernel_width must be > 0, got {}", self.kernel_width));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return bad(format!("ridge must be >= 0, got {}", self.ridge));
        }
        if self.buckets == 0 {
            return bad("buckets must be positive".into());
        }
        if self.timing_users > 0 && self.timing_reps < MIN_REPETITIONS {
            return bad(format!("timing_reps must be >= {MIN_REPETITIONS}"));
        }
        let mut seen = self.methods.clone();
        seen.sort_by_key(|m| m.name());
        seen.dedup();
        if seen.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        self.bootstrap_config().validate()
    }

    /// Delta-rank arms in report order: the methods, then the random control.
    pub fn arms(&self) -> Vec<String> {
        let mut arms: Vec<String> = self.methods.iter().map(|m| m.name().to_owned()).collect();
        if self.random_control && !self.methods.is_empty() {
            arms.push(RANDOM_ARM.to_owned());
        }
        arms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserFailure {
    pub user_id: String,
    pub stage: String,
    pub message: String,
}

/// Summary of one (arm, sparsity rank, k) cell; statistics are `None` when
/// no user in the bucket reached `k` items.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaRankCell {
    pub method: String,
    pub sparsity_rank: usize,
    pub k: usize,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    /// Sample standard deviation (n - 1); 0 for a single user.
    pub std: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeltaRankReport {
    pub cells: Vec<DeltaRankCell>,
    /// Users whose curves entered the report.
    pub users: usize,
}

impl DeltaRankReport {
    pub fn cell(&self, method: &str, sparsity_rank: usize, k: usize) -> Option<&DeltaRankCell> {
        self.cells.iter().find(|c| c.method == method && c.sparsity_rank == sparsity_rank && c.k == k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UserBiasVariance {
    pub user_id: String,
    pub sparsity_rank: usize,
    pub method: Method,
    pub bias_sq: f64,
    pub variance: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasVarianceCell {
    pub method: Method,
    pub sparsity_rank: usize,
    pub bias_sq_mean: Option<f64>,
    pub variance_mean: Option<f64>,
    pub mse_mean: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BiasVarianceReport {
    pub bootstraps: usize,
    pub drop_prob: f64,
    pub cells: Vec<BiasVarianceCell>,
    pub users: Vec<UserBiasVariance>,
    /// Sub-population users skipped for having d' < 3.
    pub skipped: Vec<String>,
}

impl BiasVarianceReport {
    pub fn cell(&self, method: Method, sparsity_rank: usize) -> Option<&BiasVarianceCell> {
        self.cells.iter().find(|c| c.method == method && c.sparsity_rank == sparsity_rank)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub config: EvalConfig,
    pub segmentation: SparsitySegmentation,
    pub delta_rank: DeltaRankReport,
    pub bias_variance: BiasVarianceReport,
    pub timing: TimingReport,
    pub failures: Vec<UserFailure>,
}

struct UserCurves {
    rank: usize,
    curves: Vec<Vec<Option<f64>>>,
}

fn explanations_for<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    config: &EvalConfig,
    index: u64,
) -> Result<Vec<crate::types::Explanation>> {
    let cfg = config.explain_config();
    // LIME and CLIMB share a sampler stream, so they see identical masks.
    let sampler = derive_seed(config.seed, "explain-sampler", index);
    let shap = derive_seed(config.seed, "explain-shap", index);
    let pair = if config.methods.contains(&Method::Lime) && config.methods.contains(&Method::Climb) {
        Some(explain_lime_and_climb(model, instance, target, &cfg, sampler)?)
    } else {
        None
    };
    config
        .methods
        .iter()
        .map(|&m| match (&pair, m) {
            (Some((lime, _)), Method::Lime) => Ok(lime.clone()),
            (Some((_, climb)), Method::Climb) => Ok(climb.clone()),
            (_, Method::Shap) => explain(model, instance, target, m, &cfg, shap),
            _ => explain(model, instance, target, m, &cfg, sampler),
        })
        .collect()
}

fn user_curves<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    config: &EvalConfig,
    index: u64,
) -> Result<Vec<Vec<Option<f64>>>> {
    let anchor = rank_anchor(model, instance)?;
    let mut curves = Vec::new();
    for e in explanations_for(model, instance, anchor.target, config, index)? {
        curves.push(removal_curve(model, instance, anchor, &attribution_order(&e), &config.ks)?);
    }
    if config.random_control {
        let order = random_order(instance, derive_seed(config.seed, "random-removal", index));
        curves.push(removal_curve(model, instance, anchor, &order, &config.ks)?);
    }
    Ok(curves)
}

fn summarize(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(median(values)), Some(std))
}

fn mean_of(values: impl Iterator<Item = f64>) -> (Option<f64>, usize) {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    ((n > 0).then(|| s / n as f64), n)
}

/// Users ordered by id, as `(dataset index, instance)`.
fn by_user_id(users: &[Instance]) -> Vec<(usize, &Instance)> {
    let mut v: Vec<(usize, &Instance)> = users.iter().enumerate().collect();
    v.sort_by(|a, b| a.1.user_id().cmp(b.1.user_id()));
    v
}

/// Seeded permutation of `ordered`, independent of the rayon pool.
fn seeded_shuffle<'a>(ordered: &[(usize, &'a Instance)], seed: u64, label: &str) -> Vec<(usize, &'a Instance)> {
    let mut keyed: Vec<(u64, usize)> =
        ordered.iter().enumerate().map(|(pos, &(idx, _))| (derive_seed(seed, label, idx as u64), pos)).collect();
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, pos)| ordered[pos]).collect()
}

/// Deterministic sub-population of at most `cap` users, returned in id order.
fn subsample<'a>(ordered: &[(usize, &'a Instance)], cap: usize, seed: u64, label: &str) -> Vec<(usize, &'a Instance)> {
    if ordered.len() <= cap {
        return ordered.to_vec();
    }
    let mut keep = seeded_shuffle(ordered, seed, label);
    keep.truncate(cap);
    keep.sort_by(|a, b| a.1.user_id().cmp(b.1.user_id()));
    keep
}

/// Segmentation, per-user explanations, delta-rank curves, bootstrap
/// bias-variance on a capped sub-population, and a timing benchmark.
/// Per-user work runs on the current rayon pool; results do not depend on
/// its size. A failing user is recorded and skipped.
pub fn run_full_evaluation<M: ScoringModel + ?Sized>(
    dataset: &InteractionDataset,
    model: &M,
    config: &EvalConfig,
) -> Result<Evaluation> {
    config.validate()?;
    if model.item_count() != dataset.item_count() {
        return Err(Error::Dimension { expected: dataset.item_count(), got: model.item_count() });
    }
    let segmentation = segment_by_sparsity(dataset.users(), config.buckets)?;
    let ordered = by_user_id(dataset.users());
    let rank_of = |inst: &Instance| segmentation.rank_of(inst.user_id()).expect("segmented user");
    let arms = config.arms();
    let mut failures = Vec::new();

    if config.methods.is_empty() {
        return Ok(Evaluation {
            config: config.clone(),
            segmentation,
            delta_rank: DeltaRankReport::default(),
            bias_variance: BiasVarianceReport {
                bootstraps: config.bootstraps,
                drop_prob: config.rho,
                ..Default::default()
            },
            timing: TimingReport::default(),
            failures,
        });
    }

    // delta-rank
    let results: Vec<Result<UserCurves>> = ordered
        .par_iter()
        .map(|&(idx, inst)| {
            user_curves(model, inst, config, idx as u64).map(|curves| UserCurves { rank: rank_of(inst), curves })
        })
        .collect();
    let mut per_cell: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    let mut curve_users = 0;
    for (&(_, inst), r) in ordered.iter().zip(results) {
        match r {
            Ok(u) => {
                curve_users += 1;
                for (a, curve) in u.curves.iter().enumerate() {
                    for (ki, v) in curve.iter().enumerate() {
                        if let Some(v) = v {
                            per_cell.entry((a, u.rank, ki)).or_default().push(*v);
                        }
                    }
                }
            }
            Err(e) => failures.push(UserFailure {
                user_id: inst.user_id().to_owned(),
                stage: "delta_rank".into(),
                message: e.to_string(),
            }),
        }
    }
    let mut cells = Vec::new();
    for (a, arm) in arms.iter().enumerate() {
        for rank in 0..config.buckets {
            for (ki, &k) in config.ks.iter().enumerate() {
                let values = per_cell.get(&(a, rank, ki)).map_or(&[][..], Vec::as_slice);
                let (mean, med, std) = summarize(values);
                cells.push(DeltaRankCell {
                    method: arm.clone(),
                    sparsity_rank: rank,
                    k,
                    mean,
                    median: med,
                    std,
                    n: values.len(),
                });
            }
        }
    }
    let delta_rank = DeltaRankReport { cells, users: curve_users };

    // bias-variance
    let population = subsample(&ordered, config.bias_variance_cap, config.seed, "bias-variance-subset");
    let explain_cfg = config.explain_config();
    let boot = config.bootstrap_config();
    let results: Vec<Result<Vec<UserBiasVariance>>> = population
        .par_iter()
        .map(|&(idx, inst)| {
            let anchor = rank_anchor(model, inst)?;
            let seed = derive_seed(config.seed, "bootstrap", idx as u64);
            let bvs = bias_variance_methods(model, inst, anchor.target, &config.methods, &explain_cfg, &boot, seed)?;
            Ok(config
                .methods
                .iter()
                .zip(bvs)
                .map(|(&method, bv)| UserBiasVariance {
                    user_id: inst.user_id().to_owned(),
                    sparsity_rank: rank_of(inst),
                    method,
                    bias_sq: bv.bias_sq,
                    variance: bv.variance,
                    mse: bv.mse,
                })
                .collect())
        })
        .collect();
    let mut users = Vec::new();
    let mut skipped = Vec::new();
    for (&(_, inst), r) in population.iter().zip(results) {
        match r {
            Ok(v) => users.extend(v),
            Err(Error::Skip(_)) => skipped.push(inst.user_id().to_owned()),
            Err(e) => failures.push(UserFailure {
                user_id: inst.user_id().to_owned(),
                stage: "bias_variance".into(),
                message: e.to_string(),
            }),
        }
    }
    let mut bv_cells = Vec::new();
    for &method in &config.methods {
        for rank in 0..config.buckets {
            let sel = || users.iter().filter(move |u| u.method == method && u.sparsity_rank == rank);
            let (bias_sq_mean, n) = mean_of(sel().map(|u| u.bias_sq));
            let (variance_mean, _) = mean_of(sel().map(|u| u.variance));
            let (mse_mean, _) = mean_of(sel().map(|u| u.mse));
            bv_cells.push(BiasVarianceCell { method, sparsity_rank: rank, bias_sq_mean, variance_mean, mse_mean, n });
        }
    }
    let bias_variance =
        BiasVarianceReport { bootstraps: config.bootstraps, drop_prob: config.rho, cells: bv_cells, users, skipped };

    // timing, sequential so methods do not compete for cores
    let timing = if config.timing_users > 0 {
        let mut bench_users = Vec::new();
        for &(_, inst) in seeded_shuffle(&ordered, config.seed, "timing-subset").iter() {
            if bench_users.len() == config.timing_users {
                break;
            }
            if inst.d_prime() >= 2 {
                if let Ok(anchor) = rank_anchor(model, inst) {
                    bench_users.push((inst.clone(), anchor.target));
                }
            }
        }
        bench_explainers(model, &bench_users, &config.methods, &explain_cfg, config.timing_reps, config.seed)?
    } else {
        TimingReport::default()
    };

    Ok(Evaluation { config: config.clone(), segmentation, delta_rank, bias_variance, timing, failures })
}

/// [`run_full_evaluation`] on a dedicated pool of `jobs` worker threads.
pub fn run_full_evaluation_with_jobs<M: ScoringModel + ?Sized>(
    dataset: &InteractionDataset,
    model: &M,
    config: &EvalConfig,
    jobs: usize,
) -> Result<Evaluation> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| run_full_evaluation(dataset, model, config))
}
