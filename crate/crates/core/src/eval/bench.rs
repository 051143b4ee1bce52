use std::fmt;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::explainers::{endpoint_scores, fit_surrogate, perturbation_design, ExplainConfig};
use crate::perturb::{label_masks, PerturbationSet};
use crate::recmodel::ScoringModel;
use crate::seed::derive_seed;
use crate::types::{Explanation, Instance, Method};

pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Sampling,
    Labeling,
    Solving,
    Total,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Sampling, Phase::Labeling, Phase::Solving, Phase::Total];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Sampling => "sampling",
            Phase::Labeling => "labeling",
            Phase::Solving => "solving",
            Phase::Total => "total",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Wall-clock milliseconds of one explanation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimes {
    pub sampling: f64,
    pub labeling: f64,
    pub solving: f64,
    pub total: f64,
}

impl PhaseTimes {
    pub fn get(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Sampling => self.sampling,
            Phase::Labeling => self.labeling,
            Phase::Solving => self.solving,
            Phase::Total => self.total,
        }
    }
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Runs one explainer with each phase timed separately. Labelling includes
/// the two endpoint scores; solving includes set validation.
pub fn timed_explain<M: ScoringModel + ?Sized>(
    model: &M,
    instance: &Instance,
    target: usize,
    method: Method,
    config: &ExplainConfig,
    seed: u64,
) -> Result<(Explanation, PhaseTimes)> {
    if instance.d_prime() < 2 {
        return Err(Error::DegenerateInstance { d_prime: instance.d_prime() });
    }
    let start = Instant::now();
    let t = Instant::now();
    let design = perturbation_design(method, instance, config, seed)?;
    let sampling = ms(t);
    let t = Instant::now();
    let labels = label_masks(model, instance, target, &design.masks)?;
    let (fx, fb) = endpoint_scores(model, instance, target)?;
    let labeling = ms(t);
    let t = Instant::now();
    let set = PerturbationSet::new(method, design, labels)?;
    let e = fit_surrogate(method, instance, target, &set, fx, fb, config)?;
    let solving = ms(t);
    Ok((e, PhaseTimes { sampling, labeling, solving, total: ms(start) }))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: Method,
    pub phase: Phase,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl TimingReport {
    pub fn from_samples(samples: &[(Method, Vec<PhaseTimes>)]) -> Self {
        let mut rows = Vec::new();
        for (method, times) in samples {
            if times.is_empty() {
                continue;
            }
            for phase in Phase::ALL {
                let v: Vec<f64> = times.iter().map(|t| t.get(phase)).collect();
                rows.push(TimingRow {
                    method: *method,
                    phase,
                    median_ms: median(&v),
                    mean_ms: v.iter().sum::<f64>() / v.len() as f64,
                    n: v.len(),
                });
            }
        }
        TimingReport { rows }
    }

    pub fn row(&self, method: Method, phase: Phase) -> Option<&TimingRow> {
        self.rows.iter().find(|r| r.method == method && r.phase == phase)
    }

    pub fn median_ms(&self, method: Method, phase: Phase) -> Option<f64> {
        self.row(method, phase).map(|r| r.median_ms)
    }
}

/// Times every method on every `(instance, target)` pair, `repetitions`
/// times. Methods are interleaved per user so drift affects them equally;
/// all methods on a user share one seed, so LIME and CLIMB see identical
/// masks.
pub fn bench_explainers<M: ScoringModel + ?Sized>(
    model: &M,
    users: &[(Instance, usize)],
    methods: &[Method],
    config: &ExplainConfig,
    repetitions: usize,
    seed: u64,
) -> Result<TimingReport> {
    if repetitions < MIN_REPETITIONS {
        return Err(Error::Config(format!("repetitions must be >= {MIN_REPETITIONS}, got {repetitions}")));
    }
    let mut samples: Vec<(Method, Vec<PhaseTimes>)> =
        methods.iter().map(|&m| (m, Vec::with_capacity(users.len() * repetitions))).collect();
    for _ in 0..repetitions {
        for (u, (instance, target)) in users.iter().enumerate() {
            let s = derive_seed(seed, "bench", u as u64);
            for (method, times) in samples.iter_mut() {
                let (_, t) = timed_explain(model, instance, *target, *method, config, s)?;
                times.push(t);
            }
        }
    }
    Ok(TimingReport::from_samples(&samples))
}
