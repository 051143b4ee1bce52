//! Evaluation protocol: sparsity buckets, delta-rank, bootstrap
//! bias-variance, timing, and the harness tying them together.

pub mod bench;
pub mod bias_variance;
pub mod delta_rank;
pub mod harness;
pub mod report;
pub mod segment;

pub use bench::{bench_explainers, timed_explain, Phase, PhaseTimes, TimingReport, TimingRow};
pub use bias_variance::{
    bias_variance, bias_variance_methods, bootstrap_instance, decompose, BiasVariance, BootstrapConfig,
};
pub use delta_rank::{
    delta_rank_curve, random_removal_control, rank_anchor, removal_curve, RankAnchor, DEFAULT_KS, SIGN_NOTE,
};
pub use harness::{
    run_full_evaluation, run_full_evaluation_with_jobs, BiasVarianceCell, BiasVarianceReport, DeltaRankCell,
    DeltaRankReport, EvalConfig, Evaluation, UserBiasVariance, UserFailure, RANDOM_ARM,
};
pub use report::{write_reports, RunManifest};
pub use segment::{segment_by_sparsity, BucketSummary, SparsitySegmentation};
