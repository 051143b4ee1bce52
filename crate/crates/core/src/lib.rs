//! Local explanations for black-box recommenders: LIME, KernelSHAP and
//! completeness-constrained LIME (CLIMB), plus the evaluation harness used to
//! compare them (delta-rank, sparsity segments, bootstrap bias-variance and
//! solver timing).

pub mod error;
pub mod eval;
pub mod explainers;
pub mod perturb;
pub mod recmodel;
pub mod seed;
pub mod solver;
pub mod types;

pub use error::{Error, Result};
pub use explainers::{exact_shapley, explain, explain_climb, explain_lime, explain_shap, ExplainConfig};
pub use recmodel::{CoocModel, InteractionDataset, ScoringModel};
pub use seed::derive_seed;
pub use types::{apply_mask, to_interpretable, Catalog, Explanation, Instance, Mask, Method, SparseBinary};
