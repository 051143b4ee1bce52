//! Domain types shared by every pipeline stage.
//!
//! An [`Instance`] stores only the nonzero coordinates of a user's binary
//! interaction vector. Its interpretable form is a [`Mask`] over those
//! coordinates, and [`apply_mask`] maps a mask back into catalog space.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|intercept - f(b)|` for constrained explanations.
pub const INTERCEPT_TOLERANCE: f64 = 1e-9;
/// Tolerance on `|sum(phi) - (f(x) - f(b))|` for constrained explanations.
pub const COMPLETENESS_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    labels: Vec<String>,
}

impl Catalog {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidInput(format!("catalog needs at least 2 items, got {}", labels.len())));
        }
        let mut seen = HashSet::with_capacity(labels.len());
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate item label {label:?}")));
            }
        }
        Ok(Catalog { labels })
    }

    /// Catalog with zero-padded labels `i0000`, `i0001`, ...; lexicographic
    /// order of the labels equals index order.
    pub fn numbered(item_count: usize) -> Result<Self> {
        let width = digits(item_count.saturating_sub(1)).max(4);
        Catalog::new((0..item_count).map(|t| format!("i{t:0width$}")).collect())
    }

    pub fn item_count(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, item: usize) -> Option<&str> {
        self.labels.get(item).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

pub(crate) fn digits(mut n: usize) -> usize {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

/// A user's binary interaction vector, stored by its nonzero coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    user_id: String,
    active_items: Vec<usize>,
}

impl Instance {
    /// `active_items` must be strictly increasing, nonempty and below `item_count`.
    pub fn new(user_id: impl Into<String>, active_items: Vec<usize>, item_count: usize) -> Result<Self> {
        let user_id = user_id.into();
        if active_items.is_empty() {
            return Err(Error::InvalidInput(format!("user {user_id:?} has no active items")));
        }
        if let Some(w) = active_items.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "user {user_id:?}: active items not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let last = *active_items.last().unwrap();
        if last >= item_count {
            return Err(Error::InvalidInput(format!("user {user_id:?}: item {last} outside catalog of {item_count}")));
        }
        Ok(Instance { user_id, active_items })
    }

    /// Sorts and deduplicates before validating.
    pub fn from_unsorted(user_id: impl Into<String>, mut items: Vec<usize>, item_count: usize) -> Result<Self> {
        items.sort_unstable();
        items.dedup();
        Instance::new(user_id, items, item_count)
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn active_items(&self) -> &[usize] {
        &self.active_items
    }

    /// Number of interpretable features d'.
    pub fn d_prime(&self) -> usize {
        self.active_items.len()
    }

    pub fn contains(&self, item: usize) -> bool {
        self.active_items.binary_search(&item).is_ok()
    }

    /// The instance restricted to the features kept by `mask`.
    pub fn restrict(&self, mask: &Mask) -> Result<Instance> {
        check_mask(self, mask)?;
        let kept: Vec<usize> = mask.ones().map(|j| self.active_items[j]).collect();
        if kept.is_empty() {
            return Err(Error::InvalidInput("restriction removes every feature".into()));
        }
        Ok(Instance { user_id: self.user_id.clone(), active_items: kept })
    }

    /// The full binary vector x.
    pub fn to_vector(&self, item_count: usize) -> SparseBinary {
        SparseBinary { dim: item_count, ones: self.active_items.clone() }
    }
}

/// Interpretable perturbation z' over an instance's d' active features.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Mask { bits }
    }

    pub fn ones_mask(len: usize) -> Self {
        Mask { bits: vec![true; len] }
    }

    pub fn zeros_mask(len: usize) -> Self {
        Mask { bits: vec![false; len] }
    }

    /// Mask of length `len` with ones at `positions`.
    pub fn from_positions(len: usize, positions: impl IntoIterator<Item = usize>) -> Self {
        let mut bits = vec![false; len];
        for p in positions {
            bits[p] = true;
        }
        Mask { bits }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn get(&self, j: usize) -> bool {
        self.bits[j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(j, &b)| b.then_some(j))
    }

    pub fn is_all_zeros(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn is_all_ones(&self) -> bool {
        self.bits.iter().all(|&b| b)
    }
}

/// Binary vector of catalog length stored by its sorted nonzero coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseBinary {
    dim: usize,
    ones: Vec<usize>,
}

impl SparseBinary {
    pub fn new(dim: usize, mut ones: Vec<usize>) -> Result<Self> {
        ones.sort_unstable();
        ones.dedup();
        if let Some(&last) = ones.last() {
            if last >= dim {
                return Err(Error::Dimension { expected: dim, got: last + 1 });
            }
        }
        Ok(SparseBinary { dim, ones })
    }

    pub fn zeros(dim: usize) -> Self {
        SparseBinary { dim, ones: Vec::new() }
    }

    pub fn from_dense(x: &[f64]) -> Result<Self> {
        let mut ones = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            if v == 1.0 {
                ones.push(i);
            } else if v != 0.0 {
                return Err(Error::InvalidInput(format!("coordinate {i} = {v} is not binary")));
            }
        }
        Ok(SparseBinary { dim: x.len(), ones })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ones(&self) -> &[usize] {
        &self.ones
    }

    pub fn count_ones(&self) -> usize {
        self.ones.len()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for &i in &self.ones {
            v[i] = 1.0;
        }
        v
    }

    /// Copy with `removed` coordinates cleared. `removed` need not be sorted.
    pub fn without(&self, removed: &[usize]) -> SparseBinary {
        let drop: HashSet<usize> = removed.iter().copied().collect();
        SparseBinary { dim: self.dim, ones: self.ones.iter().copied().filter(|i| !drop.contains(i)).collect() }
    }
}

/// x' for an instance: the all-ones mask over its active features.
pub fn to_interpretable(instance: &Instance) -> Mask {
    Mask::ones_mask(instance.d_prime())
}

fn check_mask(instance: &Instance, mask: &Mask) -> Result<()> {
    if mask.len() != instance.d_prime() {
        return Err(Error::Dimension { expected: instance.d_prime(), got: mask.len() });
    }
    Ok(())
}

/// Maps z' back to catalog space: a one at `active_items[j]` for every kept `j`.
/// The all-zeros mask yields the zero baseline.
pub fn apply_mask(instance: &Instance, mask: &Mask, catalog: &Catalog) -> Result<SparseBinary> {
    check_mask(instance, mask)?;
    Ok(SparseBinary { dim: catalog.item_count(), ones: mask.ones().map(|j| instance.active_items[j]).collect() })
}

/// Same as [`apply_mask`] with the catalog size passed directly.
pub(crate) fn apply_mask_dim(instance: &Instance, mask: &Mask, dim: usize) -> SparseBinary {
    SparseBinary { dim, ones: mask.ones().map(|j| instance.active_items[j]).collect() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lime,
    Shap,
    Climb,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Lime, Method::Shap, Method::Climb];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lime => "lime",
            Method::Shap => "shap",
            Method::Climb => "climb",
        }
    }

    /// SHAP and CLIMB enforce f(b) + sum(phi) = f(x).
    pub fn is_constrained(self) -> bool {
        !matches!(self, Method::Lime)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lime" => Ok(Method::Lime),
            "shap" => Ok(Method::Shap),
            "climb" => Ok(Method::Climb),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Additive local attribution for one (user, target item) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Explanation {
    method: Method,
    user_id: String,
    target_item: usize,
    coefficients: Vec<f64>,
    intercept: f64,
    fx: f64,
    fbaseline: f64,
    item_indices: Vec<usize>,
    degenerate: bool,
}

impl Explanation {
    /// Validates finiteness, lengths, and for constrained methods the
    /// intercept and completeness tolerances.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        method: Method,
        instance: &Instance,
        target_item: usize,
        coefficients: Vec<f64>,
        intercept: f64,
        fx: f64,
        fbaseline: f64,
        degenerate: bool,
    ) -> Result<Self> {
        if coefficients.len() != instance.d_prime() {
            return Err(Error::Dimension { expected: instance.d_prime(), got: coefficients.len() });
        }
        if !(intercept.is_finite() && fx.is_finite() && fbaseline.is_finite())
            || coefficients.iter().any(|c| !c.is_finite())
        {
            return Err(Error::Numerical {
                message: format!("{method} explanation has non-finite values"),
                max_diag: f64::NAN,
                min_pivot: f64::NAN,
            });
        }
        let e = Explanation {
            method,
            user_id: instance.user_id().to_owned(),
            target_item,
            coefficients,
            intercept,
            fx,
            fbaseline,
            item_indices: instance.active_items().to_vec(),
            degenerate,
        };
        if method.is_constrained() || degenerate {
            if (e.intercept - e.fbaseline).abs() > INTERCEPT_TOLERANCE {
                return Err(Error::Numerical {
                    message: format!("{method} intercept {} differs from f(b) {}", e.intercept, e.fbaseline),
                    max_diag: f64::NAN,
                    min_pivot: f64::NAN,
                });
            }
            let residual = e.completeness_residual();
            if residual.abs() > COMPLETENESS_TOLERANCE {
                return Err(Error::Numerical {
                    message: format!("{method} completeness residual {residual:.3e}"),
                    max_diag: f64::NAN,
                    min_pivot: f64::NAN,
                });
            }
        }
        Ok(e)
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn user_id(&self) -> &str {
        &self.user_id
    }

    pub fn target_item(&self) -> usize {
        self.target_item
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }

    pub fn fbaseline(&self) -> f64 {
        self.fbaseline
    }

    pub fn item_indices(&self) -> &[usize] {
        &self.item_indices
    }

    /// True when d' = 1 and the attribution was fixed analytically.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn coefficient_sum(&self) -> f64 {
        self.coefficients.iter().sum()
    }

    /// The surrogate evaluated at the all-ones mask: intercept + sum(phi).
    pub fn fitted_at_instance(&self) -> f64 {
        self.intercept + self.coefficient_sum()
    }

    /// `intercept + sum(phi) - f(x)`.
    pub fn completeness_residual(&self) -> f64 {
        self.fbaseline + self.coefficient_sum() - self.fx
    }

    /// Feature positions (0..d') by descending coefficient, ties by ascending item index.
    pub fn ranked_positions(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.coefficients.len()).collect();
        order.sort_by(|&a, &b| {
            self.coefficients[b].total_cmp(&self.coefficients[a]).then(self.item_indices[a].cmp(&self.item_indices[b]))
        });
        order
    }

    /// JSON record with items sorted by descending coefficient.
    pub fn to_record(&self, catalog: &Catalog) -> ExplanationRecord {
        ExplanationRecord {
            method: self.method,
            user_id: self.user_id.clone(),
            target_item: self.target_item,
            target_label: catalog.label(self.target_item).map(str::to_owned),
            fx: self.fx,
            fbaseline: self.fbaseline,
            intercept: self.intercept,
            degenerate: self.degenerate,
            items: self
                .ranked_positions()
                .into_iter()
                .map(|j| AttributedItem {
                    index: self.item_indices[j],
                    label: catalog.label(self.item_indices[j]).unwrap_or_default().to_owned(),
                    coefficient: self.coefficients[j],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributedItem {
    pub index: usize,
    pub label: String,
    pub coefficient: f64,
}

/// Serialized form of an [`Explanation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub method: Method,
    pub user_id: String,
    pub target_item: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_label: Option<String>,
    pub fx: f64,
    pub fbaseline: f64,
    pub intercept: f64,
    #[serde(default)]
    pub degenerate: bool,
    pub items: Vec<AttributedItem>,
}
