//! Closed-form scoring models with known attributions.

use super::{check_input, ScoringModel};
use crate::error::Result;
use crate::types::SparseBinary;

/// Ignores its input and returns a fixed score table.
#[derive(Debug, Clone)]
pub struct TableModel {
    scores: Vec<f64>,
}

impl TableModel {
    pub fn new(scores: Vec<f64>) -> Self {
        TableModel { scores }
    }
}

impl ScoringModel for TableModel {
    fn item_count(&self) -> usize {
        self.scores.len()
    }

    fn score(&self, x: &SparseBinary) -> Result<Vec<f64>> {
        check_input(self.scores.len(), x)?;
        Ok(self.scores.clone())
    }
}

/// `f_t(x) = base_t + sum_i x_i v_i`: every item sees the same additive effect.
#[derive(Debug, Clone)]
pub struct AdditiveModel {
    base: Vec<f64>,
    effects: Vec<f64>,
}

impl AdditiveModel {
    pub fn new(base: Vec<f64>, effects: Vec<f64>) -> Self {
        assert_eq!(base.len(), effects.len(), "base and effects must cover the same catalog");
        AdditiveModel { base, effects }
    }

    pub fn effects(&self) -> &[f64] {
        &self.effects
    }
}

impl ScoringModel for AdditiveModel {
    fn item_count(&self) -> usize {
        self.base.len()
    }

    fn score(&self, x: &SparseBinary) -> Result<Vec<f64>> {
        check_input(self.base.len(), x)?;
        let shift: f64 = x.ones().iter().map(|&i| self.effects[i]).sum();
        Ok(self.base.iter().map(|b| b + shift).collect())
    }
}

/// `f_t(x) = 1 - max(0, 1 - slope * sum_i x_i)` for every item: zero at the
/// empty input, saturated at one once `slope * |x| >= 1`.
#[derive(Debug, Clone)]
pub struct SaturatingModel {
    item_count: usize,
    slope: f64,
}

impl SaturatingModel {
    pub fn new(item_count: usize, slope: f64) -> Self {
        SaturatingModel { item_count, slope }
    }
}

impl ScoringModel for SaturatingModel {
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn score(&self, x: &SparseBinary) -> Result<Vec<f64>> {
        check_input(self.item_count, x)?;
        let v = 1.0 - (1.0 - self.slope * x.count_ones() as f64).max(0.0);
        Ok(vec![v; self.item_count])
    }
}

/// Wraps an arbitrary scoring closure.
pub struct FnModel<F> {
    item_count: usize,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&SparseBinary) -> Vec<f64> + Send + Sync,
{
    pub fn new(item_count: usize, f: F) -> Self {
        FnModel { item_count, f }
    }
}

impl<F> ScoringModel for FnModel<F>
where
    F: Fn(&SparseBinary) -> Vec<f64> + Send + Sync,
{
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn score(&self, x: &SparseBinary) -> Result<Vec<f64>> {
        check_input(self.item_count, x)?;
        Ok((self.f)(x))
    }
}
