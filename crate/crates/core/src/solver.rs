//! Weighted least squares for the surrogate fits.
//!
//! Everything goes through the weighted normal equations and a Cholesky
//! factorisation. Rows are accumulated sparsely, which suits mask designs
//! where each row touches about half of the columns.
//!
//! The completeness-constrained problem
//!
//! ```text
//! min  sum_z pi(z) (f(z) - f(b) - phi . z')^2   s.t.  sum_j phi_j = f(x) - f(b)
//! ```
//!
//! is solved by substituting `phi_last = f(x) - f(b) - sum_{j<last} phi_j`,
//! which leaves an unconstrained problem in `d' - 1` unknowns with regressor
//! `z'_{1:d'-1} - z'_last` and offset `f(b) + z'_last (f(x) - f(b))`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::Mask;

/// Default ridge penalty for the unconstrained (LIME) fit.
pub const DEFAULT_RIDGE: f64 = 1e-6;

const JITTER_FLOOR: f64 = 1e-10;
const JITTER_STEPS: i32 = 6;
const PIVOT_RELATIVE_TOLERANCE: f64 = 1e-12;

/// `min sum_i w_i (y_i - b - phi . z_i)^2 + ridge |phi|^2` with an optional,
/// unpenalised intercept `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsProblem {
    rows: usize,
    cols: usize,
    design: Vec<f64>,
    targets: Vec<f64>,
    weights: Vec<f64>,
    ridge: f64,
    fit_intercept: bool,
}

impl WlsProblem {
    /// `design` is row-major `rows x cols`.
    pub fn new(
        rows: usize,
        cols: usize,
        design: Vec<f64>,
        targets: Vec<f64>,
        weights: Vec<f64>,
        ridge: f64,
        fit_intercept: bool,
    ) -> Result<Self> {
        if rows == 0 {
            return Err(Error::InvalidInput("least-squares problem has no rows".into()));
        }
        if design.len() != rows * cols {
            return Err(Error::Dimension { expected: rows * cols, got: design.len() });
        }
        if targets.len() != rows {
            return Err(Error::Dimension { expected: rows, got: targets.len() });
        }
        if weights.len() != rows {
            return Err(Error::Dimension { expected: rows, got: weights.len() });
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::InvalidInput(format!("weight {w} must be finite and positive")));
        }
        if !(ridge >= 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidInput(format!("ridge {ridge} must be finite and non-negative")));
        }
        Ok(WlsProblem { rows, cols, design, targets, weights, ridge, fit_intercept })
    }

    /// Binary design whose rows are the masks.
    pub fn from_masks(
        masks: &[Mask],
        targets: Vec<f64>,
        weights: Vec<f64>,
        ridge: f64,
        fit_intercept: bool,
    ) -> Result<Self> {
        let cols = masks.first().map_or(0, Mask::len);
        let mut design = Vec::with_capacity(masks.len() * cols);
        for m in masks {
            if m.len() != cols {
                return Err(Error::Dimension { expected: cols, got: m.len() });
            }
            design.extend(m.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }));
        }
        WlsProblem::new(masks.len(), cols, design, targets, weights, ridge, fit_intercept)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.cols..(i + 1) * self.cols]
    }

    /// Value of the penalised objective at `(coefficients, intercept)`.
    pub fn objective(&self, coefficients: &[f64], intercept: f64) -> f64 {
        let b = if self.fit_intercept { intercept } else { 0.0 };
        let loss: f64 = (0..self.rows)
            .map(|i| {
                let fit: f64 = b + self.row(i).iter().zip(coefficients).map(|(z, c)| z * c).sum::<f64>();
                self.weights[i] * (self.targets[i] - fit).powi(2)
            })
            .sum();
        loss + self.ridge * coefficients.iter().map(|c| c * c).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsSolution {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Ridge actually used; larger than requested when jitter was needed.
    pub ridge_used: f64,
}

/// Accumulates `A = sum w v v^T` and `r = sum w y v` over sparse rows. The
/// intercept, when present, is the last unknown.
struct NormalEquations {
    p: usize,
    dim: usize,
    intercept: bool,
    gram: Vec<f64>,
    rhs: Vec<f64>,
}

impl NormalEquations {
    fn new(p: usize, intercept: bool) -> Self {
        let dim = p + usize::from(intercept);
        NormalEquations { p, dim, intercept, gram: vec![0.0; dim * dim], rhs: vec![0.0; dim] }
    }

    /// `entries` are the nonzero `(column, value)` pairs of one row, columns
    /// ascending and below `p`.
    fn add_row(&mut self, entries: &[(usize, f64)], target: f64, weight: f64) {
        let dim = self.dim;
        for (a, &(i, vi)) in entries.iter().enumerate() {
            let wi = weight * vi;
            self.rhs[i] += wi * target;
            let row = &mut self.gram[i * dim..(i + 1) * dim];
            for &(j, vj) in &entries[a..] {
                row[j] += wi * vj;
            }
            if self.intercept {
                row[self.p] += wi;
            }
        }
        if self.intercept {
            self.gram[self.p * dim + self.p] += weight;
            self.rhs[self.p] += weight * target;
        }
    }

    /// Solves `(A + ridge I_p) x = r`, retrying with growing jitter when the
    /// factorisation breaks down.
    fn solve(&self, ridge: f64) -> Result<(Vec<f64>, f64)> {
        let mut last = (0.0, 0.0);
        for step in 0..=JITTER_STEPS {
            let lambda = if step == 0 { ridge } else { ridge.max(JITTER_FLOOR) * 10f64.powi(step) };
            match self.try_solve(lambda) {
                Ok(x) => return Ok((x, lambda)),
                Err(diag) => last = diag,
            }
        }
        Err(Error::Numerical {
            message: format!("normal equations of size {} stayed singular after jitter", self.dim),
            max_diag: last.0,
            min_pivot: last.1,
        })
    }

    fn try_solve(&self, lambda: f64) -> std::result::Result<Vec<f64>, (f64, f64)> {
        let n = self.dim;
        // lower triangle of the symmetric matrix, from the accumulated upper one
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                l[i * n + j] = self.gram[j * n + i];
            }
            if i < self.p {
                l[i * n + i] += lambda;
            }
        }
        let max_diag = (0..n).map(|i| l[i * n + i]).fold(0.0, f64::max);
        let tol = PIVOT_RELATIVE_TOLERANCE * max_diag;
        let mut min_pivot = f64::INFINITY;
        for j in 0..n {
            let pivot = {
                let row_j = &l[j * n..j * n + j + 1];
                row_j[j] - row_j[..j].iter().map(|v| v * v).sum::<f64>()
            };
            min_pivot = min_pivot.min(pivot);
            if !(pivot > tol && pivot.is_finite()) {
                return Err((max_diag, min_pivot));
            }
            let diag = pivot.sqrt();
            l[j * n + j] = diag;
            for i in j + 1..n {
                let (upper, lower) = l.split_at_mut(i * n);
                let row_j = &upper[j * n..j * n + j];
                let row_i = &mut lower[..=j];
                let dot: f64 = row_i[..j].iter().zip(row_j).map(|(a, b)| a * b).sum();
                row_i[j] = (row_i[j] - dot) / diag;
            }
        }
        // L y = r, then L^T x = y
        let mut y = self.rhs.clone();
        for i in 0..n {
            let dot: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
            y[i] = (y[i] - dot) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let dot: f64 = (i + 1..n).map(|k| l[k * n + i] * y[k]).sum();
            y[i] = (y[i] - dot) / l[i * n + i];
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err((max_diag, min_pivot));
        }
        Ok(y)
    }
}

/// Weighted ridge regression through the normal equations.
pub fn solve_wls(problem: &WlsProblem) -> Result<WlsSolution> {
    let mut ne = NormalEquations::new(problem.cols, problem.fit_intercept);
    let mut entries = Vec::with_capacity(problem.cols);
    for i in 0..problem.rows {
        entries.clear();
        entries.extend(problem.row(i).iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(j, &v)| (j, v)));
        ne.add_row(&entries, problem.targets[i], problem.weights[i]);
    }
    let (mut x, ridge_used) = ne.solve(problem.ridge)?;
    let intercept = if problem.fit_intercept { x.pop().unwrap_or(0.0) } else { 0.0 };
    Ok(WlsSolution { coefficients: x, intercept, ridge_used })
}

/// Weighted ridge regression on a binary mask design, without materialising it.
pub fn solve_wls_masks(masks: &[Mask], targets: &[f64], weights: &[f64], ridge: f64) -> Result<WlsSolution> {
    check_lengths(masks, weights, targets)?;
    let p = masks[0].len();
    let mut ne = NormalEquations::new(p, true);
    let mut entries = Vec::with_capacity(p);
    for ((m, &y), &w) in masks.iter().zip(targets).zip(weights) {
        if m.len() != p {
            return Err(Error::Dimension { expected: p, got: m.len() });
        }
        entries.clear();
        entries.extend(m.ones().map(|j| (j, 1.0)));
        ne.add_row(&entries, y, w);
    }
    let (mut x, ridge_used) = ne.solve(ridge)?;
    let intercept = x.pop().unwrap_or(0.0);
    Ok(WlsSolution { coefficients: x, intercept, ridge_used })
}

fn check_lengths(masks: &[Mask], weights: &[f64], labels: &[f64]) -> Result<()> {
    if masks.is_empty() {
        return Err(Error::InvalidInput("no perturbation rows".into()));
    }
    if weights.len() != masks.len() {
        return Err(Error::Dimension { expected: masks.len(), got: weights.len() });
    }
    if labels.len() != masks.len() {
        return Err(Error::Dimension { expected: masks.len(), got: labels.len() });
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidInput(format!("weight {w} must be finite and positive")));
    }
    Ok(())
}

fn check_constraint_inputs(fx: f64, fb: f64, d_prime: usize) -> Result<()> {
    if d_prime == 0 {
        return Err(Error::InvalidInput("d' must be at least 1".into()));
    }
    if !(fx.is_finite() && fb.is_finite()) {
        return Err(Error::InvalidInput(format!("f(x) = {fx} and f(b) = {fb} must be finite")));
    }
    Ok(())
}

/// Completeness-constrained weighted least squares by eliminating the last
/// coefficient. The result satisfies `sum(phi) = fx - fb` by construction;
/// the intercept is `fb` and is not estimated.
pub fn solve_completeness_constrained(
    masks: &[Mask],
    weights: &[f64],
    labels: &[f64],
    fx: f64,
    fb: f64,
    d_prime: usize,
) -> Result<Vec<f64>> {
    check_constraint_inputs(fx, fb, d_prime)?;
    let gap = fx - fb;
    if d_prime == 1 {
        return Ok(vec![gap]);
    }
    check_lengths(masks, weights, labels)?;
    let last = d_prime - 1;
    let mut ne = NormalEquations::new(last, false);
    let mut entries = Vec::with_capacity(last);
    for ((m, &y), &w) in masks.iter().zip(labels).zip(weights) {
        if m.len() != d_prime {
            return Err(Error::Dimension { expected: d_prime, got: m.len() });
        }
        let bits = m.bits();
        entries.clear();
        let offset = if bits[last] {
            // r = z' - 1: -1 wherever the feature is dropped
            entries.extend((0..last).filter(|&j| !bits[j]).map(|j| (j, -1.0)));
            fb + gap
        } else {
            entries.extend((0..last).filter(|&j| bits[j]).map(|j| (j, 1.0)));
            fb
        };
        ne.add_row(&entries, y - offset, w);
    }
    let (mut phi, _) = ne.solve(0.0)?;
    let rest: f64 = phi.iter().sum();
    phi.push(gap - rest);
    Ok(phi)
}

/// Reference solver for the constrained problem via the bordered KKT system
/// `[[2A, 1], [1^T, 0]] [phi; nu] = [2b; fx - fb]` and an LU factorisation.
/// Independent of [`solve_completeness_constrained`]; meant for testing.
pub fn solve_kkt_oracle(
    masks: &[Mask],
    weights: &[f64],
    labels: &[f64],
    fx: f64,
    fb: f64,
    d_prime: usize,
) -> Result<Vec<f64>> {
    check_constraint_inputs(fx, fb, d_prime)?;
    if d_prime == 1 {
        return Ok(vec![fx - fb]);
    }
    check_lengths(masks, weights, labels)?;
    let n = masks.len();
    let z = DMatrix::from_fn(n, d_prime, |i, j| if masks[i].bits()[j] { 1.0 } else { 0.0 });
    let w = DVector::from_column_slice(weights);
    let y = DVector::from_iterator(n, labels.iter().map(|v| v - fb));
    let wz = DMatrix::from_fn(n, d_prime, |i, j| w[i] * z[(i, j)]);
    let a = z.transpose() * &wz;
    let b = wz.transpose() * y;

    let mut kkt = DMatrix::zeros(d_prime + 1, d_prime + 1);
    kkt.view_mut((0, 0), (d_prime, d_prime)).copy_from(&(a * 2.0));
    for j in 0..d_prime {
        kkt[(j, d_prime)] = 1.0;
        kkt[(d_prime, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(d_prime + 1);
    rhs.rows_mut(0, d_prime).copy_from(&(b * 2.0));
    rhs[d_prime] = fx - fb;
    let sol = kkt.lu().solve(&rhs).ok_or_else(|| Error::Numerical {
        message: "bordered KKT system is singular".into(),
        max_diag: f64::NAN,
        min_pivot: 0.0,
    })?;
    Ok(sol.rows(0, d_prime).iter().copied().collect())
}

/// `sum_z w (y - fb - phi . z')^2`, the constrained-problem objective.
pub fn constrained_objective(masks: &[Mask], weights: &[f64], labels: &[f64], fb: f64, phi: &[f64]) -> f64 {
    masks
        .iter()
        .zip(weights)
        .zip(labels)
        .map(|((m, w), y)| {
            let fit: f64 = fb + m.ones().map(|j| phi[j]).sum::<f64>();
            w * (y - fit).powi(2)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand::seq::index::sample;
    use rand::Rng;

    fn random_masks(rng: &mut impl Rng, d: usize, n: usize) -> Vec<Mask> {
        (0..n)
            .map(|_| {
                let k = rng.random_range(1..d);
                Mask::from_positions(d, sample(rng, d, k))
            })
            .collect()
    }

    fn random_problem(seed: u64, d: usize, n: usize) -> (Vec<Mask>, Vec<f64>, Vec<f64>, f64, f64) {
        let mut rng = rng_from(seed);
        let masks = random_masks(&mut rng, d, n);
        let weights = (0..n).map(|_| rng.random_range(0.05..2.0)).collect();
        let labels = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        (masks, weights, labels, rng.random_range(0.5..1.5), rng.random_range(-0.5..0.5))
    }

    #[test]
    fn exact_linear_recovery() {
        let mut rng = rng_from(1);
        let (n, p) = (60, 5);
        let truth = [0.5, -1.0, 2.0, 0.0, 3.5];
        let design: Vec<f64> = (0..n * p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let targets: Vec<f64> =
            (0..n).map(|i| 0.25 + (0..p).map(|j| design[i * p + j] * truth[j]).sum::<f64>()).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let prob = WlsProblem::new(n, p, design, targets, weights.clone(), 0.0, true).unwrap();
        let sol = solve_wls(&prob).unwrap();
        for (a, b) in sol.coefficients.iter().zip(truth) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((sol.intercept - 0.25).abs() <= 1e-9);
        assert!(prob.objective(&sol.coefficients, sol.intercept) <= 1e-18 * n as f64);

        let scaled = WlsProblem { weights: weights.iter().map(|w| w * 10.0).collect(), ..prob.clone() };
        let s2 = solve_wls(&scaled).unwrap();
        for (a, b) in sol.coefficients.iter().zip(&s2.coefficients) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn gradient_vanishes_at_solution() {
        let mut rng = rng_from(2);
        let (n, p) = (80, 6);
        let design: Vec<f64> = (0..n * p).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let prob = WlsProblem::new(n, p, design, targets.clone(), weights, 0.01, true).unwrap();
        let sol = solve_wls(&prob).unwrap();
        // central differences of the objective in every coordinate, intercept included
        let h = 1e-5;
        let mut grad2 = 0.0;
        for j in 0..=p {
            let mut plus = sol.coefficients.clone();
            let mut minus = sol.coefficients.clone();
            let (mut bp, mut bm) = (sol.intercept, sol.intercept);
            if j < p {
                plus[j] += h;
                minus[j] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let g = (prob.objective(&plus, bp) - prob.objective(&minus, bm)) / (2.0 * h);
            grad2 += g * g;
        }
        let ynorm = targets.iter().map(|y| y * y).sum::<f64>().sqrt();
        assert!(grad2.sqrt() <= 1e-6 * (1.0 + ynorm), "gradient norm {}", grad2.sqrt());
    }

    #[test]
    fn mask_route_matches_dense_route() {
        let (masks, weights, labels, _, _) = random_problem(3, 7, 90);
        let a = solve_wls_masks(&masks, &labels, &weights, 1e-6).unwrap();
        let b = solve_wls(&WlsProblem::from_masks(&masks, labels, weights, 1e-6, true).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn singular_design_gets_jitter() {
        // two identical columns
        let design = vec![1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
        let prob = WlsProblem::new(3, 2, design, vec![1.0, 0.0, 1.0], vec![1.0; 3], 0.0, false).unwrap();
        let sol = solve_wls(&prob).unwrap();
        assert!(sol.ridge_used > 0.0);
        assert!((sol.coefficients[0] - sol.coefficients[1]).abs() < 1e-6);
        assert!((sol.coefficients[0] + sol.coefficients[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn persistent_singularity_is_an_error() {
        let prob = WlsProblem::new(1, 1, vec![0.0], vec![1.0], vec![1.0], 0.0, true).unwrap();
        // intercept and a zero column: the zero column is rescued by jitter
        assert!(solve_wls(&prob).is_ok());
        let mut ne = NormalEquations::new(0, true);
        ne.gram[0] = 0.0;
        assert!(matches!(ne.solve(0.0), Err(Error::Numerical { .. })));
    }

    #[test]
    fn constrained_single_feature() {
        assert_eq!(solve_completeness_constrained(&[], &[], &[], 0.7, 0.2, 1).unwrap(), vec![0.7 - 0.2]);
        assert_eq!(solve_kkt_oracle(&[], &[], &[], 0.7, 0.2, 1).unwrap(), vec![0.7 - 0.2]);
    }

    #[test]
    fn constrained_recovers_additive_truth() {
        let mut rng = rng_from(4);
        let d = 6;
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fb = 0.3;
        let fx = fb + v.iter().sum::<f64>();
        let masks = random_masks(&mut rng, d, 40);
        let labels: Vec<f64> = masks.iter().map(|m| fb + m.ones().map(|j| v[j]).sum::<f64>()).collect();
        let weights: Vec<f64> = (0..40).map(|_| rng.random_range(0.01..5.0)).collect();
        let phi = solve_completeness_constrained(&masks, &weights, &labels, fx, fb, d).unwrap();
        for (a, b) in phi.iter().zip(&v) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn elimination_matches_kkt_and_satisfies_constraint() {
        for seed in 0..100 {
            let mut rng = rng_from(1000 + seed);
            let d = rng.random_range(2..=30);
            let n = rng.random_range(d.max(2 * d)..=500);
            let (masks, weights, labels, fx, fb) = random_problem(seed, d, n);
            let phi = solve_completeness_constrained(&masks, &weights, &labels, fx, fb, d).unwrap();
            let oracle = solve_kkt_oracle(&masks, &weights, &labels, fx, fb, d).unwrap();
            let sum: f64 = phi.iter().sum();
            assert!((sum - (fx - fb)).abs() <= 1e-10);
            let oracle_sum: f64 = oracle.iter().sum();
            assert!((oracle_sum - (fx - fb)).abs() <= 1e-12);
            for (a, b) in phi.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-8, "seed {seed}, d' {d}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn feasible_perturbations_never_improve() {
        for seed in 0..20 {
            let (masks, weights, labels, fx, fb) = random_problem(seed, 8, 120);
            let phi = solve_completeness_constrained(&masks, &weights, &labels, fx, fb, 8).unwrap();
            let base = constrained_objective(&masks, &weights, &labels, fb, &phi);
            let mut rng = rng_from(seed + 77);
            for _ in 0..20 {
                let mut dir: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mean = dir.iter().sum::<f64>() / 8.0;
                dir.iter_mut().for_each(|v| *v -= mean);
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let moved: Vec<f64> = phi.iter().zip(&dir).map(|(p, v)| p + 1e-3 * v / norm).collect();
                assert!(constrained_objective(&masks, &weights, &labels, fb, &moved) >= base);
            }
        }
    }

    #[test]
    fn eliminated_coordinate_is_immaterial() {
        for seed in 0..20 {
            let d = 9;
            let (masks, weights, labels, fx, fb) = random_problem(seed, d, 150);
            let phi = solve_completeness_constrained(&masks, &weights, &labels, fx, fb, d).unwrap();
            for shift in 1..d {
                // column j moves to (j + shift) % d
                let rotated: Vec<Mask> =
                    masks.iter().map(|m| Mask::from_positions(d, m.ones().map(|j| (j + shift) % d))).collect();
                let phi_r = solve_completeness_constrained(&rotated, &weights, &labels, fx, fb, d).unwrap();
                for j in 0..d {
                    assert!((phi[j] - phi_r[(j + shift) % d]).abs() <= 1e-8);
                }
            }
        }
    }
}
