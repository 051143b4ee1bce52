use std::cell::RefCell;
use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_input, check_item, InteractionDataset, ScoringModel};
use crate::error::{Error, Result};
use crate::types::{apply_mask_dim, Catalog, Instance, Mask, SparseBinary};

pub const MODEL_FORMAT: &str = "climb-cooc-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoocParams {
    pub shrinkage: f64,
    pub tau: f64,
    pub alpha: f64,
}

impl Default for CoocParams {
    fn default() -> Self {
        CoocParams { shrinkage: 10.0, tau: 1.0, alpha: 0.75 }
    }
}

/// Co-occurrence softmax scorer.
///
/// `logits_t = c_t + m^-alpha * sum_i x_i W[i][t]` with `m = max(1, |x|)`,
/// scores are `softmax(logits / tau)`. `W` is symmetric, nonnegative and
/// stored row-compressed with only its strictly positive entries.
#[derive(Debug, Clone)]
pub struct CoocModel {
    catalog: Catalog,
    bias: Vec<f64>,
    alpha: f64,
    tau: f64,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    // exp(c_t / tau - shift) and its sum, for the single-item fast path
    shift: f64,
    base_exp: Vec<f64>,
    base_norm: f64,
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<u32>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

/// Fits shifted-PMI affinities with additive shrinkage:
/// `W[i][t] = max(0, ln(N C[i][t] / (pop_i pop_t + shrinkage)))`, `c_t = ln(1 + pop_t)`.
pub fn fit_cooc(data: &InteractionDataset, params: CoocParams) -> Result<CoocModel> {
    if !(params.shrinkage >= 0.0 && params.shrinkage.is_finite()) {
        return Err(Error::Config(format!("shrinkage must be >= 0, got {}", params.shrinkage)));
    }
    let n = data.user_count() as f64;
    let pop = data.popularity();

    let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
    for u in data.users() {
        let items = u.active_items();
        for (a, &i) in items.iter().enumerate() {
            for &t in &items[a + 1..] {
                *counts.entry((i as u32, t as u32)).or_insert(0) += 1;
            }
        }
    }
    let mut triplets: Vec<(usize, usize, f64)> = counts
        .into_iter()
        .filter_map(|((i, t), c)| {
            let denom = (pop[i as usize] * pop[t as usize]) as f64 + params.shrinkage;
            let w = (n * f64::from(c) / denom).ln();
            (w > 0.0).then_some((i as usize, t as usize, w))
        })
        .collect();
    triplets.sort_by_key(|&(i, t, _)| (i, t));

    let bias = pop.iter().map(|&p| (1.0 + p as f64).ln()).collect();
    CoocModel::from_parts(data.catalog().clone(), bias, &triplets, params.alpha, params.tau)
}

impl CoocModel {
    /// Builds a model from the upper-triangle entries `(i, t, w)` with `i < t`.
    pub fn from_parts(
        catalog: Catalog,
        bias: Vec<f64>,
        upper: &[(usize, usize, f64)],
        alpha: f64,
        tau: f64,
    ) -> Result<Self> {
        let d = catalog.item_count();
        if bias.len() != d {
            return Err(Error::Dimension { expected: d, got: bias.len() });
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
        }
        if !alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be finite, got {alpha}")));
        }
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidInput("non-finite bias".into()));
        }
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); d];
        for &(i, t, w) in upper {
            if i >= t || t >= d {
                return Err(Error::InvalidInput(format!("weight entry ({i}, {t}) is not upper-triangular in {d}")));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidInput(format!("weight ({i}, {t}) = {w} must be finite and positive")));
            }
            rows[i].push((t as u32, w));
            rows[t].push((i as u32, w));
        }
        let mut row_ptr = Vec::with_capacity(d + 1);
        let mut cols = Vec::with_capacity(2 * upper.len());
        let mut vals = Vec::with_capacity(2 * upper.len());
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(t, _)| t);
            if row.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::InvalidInput("duplicate weight entry".into()));
            }
            for (t, w) in row {
                cols.push(t);
                vals.push(w);
            }
            row_ptr.push(cols.len());
        }

        let shift = bias.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
        let base_exp: Vec<f64> = bias.iter().map(|&c| (c / tau - shift).exp()).collect();
        let base_norm = base_exp.iter().sum();
        Ok(CoocModel { catalog, bias, alpha, tau, row_ptr, cols, vals, shift, base_exp, base_norm })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// W[i][t]; zero on the diagonal and for unseen pairs.
    pub fn weight(&self, i: usize, t: usize) -> f64 {
        let (c, v) = self.row(i);
        c.binary_search(&(t as u32)).map_or(0.0, |k| v[k])
    }

    fn row(&self, i: usize) -> (&[u32], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    /// Number of stored off-diagonal entries (both triangles).
    pub fn nonzero_count(&self) -> usize {
        self.vals.len()
    }

    /// Upper-triangle entries `(i, t, w)`, `i < t`, in row-major order.
    pub fn upper_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.vals.len() / 2);
        for i in 0..self.item_count() {
            let (c, v) = self.row(i);
            for (&t, &w) in c.iter().zip(v) {
                if (t as usize) > i {
                    out.push((i, t as usize, w));
                }
            }
        }
        out
    }

    fn input_scale(&self, x: &SparseBinary) -> f64 {
        let m = x.count_ones().max(1) as f64;
        m.powf(-self.alpha)
    }

    pub fn logits(&self, x: &SparseBinary) -> Result<Vec<f64>> {
        check_input(self.item_count(), x)?;
        let mut acc = vec![0.0; self.item_count()];
        for &i in x.ones() {
            let (c, v) = self.row(i);
            for (&t, &w) in c.iter().zip(v) {
                acc[t as usize] += w;
            }
        }
        let s = self.input_scale(x);
        Ok(self.bias.iter().zip(&acc).map(|(&c, &a)| c + s * a).collect())
    }

    pub fn save(&self, path: &Path, manifest: Option<serde_json::Value>) -> Result<()> {
        let triplets = self.upper_triplets();
        let file = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            version: MODEL_VERSION,
            alpha: self.alpha,
            tau: self.tau,
            labels: self.catalog.labels().to_vec(),
            bias: self.bias.clone(),
            weights: WeightTriplets {
                rows: triplets.iter().map(|e| e.0).collect(),
                cols: triplets.iter().map(|e| e.1).collect(),
                values: triplets.iter().map(|e| e.2).collect(),
            },
            manifest,
        };
        let w = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(w, &file)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = std::io::BufReader::new(std::fs::File::open(path)?);
        let file: ModelFile = serde_json::from_reader(r)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!(
                "{}: not a model file (format {:?})",
                path.display(),
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported model version {} (expected {MODEL_VERSION})",
                path.display(),
                file.version
            )));
        }
        let w = &file.weights;
        if w.rows.len() != w.cols.len() || w.rows.len() != w.values.len() {
            return Err(Error::InvalidInput("weight triplet arrays differ in length".into()));
        }
        let triplets: Vec<_> = (0..w.rows.len()).map(|k| (w.rows[k], w.cols[k], w.values[k])).collect();
        CoocModel::from_parts(Catalog::new(file.labels)?, file.bias, &triplets, file.alpha, file.tau)
    }
}

#[derive(Serialize, Deserialize)]
struct WeightTriplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    alpha: f64,
    tau: f64,
    labels: Vec<String>,
    bias: Vec<f64>,
    weights: WeightTriplets,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    manifest: Option<serde_json::Value>,
}

impl ScoringModel for CoocModel {
    fn item_count(&self) -> usize {
        self.catalog.item_count()
    }

    fn score(&self, x: &SparseBinary) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut out: Vec<f64> = logits.iter().map(|&l| ((l - max) / self.tau).exp()).collect();
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
        Ok(out)
    }

    /// Touches only the rows of the active inputs: the softmax normaliser is
    /// the precomputed zero-input sum corrected on the affected items.
    fn score_item(&self, x: &SparseBinary, item: usize) -> Result<f64> {
        check_input(self.item_count(), x)?;
        check_item(self.item_count(), item)?;
        let s = self.input_scale(x);
        let fast = SCRATCH.with(|cell| {
            let (acc, touched) = &mut *cell.borrow_mut();
            acc.resize(self.item_count(), 0.0);
            touched.clear();
            for &i in x.ones() {
                let (c, v) = self.row(i);
                for (&t, &w) in c.iter().zip(v) {
                    let slot = &mut acc[t as usize];
                    if *slot == 0.0 {
                        touched.push(t);
                    }
                    *slot += w;
                }
            }
            let mut norm = self.base_norm;
            let mut overflow = false;
            for &t in touched.iter() {
                let t = t as usize;
                let arg = (self.bias[t] + s * acc[t]) / self.tau - self.shift;
                overflow |= arg > 700.0;
                norm += arg.exp() - self.base_exp[t];
            }
            let arg = (self.bias[item] + s * acc[item]) / self.tau - self.shift;
            for &t in touched.iter() {
                acc[t as usize] = 0.0;
            }
            (!overflow).then(|| arg.exp() / norm)
        });
        match fast {
            Some(v) => Ok(v),
            None => Ok(self.score(x)?[item]),
        }
    }

    fn score_masks(&self, instance: &Instance, item: usize, masks: &[Mask]) -> Result<Vec<f64>> {
        check_item(self.item_count(), item)?;
        if instance.active_items().last().is_some_and(|&i| i >= self.item_count()) {
            return Err(Error::Dimension {
                expected: self.item_count(),
                got: instance.active_items()[instance.d_prime() - 1] + 1,
            });
        }
        self.score_masks_factored(instance, item, masks)
    }
}

impl CoocModel {
    /// Per-instance labelling. With `m = |z|` fixed, every softmax term
    /// factors as `exp(base_t) * prod_{i in z} exp(m^-alpha w_it / tau)`, so
    /// masks are grouped by size and the per-row factors are exponentiated
    /// once per group instead of once per mask. Dense masks start from the
    /// full product and divide out the dropped rows. Items no input row
    /// reaches keep their zero-input term; repeated masks are scored once.
    fn score_masks_factored(&self, instance: &Instance, item: usize, masks: &[Mask]) -> Result<Vec<f64>> {
        let d = self.item_count();
        let inputs = instance.active_items();
        let mut local = vec![u32::MAX; d];
        let mut touched = vec![item];
        local[item] = 0;
        for &i in inputs {
            for &t in self.row(i).0 {
                if local[t as usize] == u32::MAX {
                    local[t as usize] = touched.len() as u32;
                    touched.push(t as usize);
                }
            }
        }
        let n = touched.len();
        let rows: Vec<(Vec<u32>, Vec<f64>)> = inputs
            .iter()
            .map(|&i| {
                let (c, v) = self.row(i);
                (c.iter().map(|&t| local[t as usize]).collect(), v.iter().map(|w| w / self.tau).collect())
            })
            .collect();
        let base: Vec<f64> = touched.iter().map(|&t| self.bias[t] / self.tau - self.shift).collect();
        let base_exp: Vec<f64> = touched.iter().map(|&t| self.base_exp[t]).collect();
        // per-item bounds on any subset's logit shift, to keep products finite
        let (mut hi, mut lo) = (vec![0.0; n], vec![0.0; n]);
        for (c, v) in &rows {
            for (&t, &w) in c.iter().zip(v) {
                if w > 0.0 {
                    hi[t as usize] += w;
                } else {
                    lo[t as usize] += w;
                }
            }
        }
        let rest: f64 = (0..d).filter(|&t| local[t] == u32::MAX).map(|t| self.base_exp[t]).sum();

        let counts: Vec<usize> = masks.iter().map(Mask::count_ones).collect();
        let mut order: Vec<usize> = (0..masks.len()).collect();
        order.sort_by_key(|&m| counts[m]);
        let mut out = vec![0.0; masks.len()];
        let mut seen: HashMap<&Mask, f64> = HashMap::new();
        let mut up: Vec<Vec<f64>> = rows.iter().map(|(c, _)| vec![0.0; c.len()]).collect();
        let mut down = up.clone();
        let mut full = vec![0.0; n];
        let mut prod = vec![0.0; n];
        for group in order.chunk_by(|&a, &b| counts[a] == counts[b]) {
            let count = counts[group[0]];
            let s = (count.max(1) as f64).powf(-self.alpha);
            let bounded = |bound: &[f64], ok: &dyn Fn(f64) -> bool| base.iter().zip(bound).all(|(b, x)| ok(b + s * x));
            if !bounded(&hi, &|v| v <= 700.0) {
                for &m in group {
                    out[m] = self.score(&apply_mask_dim(instance, &masks[m], d))?[item];
                }
                continue;
            }
            let complement = 2 * count > inputs.len() && bounded(&lo, &|v| v >= -600.0);
            for (f, (_, v)) in up.iter_mut().zip(&rows) {
                for (e, &w) in f.iter_mut().zip(v) {
                    *e = exp_kernel(s * w);
                }
            }
            if complement {
                full.copy_from_slice(&base_exp);
                for (f, (c, v)) in down.iter_mut().zip(&rows) {
                    for ((e, &w), &t) in f.iter_mut().zip(v).zip(c) {
                        *e = exp_kernel(-s * w);
                        full[t as usize] *= exp_kernel(s * w);
                    }
                }
            }
            for &m in group {
                let mask = &masks[m];
                if let Some(&v) = seen.get(mask) {
                    out[m] = v;
                    continue;
                }
                if complement {
                    prod.copy_from_slice(&full);
                    for j in (0..mask.len()).filter(|&j| !mask.get(j)) {
                        scale_into(&mut prod, &rows[j].0, &down[j]);
                    }
                } else {
                    prod.copy_from_slice(&base_exp);
                    for j in mask.ones() {
                        scale_into(&mut prod, &rows[j].0, &up[j]);
                    }
                }
                let v = prod[0] / (rest + lane_sum(&prod));
                seen.insert(mask, v);
                out[m] = v;
            }
        }
        Ok(out)
    }
}

fn scale_into(prod: &mut [f64], cols: &[u32], factors: &[f64]) {
    for (&t, &e) in cols.iter().zip(factors) {
        prod[t as usize] *= e;
    }
}

/// Sum with four interleaved accumulators, so the loop vectorises.
fn lane_sum(v: &[f64]) -> f64 {
    let mut lanes = [0.0; 4];
    let chunks = v.chunks_exact(4);
    let tail: f64 = chunks.remainder().iter().sum();
    for c in chunks {
        for k in 0..4 {
            lanes[k] += c[k];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `exp(x)` for `x <= 709`, branch-free so that loops over it vectorise.
/// Cody-Waite reduction `x = k ln2 + r`, `|r| <= ln2 / 2`, then a degree-13
/// Taylor polynomial; relative error stays within a few ulp. Inputs below
/// -708 flush to zero.
#[inline(always)]
fn exp_kernel(x: f64) -> f64 {
    const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
    const LN2_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76);
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const ROUND: f64 = 6_755_399_441_055_744.0;
    let xc = x.max(-708.0);
    let shifted = xc * LOG2E + ROUND;
    let k = shifted - ROUND;
    let r = (xc - k * LN2_HI) - k * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // 2^k from the integer left in the low bits of `shifted`
    let ki = (shifted.to_bits() as i64).wrapping_sub(ROUND.to_bits() as i64);
    let scale = f64::from_bits(((ki + 1023) << 52) as u64);
    let v = p * scale;
    if x < -708.0 {
        0.0
    } else {
        v
    }
}
