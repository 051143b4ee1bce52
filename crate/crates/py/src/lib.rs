//! Python bindings: synthetic data, the co-occurrence model, the three
//! explainers, exact Shapley values, the constrained solvers and the
//! bootstrap bias-variance estimate.

use std::path::PathBuf;

use climb_core::eval::{bias_variance as bv, BootstrapConfig};
use climb_core::recmodel::{
    fit_cooc, generate_synthetic, ingest_interactions, rank_of, top_recommendation, CoocParams, SyntheticConfig,
    DEFAULT_RATING_THRESHOLD,
};
use climb_core::solver::{solve_completeness_constrained, solve_kkt_oracle};
use climb_core::{
    derive_seed as core_derive_seed, exact_shapley as core_exact_shapley, explain as core_explain, CoocModel,
    ExplainConfig, Explanation, Instance, InteractionDataset, Mask, Method, ScoringModel, SparseBinary,
};
use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: climb_core::Error) -> PyErr {
    use climb_core::Error as E;
    match e {
        E::InvalidInput(_) | E::Dimension { .. } | E::Config(_) | E::DegenerateInstance { .. } | E::Skip(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn method(name: &str) -> PyResult<Method> {
    name.parse().map_err(to_py)
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset {
    inner: InteractionDataset,
}

#[pymethods]
impl PyDataset {
    /// Zipf-popularity baskets with planted item blocks.
    #[staticmethod]
    #[pyo3(signature = (n_users = 1000, n_items = 2000, zipf = 1.1, mean_basket = 20.0, seed = 7))]
    fn synthetic(n_users: usize, n_items: usize, zipf: f64, mean_basket: f64, seed: u64) -> PyResult<Self> {
        let cfg = SyntheticConfig::new(n_users, n_items, zipf, mean_basket, seed);
        Ok(PyDataset { inner: generate_synthetic(&cfg).map_err(to_py)? })
    }

    #[staticmethod]
    #[pyo3(signature = (path, threshold = DEFAULT_RATING_THRESHOLD))]
    fn from_csv(path: PathBuf, threshold: f64) -> PyResult<Self> {
        let (inner, _) = ingest_interactions(&path, threshold).map_err(to_py)?;
        Ok(PyDataset { inner })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path, &[]).map_err(to_py)
    }

    #[getter]
    fn user_count(&self) -> usize {
        self.inner.user_count()
    }

    #[getter]
    fn item_count(&self) -> usize {
        self.inner.item_count()
    }

    fn user_ids(&self) -> Vec<String> {
        self.inner.users().iter().map(|u| u.user_id().to_owned()).collect()
    }

    /// Item indices of one user.
    fn user_items(&self, user_id: &str) -> PyResult<Vec<usize>> {
        self.inner
            .find_user(user_id)
            .map(|(_, u)| u.active_items().to_vec())
            .ok_or_else(|| PyKeyError::new_err(user_id.to_owned()))
    }

    fn __len__(&self) -> usize {
        self.inner.user_count()
    }
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: CoocModel,
}

impl PyModel {
    fn instance(&self, items: Vec<usize>, user_id: &str) -> PyResult<Instance> {
        Instance::from_unsorted(user_id, items, self.inner.item_count()).map_err(to_py)
    }

    fn instance_vector(&self, items: Vec<usize>) -> PyResult<SparseBinary> {
        SparseBinary::new(self.inner.item_count(), items).map_err(to_py)
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (dataset, shrinkage = 10.0, tau = 1.0, alpha = 0.75))]
    fn fit(dataset: &PyDataset, shrinkage: f64, tau: f64, alpha: f64) -> PyResult<Self> {
        let params = CoocParams { shrinkage, tau, alpha };
        Ok(PyModel { inner: fit_cooc(&dataset.inner, params).map_err(to_py)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel { inner: CoocModel::load(&path).map_err(to_py)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path, None).map_err(to_py)
    }

    #[getter]
    fn item_count(&self) -> usize {
        self.inner.item_count()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.catalog().labels().to_vec()
    }

    /// Softmax scores of every item given the active item indices.
    fn score(&self, items: Vec<usize>) -> PyResult<Vec<f64>> {
        let x = self.instance_vector(items)?;
        self.inner.score(&x).map_err(to_py)
    }

    /// 1-based rank of `target` over the full catalog.
    fn rank(&self, items: Vec<usize>, target: usize) -> PyResult<usize> {
        let x = self.instance_vector(items)?;
        rank_of(&self.inner, &x, target).map_err(to_py)
    }

    /// Best-scoring item outside `items`.
    fn top_recommendation(&self, items: Vec<usize>) -> PyResult<usize> {
        let inst = self.instance(items, "user")?;
        top_recommendation(&self.inner, &inst).map_err(to_py)
    }
}

fn explanation_dict<'py>(py: Python<'py>, e: &Explanation) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", e.method().name())?;
    d.set_item("user_id", e.user_id())?;
    d.set_item("target_item", e.target_item())?;
    d.set_item("items", e.item_indices().to_vec())?;
    d.set_item("coefficients", e.coefficients().to_vec())?;
    d.set_item("intercept", e.intercept())?;
    d.set_item("fx", e.fx())?;
    d.set_item("fbaseline", e.fbaseline())?;
    d.set_item("degenerate", e.is_degenerate())?;
    d.set_item("completeness_residual", e.completeness_residual())?;
    Ok(d)
}

/// Explains `model`'s score of `target` for the user holding `items` with
/// `method` in {"lime", "shap", "climb"}.
#[pyfunction]
#[pyo3(signature = (model, items, target, method_name, n_samples = 5000, seed = 0, user_id = "user"))]
#[allow(clippy::too_many_arguments)]
fn explain<'py>(
    py: Python<'py>,
    model: &PyModel,
    items: Vec<usize>,
    target: usize,
    method_name: &str,
    n_samples: usize,
    seed: u64,
    user_id: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let m = method(method_name)?;
    let inst = model.instance(items, user_id)?;
    let cfg = ExplainConfig::with_samples(n_samples);
    let e = py.detach(|| core_explain(&model.inner, &inst, target, m, &cfg, seed)).map_err(to_py)?;
    explanation_dict(py, &e)
}

/// Shapley values by full subset enumeration (d' <= 20).
#[pyfunction]
fn exact_shapley(py: Python<'_>, model: &PyModel, items: Vec<usize>, target: usize) -> PyResult<Vec<f64>> {
    let inst = model.instance(items, "user")?;
    py.detach(|| core_exact_shapley(&model.inner, &inst, target)).map_err(to_py)
}

#[pyfunction]
fn shap_kernel(d_prime: usize, subset_size: usize) -> PyResult<f64> {
    climb_core::perturb::shap_kernel(d_prime, subset_size).map_err(to_py)
}

#[pyfunction]
fn derive_seed(master_seed: u64, stream_label: &str, index: u64) -> u64 {
    core_derive_seed(master_seed, stream_label, index)
}

fn masks_of(rows: Vec<Vec<bool>>) -> Vec<Mask> {
    rows.into_iter().map(Mask::new).collect()
}

/// Weighted least squares subject to `sum(phi) = fx - fb`, by eliminating
/// the last coefficient.
#[pyfunction]
fn solve_constrained(
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    labels: Vec<f64>,
    fx: f64,
    fb: f64,
    d_prime: usize,
) -> PyResult<Vec<f64>> {
    solve_completeness_constrained(&masks_of(masks), &weights, &labels, fx, fb, d_prime).map_err(to_py)
}

/// The same problem through its KKT system.
#[pyfunction]
fn solve_kkt(
    masks: Vec<Vec<bool>>,
    weights: Vec<f64>,
    labels: Vec<f64>,
    fx: f64,
    fb: f64,
    d_prime: usize,
) -> PyResult<Vec<f64>> {
    solve_kkt_oracle(&masks_of(masks), &weights, &labels, fx, fb, d_prime).map_err(to_py)
}

/// Bootstrap bias-variance of one method on one user.
#[pyfunction]
#[pyo3(signature = (model, items, target, method_name, bootstraps = 50, rho = 0.1, n_samples = 5000, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn bias_variance<'py>(
    py: Python<'py>,
    model: &PyModel,
    items: Vec<usize>,
    target: usize,
    method_name: &str,
    bootstraps: usize,
    rho: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let m = method(method_name)?;
    let inst = model.instance(items, "user")?;
    let cfg = ExplainConfig::with_samples(n_samples);
    let boot = BootstrapConfig { count: bootstraps, drop_prob: rho };
    let r = py.detach(|| bv(&model.inner, &inst, target, m, &cfg, &boot, seed)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("bias_sq", r.bias_sq)?;
    d.set_item("variance", r.variance)?;
    d.set_item("mse", r.mse)?;
    d.set_item("fx", r.fx)?;
    d.set_item("fitted", r.fitted)?;
    Ok(d)
}

#[pymodule]
fn climb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(exact_shapley, m)?)?;
    m.add_function(wrap_pyfunction!(shap_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(solve_constrained, m)?)?;
    m.add_function(wrap_pyfunction!(solve_kkt, m)?)?;
    m.add_function(wrap_pyfunction!(bias_variance, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
