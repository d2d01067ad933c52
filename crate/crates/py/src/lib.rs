//! Python bindings. The module mirrors the library's main operations:
//! cost-model arithmetic, embeddings and clustering, dataset generation
//! and I/O, seeded experiment runs, and the invariant suite. Structured
//! results cross the boundary as plain dicts so Python callers need no
//! wrapper types beyond `TokenBudget`.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use semmatch_core::backend::{parse_backend_spec, BackendPool};
use semmatch_core::costmodel;
use semmatch_core::embedding::{EmbeddingProvider, HashedTfEmbedder, Vector};
use semmatch_core::harness::{dataset, experiment, invariants};
use semmatch_core::metrics;
use semmatch_core::model;
use semmatch_core::router::{Assignment, Preset};
use semmatch_core::{clustering, Error};

fn err(e: Error) -> PyErr {
    match &e {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::BatchInfeasible => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Token budget for one backend call window.
#[pyclass(frozen)]
#[derive(Clone)]
struct TokenBudget {
    inner: model::TokenBudget,
}

#[pymethods]
impl TokenBudget {
    #[new]
    #[pyo3(signature = (window=128_000, t_inst=200, t_s=80, t_e=50, t_resp=500))]
    fn new(window: u64, t_inst: u64, t_s: u64, t_e: u64, t_resp: u64) -> PyResult<Self> {
        Ok(Self { inner: model::TokenBudget::new(window, t_inst, t_s, t_e, t_resp).map_err(err)? })
    }

    #[getter]
    fn window(&self) -> u64 {
        self.inner.window
    }

    fn batch_capacity(&self, n_subs: u64) -> PyResult<u64> {
        costmodel::batch_capacity(&self.inner, n_subs).map_err(err)
    }

    fn batch_gain(&self, n_subs: u64, rho: f64) -> PyResult<u64> {
        costmodel::batch_gain(&self.inner, n_subs, rho).map_err(err)
    }

    fn invocations(&self, n_subs: u64, events: u64) -> PyResult<u64> {
        costmodel::invocations_for_cluster(&self.inner, n_subs, events).map_err(err)
    }

    fn truncation_onset(&self) -> u64 {
        costmodel::truncation_onset(&self.inner)
    }

    fn cross_cluster_window(&self, n_subs: u64, rho: f64, k: u64) -> PyResult<f64> {
        costmodel::cross_cluster_window(&self.inner, n_subs, rho, k).map_err(err)
    }

    fn __repr__(&self) -> String {
        let b = &self.inner;
        format!(
            "TokenBudget(window={}, t_inst={}, t_s={}, t_e={}, t_resp={})",
            b.window, b.t_inst, b.t_s, b.t_e, b.t_resp
        )
    }
}

/// Full analytic cost prediction for a uniform scenario, as a dict.
#[pyfunction]
#[pyo3(signature = (budget, clusters, subs_per_cluster, events, rho=None, parallel=4, t_llm=1.5))]
#[allow(clippy::too_many_arguments)]
fn predict_cost<'py>(
    py: Python<'py>,
    budget: &TokenBudget,
    clusters: u64,
    subs_per_cluster: u64,
    events: u64,
    rho: Option<f64>,
    parallel: u64,
    t_llm: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let p = costmodel::predict(&costmodel::CostScenario {
        budget: budget.inner,
        clusters,
        subs_per_cluster,
        events,
        rho,
        parallel,
        t_llm,
        pricing: costmodel::Pricing::default(),
    })
    .map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("effective_subs", p.effective_subs)?;
    out.set_item("b_max", p.b_max)?;
    out.set_item("delta_b", p.delta_b)?;
    out.set_item("invocations_per_cluster", p.invocations_per_cluster)?;
    out.set_item("invocations", p.invocations)?;
    out.set_item("rounds", p.rounds)?;
    out.set_item("latency_s", p.latency_seconds)?;
    out.set_item("prompt_tokens", p.prompt_tokens)?;
    out.set_item("response_tokens", p.response_tokens)?;
    out.set_item("cost_per_event", p.cost_per_event)?;
    Ok(out)
}

/// Deterministic hashed term-frequency embedding of a text.
#[pyfunction]
fn embed(text: &str) -> PyResult<Vec<f64>> {
    let provider = HashedTfEmbedder::default();
    Ok(provider.embed(text).map_err(err)?.0)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    semmatch_core::embedding::cosine(&Vector(a), &Vector(b)).map_err(err)
}

/// K-means over row vectors; returns {assignments, iterations, wcss}.
#[pyfunction]
#[pyo3(signature = (points, k, seed=42))]
fn kmeans<'py>(
    py: Python<'py>,
    points: Vec<Vec<f64>>,
    k: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let vectors: Vec<Vector> = points.into_iter().map(Vector).collect();
    let c = clustering::kmeans(&vectors, &clustering::KMeansConfig::new(k, seed)).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("assignments", c.assignments)?;
    out.set_item("iterations", c.iterations)?;
    out.set_item("wcss", c.wcss)?;
    Ok(out)
}

/// Per-event precision/recall/F1 on raw subscription IDs.
#[pyfunction]
fn score_id(predicted: Vec<String>, truth: Vec<String>) -> (f64, f64, f64) {
    let p = predicted.into_iter().collect();
    let g = truth.into_iter().collect();
    let s = metrics::score_event_id(&p, &g);
    (s.precision, s.recall, s.f1)
}

/// Writes a synthetic JSONL dataset; returns (n_subscriptions, n_events).
#[pyfunction]
#[pyo3(signature = (path, subs=19, events=1000, distinct=None, seed=42, duplicate_to=None))]
fn generate_dataset(
    path: PathBuf,
    subs: usize,
    events: usize,
    distinct: Option<usize>,
    seed: u64,
    duplicate_to: Option<usize>,
) -> PyResult<(usize, usize)> {
    let (mut set, evts) = dataset::synthetic_dataset(&dataset::SyntheticSpec {
        n_subscriptions: subs,
        n_events: events,
        distinct_descriptions: distinct,
        seed,
    })
    .map_err(err)?;
    if let Some(target) = duplicate_to {
        set = dataset::duplicate_with_rename(&set, target).map_err(err)?;
    }
    dataset::save_dataset(&path, &set, &evts).map_err(err)?;
    Ok((set.len(), evts.len()))
}

/// Loads a JSONL dataset as (subscriptions, events) dict lists.
#[pyfunction]
fn load_dataset<'py>(
    py: Python<'py>,
    path: PathBuf,
) -> PyResult<(Bound<'py, PyList>, Bound<'py, PyList>)> {
    let (subs, events) = dataset::load_dataset(&path).map_err(err)?;
    let sub_list = PyList::empty_bound(py);
    for s in subs.iter() {
        let d = PyDict::new_bound(py);
        d.set_item("id", &s.id)?;
        d.set_item("description", &s.description)?;
        d.set_item("subscribers", s.subscribers.iter().collect::<Vec<_>>())?;
        d.set_item("merged_from", &s.merged_from)?;
        sub_list.append(d)?;
    }
    let event_list = PyList::empty_bound(py);
    for e in &events {
        let d = PyDict::new_bound(py);
        d.set_item("id", &e.id)?;
        d.set_item("text", &e.text)?;
        d.set_item("ground_truth", e.ground_truth.iter().collect::<Vec<_>>())?;
        event_list.append(d)?;
    }
    Ok((sub_list, event_list))
}

/// Runs a seeded experiment over a dataset file and returns the result
/// table as a list of dicts (same columns as the CSV).
#[pyfunction]
#[pyo3(signature = (
    dataset_path, preset="A3", backends=vec!["sim:oracle".to_string()], seeds=vec![42],
    k=None, tau=None, kappa=None, window=None, parallel=None, truncate=false
))]
#[allow(clippy::too_many_arguments)]
fn run_experiment<'py>(
    py: Python<'py>,
    dataset_path: PathBuf,
    preset: &str,
    backends: Vec<String>,
    seeds: Vec<u64>,
    k: Option<usize>,
    tau: Option<f64>,
    kappa: Option<usize>,
    window: Option<u64>,
    parallel: Option<usize>,
    truncate: bool,
) -> PyResult<Bound<'py, PyList>> {
    let preset = Preset::from_str(preset).map_err(err)?;
    let (subs, events) = dataset::load_dataset(&dataset_path).map_err(err)?;
    let mut pool = BackendPool::new();
    let mut names = Vec::new();
    for spec in &backends {
        let backend = parse_backend_spec(spec).map_err(err)?;
        names.push(backend.name().to_string());
        pool.insert(backend.name().to_string(), backend);
    }
    if names.is_empty() {
        return Err(PyValueError::new_err("need at least one backend"));
    }
    let assignment = Assignment::Uniform(names[0].clone());
    let provider = HashedTfEmbedder::default();

    let mut run = experiment::RunConfig::new(preset, seeds);
    run.k = k;
    run.tau = tau;
    run.kappa = kappa;
    if let Some(w) = window {
        let d = model::TokenBudget::default();
        run.budget =
            Some(model::TokenBudget::new(w, d.t_inst, d.t_s, d.t_e, d.t_resp).map_err(err)?);
    }
    run.parallel = parallel;
    run.truncate_to_fit = truncate;

    let out = experiment::run_experiment(&subs, &events, &run, &provider, &assignment, &pool)
        .map_err(err)?;
    let rows = PyList::empty_bound(py);
    for r in &out.rows {
        let d = PyDict::new_bound(py);
        d.set_item("preset", &r.preset)?;
        d.set_item("seed", &r.seed)?;
        d.set_item("variant", &r.variant)?;
        d.set_item("precision", r.precision)?;
        d.set_item("recall", r.recall)?;
        d.set_item("f1", r.f1)?;
        d.set_item("fpr", r.fpr)?;
        d.set_item("invocations", r.invocations)?;
        d.set_item("rho", r.rho)?;
        d.set_item("latency_s", r.latency_s)?;
        d.set_item("prompt_tokens", r.prompt_tokens)?;
        d.set_item("response_tokens", r.response_tokens)?;
        d.set_item("cost_per_event", r.cost_per_event)?;
        rows.append(d)?;
    }
    Ok(rows)
}

/// Runs the invariant suite; returns a list of {name, passed, details}.
#[pyfunction]
#[pyo3(signature = (control=None))]
fn run_invariants<'py>(py: Python<'py>, control: Option<usize>) -> PyResult<Bound<'py, PyList>> {
    let outcomes = invariants::run_invariants(control).map_err(err)?;
    let rows = PyList::empty_bound(py);
    for o in &outcomes {
        let d = PyDict::new_bound(py);
        d.set_item("name", &o.name)?;
        d.set_item("passed", o.passed)?;
        d.set_item("details", &o.details)?;
        rows.append(d)?;
    }
    Ok(rows)
}

#[pymodule]
fn semmatch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TokenBudget>()?;
    m.add_function(wrap_pyfunction!(predict_cost, m)?)?;
    m.add_function(wrap_pyfunction!(embed, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(score_id, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_invariants, m)?)?;
    Ok(())
}
