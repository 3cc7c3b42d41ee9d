//! Python bindings for `fedfilm`.
//!
//! Embeddings cross the boundary as lists of rows (anything sequence-like,
//! including 2-D numpy arrays), batch and label assignments as lists of
//! strings. Cell ids are generated as `cell{i}` when not supplied.

use fedfilm::federation::Submission;
use fedfilm::metrics::overall_score;
use fedfilm::synth::SynthSpec;
use fedfilm::{
    AggregationMode, CellMetadata, EmbeddingMatrix, EvalConfig, FilmAdapter, MetricSubset,
    TrainConfig,
};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: fedfilm::Error) -> PyErr {
    match e {
        fedfilm::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn default_ids(n: usize, ids: Option<Vec<String>>) -> Vec<String> {
    ids.unwrap_or_else(|| (0..n).map(|i| format!("cell{i}")).collect())
}

fn build(
    values: Vec<Vec<f64>>,
    batches: Vec<String>,
    labels: Option<Vec<String>>,
    cell_ids: Option<Vec<String>>,
) -> PyResult<(EmbeddingMatrix, CellMetadata)> {
    let ids = default_ids(values.len(), cell_ids);
    let emb = EmbeddingMatrix::from_rows(ids.clone(), &values).map_err(py_err)?;
    let meta = CellMetadata::new(ids, batches, labels).map_err(py_err)?;
    Ok((emb, meta))
}

fn rows_of(flat: &[f64], dim: usize) -> Vec<Vec<f64>> {
    flat.chunks(dim).map(<[f64]>::to_vec).collect()
}

fn parse_mode(mode: &str) -> PyResult<AggregationMode> {
    mode.parse().map_err(py_err)
}

/// Per-batch FiLM tables: `z' = gamma[b] * z + beta[b]`.
#[pyclass(
    name = "FilmAdapter",
    module = "fedfilm_py",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
pub struct PyAdapter {
    inner: FilmAdapter,
}

#[pymethods]
impl PyAdapter {
    #[new]
    #[pyo3(signature = (batch_names, gamma, beta, frozen = None))]
    fn new(
        batch_names: Vec<String>,
        gamma: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
        frozen: Option<Vec<bool>>,
    ) -> PyResult<Self> {
        let dim = gamma.first().map_or(0, Vec::len);
        if gamma.iter().chain(&beta).any(|r| r.len() != dim) {
            return Err(PyValueError::new_err(
                "gamma and beta rows must share one length",
            ));
        }
        let frozen = frozen.unwrap_or_else(|| vec![false; batch_names.len()]);
        let inner = FilmAdapter::new(batch_names, dim, gamma.concat(), beta.concat(), frozen)
            .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Ones for every scale, zeros for every shift.
    #[staticmethod]
    fn identity(batch_names: Vec<String>, dim: usize) -> PyResult<Self> {
        let inner = FilmAdapter::identity(&batch_names, dim).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = fedfilm::io::adapter_from_str(text, "<string>").map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = fedfilm::io::load_adapter(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        fedfilm::io::adapter_to_string(&self.inner)
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        fedfilm::io::save_adapter(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn batch_names(&self) -> Vec<String> {
        self.inner.batch_names().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn gamma(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.gamma(), self.inner.dim())
    }

    #[getter]
    fn beta(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.beta(), self.inner.dim())
    }

    #[getter]
    fn frozen(&self) -> Vec<bool> {
        self.inner.frozen().to_vec()
    }

    /// Copy with every row frozen.
    fn frozen_copy(&self) -> Self {
        let mut inner = self.inner.clone();
        inner.freeze_all();
        Self { inner }
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!(
            "FilmAdapter(batches={:?}, dim={}, frozen={:?})",
            self.inner.batch_names(),
            self.inner.dim(),
            self.inner.frozen()
        )
    }
}

/// Applies `adapter` to each row according to its batch.
#[pyfunction]
#[pyo3(signature = (values, batches, adapter))]
fn apply(
    values: Vec<Vec<f64>>,
    batches: Vec<String>,
    adapter: &PyAdapter,
) -> PyResult<Vec<Vec<f64>>> {
    let (emb, meta) = build(values, batches, None, None)?;
    let out = fedfilm::apply_adapter(&emb, &meta, &adapter.inner).map_err(py_err)?;
    Ok(out.to_rows())
}

/// Trains an adapter; returns `(adapter, log)` where `log` holds one dict
/// per round and client.
#[pyfunction]
#[pyo3(signature = (
    values, batches, *, init = None, mu = None, lambda_ = None, learning_rate = None,
    local_epochs = None, rounds = None, minibatch_size = None, train_fraction = None,
    seed = None, aggregation_mode = None
))]
#[allow(clippy::too_many_arguments)]
fn fit<'py>(
    py: Python<'py>,
    values: Vec<Vec<f64>>,
    batches: Vec<String>,
    init: Option<&PyAdapter>,
    mu: Option<f64>,
    lambda_: Option<f64>,
    learning_rate: Option<f64>,
    local_epochs: Option<usize>,
    rounds: Option<usize>,
    minibatch_size: Option<usize>,
    train_fraction: Option<f64>,
    seed: Option<u64>,
    aggregation_mode: Option<&str>,
) -> PyResult<(PyAdapter, Vec<Bound<'py, PyDict>>)> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        mu: mu.unwrap_or(d.mu),
        lambda: lambda_.unwrap_or(d.lambda),
        learning_rate: learning_rate.unwrap_or(d.learning_rate),
        local_epochs: local_epochs.unwrap_or(d.local_epochs),
        rounds: rounds.unwrap_or(d.rounds),
        minibatch_size: minibatch_size.unwrap_or(d.minibatch_size),
        train_fraction: train_fraction.unwrap_or(d.train_fraction),
        seed: seed.unwrap_or(d.seed),
        aggregation_mode: aggregation_mode
            .map(parse_mode)
            .transpose()?
            .unwrap_or(d.aggregation_mode),
        ..d
    };
    let (emb, meta) = build(values, batches, None, None)?;
    let init = match init {
        Some(a) => a.inner.clone(),
        None => FilmAdapter::identity(meta.batch_names(), emb.dim()).map_err(py_err)?,
    };
    let outcome = py
        .detach(|| fedfilm::run_federated_fit(&emb, &meta, &cfg, init))
        .map_err(py_err)?;
    let mut log = Vec::new();
    for rec in outcome.log.records() {
        let row = PyDict::new(py);
        row.set_item("round", rec.round)?;
        row.set_item("client", &rec.client)?;
        row.set_item("train_loss", rec.train_loss)?;
        row.set_item("validation_loss", rec.validation_loss)?;
        log.push(row);
    }
    Ok((
        PyAdapter {
            inner: outcome.adapter,
        },
        log,
    ))
}

/// Scores an embedding; returns the report as a dict (absent metrics are `None`).
#[pyfunction]
#[pyo3(signature = (values, batches, labels, *, subset = "full", knn_k = 15, kmeans_restarts = None, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    values: Vec<Vec<f64>>,
    batches: Vec<String>,
    labels: Vec<String>,
    subset: &str,
    knn_k: usize,
    kmeans_restarts: Option<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let d = EvalConfig::default();
    let cfg = EvalConfig {
        subset: subset.parse::<MetricSubset>().map_err(py_err)?,
        knn_k,
        kmeans_restarts: kmeans_restarts.unwrap_or(d.kmeans_restarts),
        seed,
        ..d
    };
    let (emb, meta) = build(values, batches, Some(labels), None)?;
    let report = py
        .detach(|| fedfilm::evaluate(&emb, &meta, &cfg))
        .map_err(py_err)?;
    let json = py.import("json")?;
    json.call_method1("loads", (report.to_json(),))
}

/// Overall score from biological conservation and batch correction sub-scores.
#[pyfunction]
fn overall(bio: f64, batch: f64) -> f64 {
    overall_score(bio, batch)
}

/// Seeded synthetic embedding. Returns a dict with `values`, `batches`,
/// `labels`, `cell_ids` and the inverse of the applied batch effects as
/// `true_inverse`.
#[pyfunction]
#[pyo3(signature = (
    *, n_batches = None, n_types = None, dim = None, cells_per_batch = None,
    noise_sigma = None, effect_shift_sigma = None, scale_range = None, seed = None
))]
#[allow(clippy::too_many_arguments)]
fn synth<'py>(
    py: Python<'py>,
    n_batches: Option<usize>,
    n_types: Option<usize>,
    dim: Option<usize>,
    cells_per_batch: Option<usize>,
    noise_sigma: Option<f64>,
    effect_shift_sigma: Option<f64>,
    scale_range: Option<(f64, f64)>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = SynthSpec::default();
    let spec = SynthSpec {
        n_batches: n_batches.unwrap_or(d.n_batches),
        n_types: n_types.unwrap_or(d.n_types),
        dim: dim.unwrap_or(d.dim),
        cells_per_batch: cells_per_batch.unwrap_or(d.cells_per_batch),
        noise_sigma: noise_sigma.unwrap_or(d.noise_sigma),
        effect_shift_sigma: effect_shift_sigma.unwrap_or(d.effect_shift_sigma),
        effect_scale_range: scale_range.unwrap_or(d.effect_scale_range),
        seed: seed.unwrap_or(d.seed),
        ..d
    };
    let data = fedfilm::synth::generate(&spec).map_err(py_err)?;
    let meta = &data.metadata;
    let out = PyDict::new(py);
    out.set_item("values", data.embedding.to_rows())?;
    out.set_item("cell_ids", meta.cell_ids().to_vec())?;
    out.set_item(
        "batches",
        (0..meta.n_cells())
            .map(|i| meta.batch_of(i).to_string())
            .collect::<Vec<_>>(),
    )?;
    out.set_item(
        "labels",
        (0..meta.n_cells())
            .map(|i| meta.label_of(i).map(str::to_string))
            .collect::<Vec<_>>(),
    )?;
    let inverse = data.truth.inverse_adapter().map_err(py_err)?;
    out.set_item("true_inverse", PyAdapter { inner: inverse })?;
    Ok(out)
}

/// Merges client tables into the next global adapter. `owners` gives the
/// row each client owns and is required in row-restricted mode.
#[pyfunction]
#[pyo3(signature = (round_start, tables, weights, *, mode = "full-table", owners = None))]
fn aggregate(
    round_start: &PyAdapter,
    tables: Vec<PyRef<'_, PyAdapter>>,
    weights: Vec<usize>,
    mode: &str,
    owners: Option<Vec<usize>>,
) -> PyResult<PyAdapter> {
    if tables.len() != weights.len() || owners.as_ref().is_some_and(|o| o.len() != tables.len()) {
        return Err(PyValueError::new_err(
            "tables, weights and owners must have equal length",
        ));
    }
    let submissions: Vec<Submission<'_>> = tables
        .iter()
        .enumerate()
        .map(|(i, t)| Submission {
            table: &t.inner,
            weight: weights[i],
            owner_row: owners.as_ref().map(|o| o[i]),
        })
        .collect();
    let inner =
        fedfilm::aggregate(&round_start.inner, &submissions, parse_mode(mode)?).map_err(py_err)?;
    Ok(PyAdapter { inner })
}

/// Reads an embedding table and its metadata; returns
/// `(cell_ids, values, batches, labels)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn load_embeddings(
    embeddings: std::path::PathBuf,
    metadata: std::path::PathBuf,
) -> PyResult<(Vec<String>, Vec<Vec<f64>>, Vec<String>, Option<Vec<String>>)> {
    let (emb, meta) = fedfilm::io::load_embeddings(&embeddings, &metadata).map_err(py_err)?;
    let n = meta.n_cells();
    let batches = (0..n).map(|i| meta.batch_of(i).to_string()).collect();
    let labels = meta.has_labels().then(|| {
        (0..n)
            .map(|i| meta.label_of(i).unwrap_or_default().to_string())
            .collect()
    });
    Ok((emb.cell_ids().to_vec(), emb.to_rows(), batches, labels))
}

#[pymodule]
fn fedfilm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAdapter>()?;
    m.add_function(wrap_pyfunction!(apply, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(overall, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(load_embeddings, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
