//! File formats: embedding/metadata tables, adapter documents, run config.
//!
//! Tables are comma-separated UTF-8 with `\n` line endings and no quoting.
//! Cell ids are restricted to `[A-Za-z0-9_.-]`. Numbers are written with
//! shortest round-trip formatting, so a save/load cycle is bit-exact.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{CellMetadata, EmbeddingMatrix, FilmAdapter};
use crate::error::{Error, Result};
use crate::federation::AggregationMode;
use crate::metrics::{EvalConfig, MetricSubset};
use crate::objective::TrainConfig;
use crate::scenario::ScenarioPlan;
use crate::synth::{GroundTruth, SynthSpec};

pub const ADAPTER_FORMAT: &str = "film-adapter";
pub const ADAPTER_VERSION: u32 = 1;

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

/// Non-empty lines with 1-based numbers; a single trailing newline is fine.
fn lines<'a>(text: &'a str, source: &str) -> Result<Vec<(usize, &'a str)>> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    if body.is_empty() {
        return Err(Error::Parse {
            path: source.into(),
            line: 1,
            msg: "file is empty".into(),
        });
    }
    body.split('\n')
        .enumerate()
        .map(|(i, line)| {
            if line.contains('\r') {
                return Err(Error::Parse {
                    path: source.into(),
                    line: i + 1,
                    msg: "carriage return in line (expected \\n line endings)".into(),
                });
            }
            if line.contains('"') {
                return Err(Error::Parse {
                    path: source.into(),
                    line: i + 1,
                    msg: "quoted fields are not supported".into(),
                });
            }
            Ok((i + 1, line))
        })
        .collect()
}

fn parse_error(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.into(),
        line,
        msg: msg.into(),
    }
}

/// Parses an embedding table: header `cell_id,<dim names...>`.
pub fn parse_embeddings(text: &str, source: &str) -> Result<EmbeddingMatrix> {
    let lines = lines(text, source)?;
    let (_, header) = lines[0];
    let columns: Vec<&str> = header.split(',').collect();
    if columns[0] != "cell_id" {
        return Err(parse_error(source, 1, "first column must be 'cell_id'"));
    }
    let dim = columns.len() - 1;
    if dim == 0 {
        return Err(parse_error(source, 1, "no coordinate columns"));
    }
    let mut ids = Vec::with_capacity(lines.len() - 1);
    let mut values = Vec::with_capacity((lines.len() - 1) * dim);
    let mut seen = std::collections::HashSet::new();
    for &(no, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(parse_error(
                source,
                no,
                format!("expected {} fields, found {}", columns.len(), fields.len()),
            ));
        }
        let id = fields[0];
        if !valid_id(id) {
            return Err(parse_error(source, no, format!("invalid cell id '{id}'")));
        }
        if !seen.insert(id) {
            return Err(parse_error(source, no, format!("duplicate cell id '{id}'")));
        }
        for (col, field) in fields[1..].iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_error(
                    source,
                    no,
                    format!(
                        "non-numeric value '{field}' in column '{}'",
                        columns[col + 1]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(parse_error(
                    source,
                    no,
                    format!("non-finite value '{field}'"),
                ));
            }
            values.push(v);
        }
        ids.push(id.to_string());
    }
    if ids.is_empty() {
        return Err(parse_error(source, 1, "no data rows"));
    }
    EmbeddingMatrix::new(ids, values, dim)
}

/// Parses a metadata table: header `cell_id,batch` or `cell_id,batch,cell_type`.
pub fn parse_metadata(text: &str, source: &str) -> Result<CellMetadata> {
    let lines = lines(text, source)?;
    let has_labels = match lines[0].1 {
        "cell_id,batch" => false,
        "cell_id,batch,cell_type" => true,
        other => {
            return Err(parse_error(
                source,
                1,
                format!("header must be 'cell_id,batch[,cell_type]', found '{other}'"),
            ))
        }
    };
    let width = if has_labels { 3 } else { 2 };
    let mut ids = Vec::new();
    let mut batches = Vec::new();
    let mut labels = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for &(no, line) in &lines[1..] {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(parse_error(
                source,
                no,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        if !valid_id(fields[0]) {
            return Err(parse_error(
                source,
                no,
                format!("invalid cell id '{}'", fields[0]),
            ));
        }
        if !seen.insert(fields[0]) {
            return Err(parse_error(
                source,
                no,
                format!("duplicate cell id '{}'", fields[0]),
            ));
        }
        if fields[1].is_empty() {
            return Err(parse_error(source, no, "empty batch name"));
        }
        if has_labels && fields[2].is_empty() {
            return Err(parse_error(source, no, "missing cell_type"));
        }
        ids.push(fields[0].to_string());
        batches.push(fields[1].to_string());
        if has_labels {
            labels.push(fields[2].to_string());
        }
    }
    if ids.is_empty() {
        return Err(parse_error(source, 1, "no data rows"));
    }
    CellMetadata::new(ids, batches, has_labels.then_some(labels))
}

/// Loads both tables and aligns metadata to the embedding's row order.
pub fn load_embeddings(matrix: &Path, metadata: &Path) -> Result<(EmbeddingMatrix, CellMetadata)> {
    let emb = parse_embeddings(&read_text(matrix)?, &matrix.display().to_string())?;
    let meta = parse_metadata(&read_text(metadata)?, &metadata.display().to_string())?;
    let aligned = meta.aligned_to(&emb).map_err(|e| Error::Format {
        path: metadata.display().to_string(),
        msg: e.to_string(),
    })?;
    Ok((emb, aligned))
}

pub fn format_embeddings(emb: &EmbeddingMatrix, column_prefix: &str) -> String {
    let mut out = String::from("cell_id");
    for j in 0..emb.dim() {
        write!(out, ",{column_prefix}{}", j + 1).unwrap();
    }
    out.push('\n');
    for (id, row) in emb.cell_ids().iter().zip(emb.rows()) {
        out.push_str(id);
        for v in row {
            write!(out, ",{v:?}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_embeddings(path: &Path, emb: &EmbeddingMatrix, column_prefix: &str) -> Result<()> {
    write_text(path, &format_embeddings(emb, column_prefix))
}

pub fn format_metadata(meta: &CellMetadata) -> String {
    let mut out = String::from(if meta.has_labels() {
        "cell_id,batch,cell_type\n"
    } else {
        "cell_id,batch\n"
    });
    for i in 0..meta.n_cells() {
        out.push_str(&meta.cell_ids()[i]);
        out.push(',');
        out.push_str(meta.batch_of(i));
        if let Some(l) = meta.label_of(i) {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdapterDocument {
    format: String,
    version: u32,
    dim: usize,
    batches: Vec<String>,
    frozen: Vec<bool>,
    gamma: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

pub fn adapter_to_string(adapter: &FilmAdapter) -> String {
    let rows = |table: &[f64]| -> Vec<Vec<f64>> {
        table
            .chunks_exact(adapter.dim())
            .map(<[f64]>::to_vec)
            .collect()
    };
    let doc = AdapterDocument {
        format: ADAPTER_FORMAT.into(),
        version: ADAPTER_VERSION,
        dim: adapter.dim(),
        batches: adapter.batch_names().to_vec(),
        frozen: adapter.frozen().to_vec(),
        gamma: rows(adapter.gamma()),
        beta: rows(adapter.beta()),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("adapter serializes");
    s.push('\n');
    s
}

pub fn adapter_from_str(text: &str, source: &str) -> Result<FilmAdapter> {
    let fail = |msg: String| Error::Format {
        path: source.into(),
        msg,
    };
    let doc: AdapterDocument =
        serde_json::from_str(text).map_err(|e| fail(format!("malformed adapter document: {e}")))?;
    if doc.format != ADAPTER_FORMAT {
        return Err(fail(format!("unexpected format tag '{}'", doc.format)));
    }
    if doc.version != ADAPTER_VERSION {
        return Err(fail(format!(
            "unsupported adapter version {} (expected {ADAPTER_VERSION})",
            doc.version
        )));
    }
    let b = doc.batches.len();
    if doc.gamma.len() != b || doc.beta.len() != b || doc.frozen.len() != b {
        return Err(fail(format!("tables do not have one row per batch ({b})")));
    }
    if doc
        .gamma
        .iter()
        .chain(&doc.beta)
        .any(|r| r.len() != doc.dim)
    {
        return Err(fail(format!("rows must have length {}", doc.dim)));
    }
    FilmAdapter::new(
        doc.batches,
        doc.dim,
        doc.gamma.concat(),
        doc.beta.concat(),
        doc.frozen,
    )
    .map_err(|e| fail(e.to_string()))
}

pub fn save_adapter(path: &Path, adapter: &FilmAdapter) -> Result<()> {
    write_text(path, &adapter_to_string(adapter))
}

pub fn load_adapter(path: &Path) -> Result<FilmAdapter> {
    adapter_from_str(&read_text(path)?, &path.display().to_string())
}

/// Everything a run needs, as a flat key/value document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mu: f64,
    pub lambda: f64,
    pub learning_rate: f64,
    pub local_epochs: usize,
    pub rounds: usize,
    pub minibatch_size: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub reset_moments_per_round: bool,
    pub aggregation_mode: AggregationMode,
    pub metric_subset: MetricSubset,
    pub knn_k: usize,
    pub kmeans_restarts: usize,
    /// Worker cap; 0 picks automatically.
    pub threads: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metadata: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let e = EvalConfig::default();
        Self {
            mu: t.mu,
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            local_epochs: t.local_epochs,
            rounds: t.rounds,
            minibatch_size: t.minibatch_size,
            train_fraction: t.train_fraction,
            seed: t.seed,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            reset_moments_per_round: t.reset_moments_per_round,
            aggregation_mode: t.aggregation_mode,
            metric_subset: e.subset,
            knn_k: e.knn_k,
            kmeans_restarts: e.kmeans_restarts,
            threads: 0,
            embeddings: None,
            metadata: None,
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mu: self.mu,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            local_epochs: self.local_epochs,
            rounds: self.rounds,
            minibatch_size: self.minibatch_size,
            train_fraction: self.train_fraction,
            seed: self.seed,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            reset_moments_per_round: self.reset_moments_per_round,
            aggregation_mode: self.aggregation_mode,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            subset: self.metric_subset,
            knn_k: self.knn_k,
            kmeans_restarts: self.kmeans_restarts,
            seed: self.seed,
            ..EvalConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.knn_k == 0 {
            return Err(Error::Validation("knn_k must be >= 1".into()));
        }
        if self.kmeans_restarts == 0 {
            return Err(Error::Validation("kmeans_restarts must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format {
            path: source.into(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn load_plan(path: &Path) -> Result<ScenarioPlan> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn plan_to_toml(plan: &ScenarioPlan) -> String {
    toml::to_string(plan).expect("plan serializes")
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec> {
    toml::from_str(&read_text(path)?).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn synth_spec_to_toml(spec: &SynthSpec) -> String {
    toml::to_string(spec).expect("spec serializes")
}

pub fn truth_to_json(truth: &GroundTruth) -> String {
    let mut s = serde_json::to_string_pretty(truth).expect("truth serializes");
    s.push('\n');
    s
}
