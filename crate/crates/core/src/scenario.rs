//! Dataset-evolution scenarios: batches arrive in stages.
//!
//! * Cumulative: every stage re-embeds all cells seen so far and fits a
//!   fresh adapter from identity.
//! * Continual: the first stage is the reference. Its rows are frozen and
//!   its corrected coordinates cached; later stages only fit the newly
//!   arrived batches and reuse the cached coordinates verbatim.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{apply_adapter, CellMetadata, EmbeddingMatrix, FilmAdapter};
use crate::error::{Error, Result};
use crate::federation::{run_federated_fit, AggregationMode, TrainingLog};
use crate::metrics::{evaluate, EvalConfig, MetricSubset, MetricsReport};
use crate::objective::TrainConfig;
use crate::pca::{fit_pca, PcaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioMode {
    Cumulative,
    Continual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioPlan {
    pub mode: ScenarioMode,
    /// Batch names per stage, in arrival order.
    pub stages: Vec<Vec<String>>,
    /// PCA components for the baseline when the source is a feature matrix.
    #[serde(default)]
    pub pca_components: Option<usize>,
}

impl ScenarioPlan {
    pub fn validate(&self, meta: &CellMetadata) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Scenario("plan has no stages".into()));
        }
        let known: HashSet<&str> = meta.batch_names().iter().map(String::as_str).collect();
        let mut seen = HashSet::new();
        for (s, group) in self.stages.iter().enumerate() {
            if group.is_empty() {
                return Err(Error::Scenario(format!("stage {} is empty", s + 1)));
            }
            for b in group {
                if !known.contains(b.as_str()) {
                    return Err(Error::Scenario(format!(
                        "stage {} names unknown batch '{b}'",
                        s + 1
                    )));
                }
                if !seen.insert(b.as_str()) {
                    return Err(Error::Scenario(format!(
                        "batch '{b}' appears in two stages"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Where stage embeddings come from.
#[derive(Debug, Clone, Copy)]
pub enum DataSource<'a> {
    /// A fixed precomputed embedding; stages use its rows as-is.
    Embedding(&'a EmbeddingMatrix),
    /// Raw features re-embedded with PCA (`plan.pca_components`).
    Features(&'a EmbeddingMatrix),
}

impl DataSource<'_> {
    fn matrix(&self) -> &EmbeddingMatrix {
        match self {
            DataSource::Embedding(m) | DataSource::Features(m) => m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageResult {
    pub stage: usize,
    pub batches: Vec<String>,
    pub metadata: CellMetadata,
    pub baseline: EmbeddingMatrix,
    pub corrected: EmbeddingMatrix,
    pub adapter: FilmAdapter,
    pub log: TrainingLog,
    pub baseline_report: MetricsReport,
    pub corrected_report: MetricsReport,
}

fn rows_of(meta: &CellMetadata, batches: &[String]) -> Vec<usize> {
    let wanted: HashSet<&str> = batches.iter().map(String::as_str).collect();
    (0..meta.n_cells())
        .filter(|&i| wanted.contains(meta.batch_of(i)))
        .collect()
}

struct Embedder<'a> {
    source: DataSource<'a>,
    components: Option<usize>,
}

impl Embedder<'_> {
    fn fit(&self, rows: &[usize]) -> Result<(EmbeddingMatrix, Option<PcaModel>)> {
        let sub = self.source.matrix().select(rows)?;
        match self.source {
            DataSource::Embedding(_) => Ok((sub, None)),
            DataSource::Features(_) => {
                let k = self.components.ok_or_else(|| {
                    Error::Scenario("feature source needs pca_components in the plan".into())
                })?;
                let model = fit_pca(&sub, k)?;
                Ok((model.transform(&sub)?, Some(model)))
            }
        }
    }

    fn project(&self, rows: &[usize], model: Option<&PcaModel>) -> Result<EmbeddingMatrix> {
        let sub = self.source.matrix().select(rows)?;
        match model {
            Some(m) => m.transform(&sub),
            None => Ok(sub),
        }
    }
}

/// Runs every stage of `plan`, returning corrected embeddings and
/// scenario-safe reports for the baseline and the corrected embedding.
pub fn run_scenario(
    plan: &ScenarioPlan,
    source: DataSource<'_>,
    meta: &CellMetadata,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<StageResult>> {
    meta.check_aligned(source.matrix())?;
    plan.validate(meta)?;
    let eval = EvalConfig {
        subset: MetricSubset::ScenarioSafe,
        ..eval.clone()
    };
    let embedder = Embedder {
        source,
        components: plan.pca_components,
    };
    match plan.mode {
        ScenarioMode::Cumulative => cumulative(plan, &embedder, meta, cfg, &eval),
        ScenarioMode::Continual => continual(plan, &embedder, meta, cfg, &eval),
    }
}

fn cumulative(
    plan: &ScenarioPlan,
    embedder: &Embedder<'_>,
    meta: &CellMetadata,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<StageResult>> {
    let mut results = Vec::new();
    let mut rows = Vec::new();
    let mut seen = Vec::new();
    for (s, group) in plan.stages.iter().enumerate() {
        rows.extend(rows_of(meta, group));
        seen.extend(group.iter().cloned());
        let stage_meta = meta.select(&rows)?;
        let (baseline, _) = embedder.fit(&rows)?;
        let init = FilmAdapter::identity(stage_meta.batch_names(), baseline.dim())?;
        let fit = run_federated_fit(&baseline, &stage_meta, cfg, init)?;
        let corrected = apply_adapter(&baseline, &stage_meta, &fit.adapter)?;
        results.push(StageResult {
            stage: s + 1,
            batches: seen.clone(),
            baseline_report: evaluate(&baseline, &stage_meta, eval)?,
            corrected_report: evaluate(&corrected, &stage_meta, eval)?,
            metadata: stage_meta,
            baseline,
            corrected,
            adapter: fit.adapter,
            log: fit.log,
        });
    }
    Ok(results)
}

fn continual(
    plan: &ScenarioPlan,
    embedder: &Embedder<'_>,
    meta: &CellMetadata,
    cfg: &TrainConfig,
    eval: &EvalConfig,
) -> Result<Vec<StageResult>> {
    let mut results: Vec<StageResult> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut seen: Vec<String> = Vec::new();
    let mut model: Option<PcaModel> = None;
    let mut adapter: Option<FilmAdapter> = None;
    let mut baseline_cache: Option<EmbeddingMatrix> = None;
    let mut corrected_cache: Option<EmbeddingMatrix> = None;
    let stage_cfg = TrainConfig {
        aggregation_mode: AggregationMode::RowRestricted,
        ..cfg.clone()
    };

    for (s, group) in plan.stages.iter().enumerate() {
        let new_rows = rows_of(meta, group);
        if new_rows.is_empty() {
            return Err(Error::Scenario(format!("stage {} has no cells", s + 1)));
        }
        let new_meta = meta.select(&new_rows)?;
        let new_baseline = match s {
            0 => {
                let (emb, m) = embedder.fit(&new_rows)?;
                model = m;
                emb
            }
            _ => embedder.project(&new_rows, model.as_ref())?,
        };
        let init = match &adapter {
            None => FilmAdapter::identity(new_meta.batch_names(), new_baseline.dim())?,
            Some(prev) => prev.with_identity_rows(new_meta.batch_names())?,
        };
        // the reference stage trains like a plain fit
        let fit_cfg = if s == 0 { cfg } else { &stage_cfg };
        let fit = run_federated_fit(&new_baseline, &new_meta, fit_cfg, init)?;
        let new_corrected = apply_adapter(&new_baseline, &new_meta, &fit.adapter)?;

        rows.extend(&new_rows);
        seen.extend(group.iter().cloned());
        let baseline = match &baseline_cache {
            Some(prev) => prev.concat(&new_baseline)?,
            None => new_baseline,
        };
        let corrected = match &corrected_cache {
            Some(prev) => prev.concat(&new_corrected)?,
            None => new_corrected,
        };
        let stage_meta = meta.select(&rows)?;
        let mut frozen = fit.adapter.clone();
        frozen.freeze_all();

        results.push(StageResult {
            stage: s + 1,
            batches: seen.clone(),
            baseline_report: evaluate(&baseline, &stage_meta, eval)?,
            corrected_report: evaluate(&corrected, &stage_meta, eval)?,
            metadata: stage_meta,
            baseline: baseline.clone(),
            corrected: corrected.clone(),
            adapter: fit.adapter,
            log: fit.log,
        });
        adapter = Some(frozen);
        baseline_cache = Some(baseline);
        corrected_cache = Some(corrected);
    }
    Ok(results)
}
