//! Integration quality metrics and their aggregate scores.
//!
//! Biological conservation: k-means NMI/ARI, label ASW, isolated-label F1,
//! cLISI. Batch removal: batch ASW, iLISI, kBET per label, graph
//! connectivity, PCR. All scores are rescaled to `[0, 1]`, higher is better.

pub mod cluster;
pub mod kbet;
pub mod neighbors;
pub mod pcr;
pub mod silhouette;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::{CellMetadata, EmbeddingMatrix};
use crate::error::{Error, Result};

pub use cluster::{ari, isolated_label_f1, kmeans, kmeans_with_restarts, nmi, Clustering};
pub use kbet::kbet_per_label;
pub use neighbors::{clisi_score, graph_connectivity, ilisi_score, lisi, NeighborGraph};
pub use pcr::pcr_score;
pub use silhouette::{batch_asw, label_asw, silhouette_samples};

pub const BIO_WEIGHT: f64 = 0.6;
pub const BATCH_WEIGHT: f64 = 0.4;

/// `0.6 * bio + 0.4 * batch`.
pub fn overall_score(bio: f64, batch: f64) -> f64 {
    BIO_WEIGHT * bio + BATCH_WEIGHT * batch
}

/// Which metrics to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricSubset {
    #[default]
    Full,
    /// Metrics that stay meaningful when coordinates of earlier cells are
    /// regenerated between stages: NMI, ARI, label ASW, iLISI, batch ASW.
    ScenarioSafe,
}

impl std::str::FromStr for MetricSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "scenario-safe" => Ok(Self::ScenarioSafe),
            other => Err(Error::Validation(format!(
                "unknown metric subset '{other}' (expected full or scenario-safe)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub subset: MetricSubset,
    pub knn_k: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
    pub kbet_alpha: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            subset: MetricSubset::Full,
            knn_k: 15,
            kmeans_restarts: cluster::DEFAULT_RESTARTS,
            seed: 0,
            kbet_alpha: kbet::DEFAULT_ALPHA,
        }
    }
}

/// Individual scores plus aggregates. Absent metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub subset: MetricSubset,
    pub kmeans_nmi: Option<f64>,
    pub kmeans_ari: Option<f64>,
    pub label_asw: Option<f64>,
    pub isolated_f1: Option<f64>,
    pub clisi_score: Option<f64>,
    pub batch_asw: Option<f64>,
    pub ilisi_score: Option<f64>,
    pub kbet_per_label: Option<f64>,
    pub graph_connectivity: Option<f64>,
    pub pcr_score: Option<f64>,
    pub bio: f64,
    pub batch: f64,
    pub overall: f64,
    /// Set when every label occurs in the same number of batches.
    pub isolated_labels_all: bool,
}

fn present_mean(values: &[Option<f64>]) -> f64 {
    let got: Vec<f64> = values.iter().flatten().copied().collect();
    if got.is_empty() {
        0.0
    } else {
        got.iter().sum::<f64>() / got.len() as f64
    }
}

impl MetricsReport {
    /// Report with no individual metrics, from precomputed sub-scores.
    pub fn from_aggregates(bio: f64, batch: f64) -> Self {
        Self {
            subset: MetricSubset::Full,
            kmeans_nmi: None,
            kmeans_ari: None,
            label_asw: None,
            isolated_f1: None,
            clisi_score: None,
            batch_asw: None,
            ilisi_score: None,
            kbet_per_label: None,
            graph_connectivity: None,
            pcr_score: None,
            bio,
            batch,
            overall: overall_score(bio, batch),
            isolated_labels_all: false,
        }
    }

    pub fn bio_metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("kmeans_nmi", self.kmeans_nmi),
            ("kmeans_ari", self.kmeans_ari),
            ("label_asw", self.label_asw),
            ("isolated_f1", self.isolated_f1),
            ("clisi_score", self.clisi_score),
        ]
    }

    pub fn batch_metrics(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("batch_asw", self.batch_asw),
            ("ilisi_score", self.ilisi_score),
            ("kbet_per_label", self.kbet_per_label),
            ("graph_connectivity", self.graph_connectivity),
            ("pcr_score", self.pcr_score),
        ]
    }

    /// Recomputes bio, batch and overall from the individual metrics.
    pub fn recompute_aggregates(&mut self) {
        self.bio = present_mean(&self.bio_metrics().map(|m| m.1));
        self.batch = present_mean(&self.batch_metrics().map(|m| m.1));
        self.overall = overall_score(self.bio, self.batch);
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub const CSV_HEADER: &'static str = "subset,kmeans_nmi,kmeans_ari,label_asw,isolated_f1,clisi_score,batch_asw,ilisi_score,kbet_per_label,graph_connectivity,pcr_score,bio,batch,overall";

    /// One comma-separated row matching [`Self::CSV_HEADER`]; absent
    /// metrics are empty fields.
    pub fn to_csv_row(&self) -> String {
        let mut row = String::from(match self.subset {
            MetricSubset::Full => "full",
            MetricSubset::ScenarioSafe => "scenario-safe",
        });
        for (_, v) in self.bio_metrics().iter().chain(self.batch_metrics().iter()) {
            row.push(',');
            if let Some(v) = v {
                write!(row, "{v}").unwrap();
            }
        }
        write!(row, ",{},{},{}", self.bio, self.batch, self.overall).unwrap();
        row
    }
}

fn tag<T>(metric: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_metric(metric))
}

/// Computes the metrics of `cfg.subset` on `emb` and aggregates them.
pub fn evaluate(
    emb: &EmbeddingMatrix,
    meta: &CellMetadata,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    meta.check_aligned(emb)?;
    let labels = meta
        .label_codes()
        .ok_or_else(|| Error::Validation("evaluation needs cell-type labels".into()))?;
    let batches = meta.batch_codes();
    if emb.n_cells() < 2 {
        return Err(Error::Validation(
            "evaluation needs at least two cells".into(),
        ));
    }
    let k = cfg.knn_k.min(emb.n_cells() - 1);
    let n_types = meta.label_names().len();
    let full = cfg.subset == MetricSubset::Full;

    let clusters = tag(
        "kmeans",
        kmeans_with_restarts(emb, n_types, cfg.seed, cfg.kmeans_restarts),
    )?;
    let graph = tag("knn_graph", NeighborGraph::build(emb, k))?;

    let mut report = MetricsReport::from_aggregates(0.0, 0.0);
    report.subset = cfg.subset;
    report.kmeans_nmi = Some(tag("kmeans_nmi", nmi(&clusters.labels, labels))?);
    report.kmeans_ari = Some(tag("kmeans_ari", ari(&clusters.labels, labels))?.clamp(0.0, 1.0));
    report.label_asw = Some(tag("label_asw", label_asw(emb, labels))?);
    report.batch_asw = Some(tag("batch_asw", batch_asw(emb, batches, labels))?);
    let ilisi = tag("ilisi", lisi(&graph, batches))?;
    report.ilisi_score = Some(tag("ilisi", ilisi_score(&ilisi, meta.n_batches()))?);
    if full {
        let f1 = tag(
            "isolated_f1",
            isolated_label_f1(batches, labels, &clusters.labels),
        )?;
        report.isolated_f1 = Some(f1.score);
        report.isolated_labels_all = f1.all_labels_isolated;
        let clisi = tag("clisi", lisi(&graph, labels))?;
        report.clisi_score = Some(clisi_score(&clisi, n_types));
        report.kbet_per_label = Some(tag(
            "kbet_per_label",
            kbet_per_label(emb, batches, labels, cfg.knn_k, cfg.kbet_alpha),
        )?);
        report.graph_connectivity = Some(tag(
            "graph_connectivity",
            graph_connectivity(&graph, labels),
        )?);
        report.pcr_score = Some(tag("pcr", pcr_score(emb, batches))?);
    }
    report.recompute_aggregates();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_aggregate_rows() {
        assert!((overall_score(0.7239, 0.8047) - 0.7562).abs() < 5e-5);
        assert!((overall_score(0.7359, 0.8269) - 0.7723).abs() < 5e-5);
        assert!((overall_score(0.42, 0.42) - 0.42).abs() < 1e-15);
    }

    #[test]
    fn aggregates_use_present_metrics_only() {
        let mut r = MetricsReport::from_aggregates(0.0, 0.0);
        r.kmeans_nmi = Some(0.5);
        r.label_asw = Some(1.0);
        r.batch_asw = Some(0.2);
        r.recompute_aggregates();
        assert_eq!(r.bio, 0.75);
        assert_eq!(r.batch, 0.2);
        assert!((r.overall - (0.6 * 0.75 + 0.4 * 0.2)).abs() < 1e-12);
        let row = r.to_csv_row();
        assert_eq!(
            row.split(',').count(),
            MetricsReport::CSV_HEADER.split(',').count()
        );
    }

    #[test]
    fn subset_parsing() {
        assert_eq!(
            "scenario-safe".parse::<MetricSubset>().unwrap(),
            MetricSubset::ScenarioSafe
        );
        assert!("leiden".parse::<MetricSubset>().is_err());
    }
}
