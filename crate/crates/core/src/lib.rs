//! Post-hoc batch-effect correction for precomputed cell embeddings.
//!
//! Each batch owns a row of a FiLM adapter (`z' = gamma_b * z + beta_b`).
//! Rows are trained per batch ("client") against a proximally regularized
//! local objective and merged by sample-weighted averaging, round by round.
//! The crate also ships the integration metrics used to score embeddings,
//! a seeded synthetic generator and a PCA baseline.

pub mod embedding;
pub mod error;
pub mod federation;
pub mod io;
pub mod metrics;
pub mod objective;
pub mod pca;
pub mod rng;
pub mod scenario;
pub mod synth;

pub use embedding::{apply_adapter, identity_adapter, CellMetadata, EmbeddingMatrix, FilmAdapter};
pub use error::{Error, Result};
pub use federation::{aggregate, run_federated_fit, AggregationMode, FitOutcome, TrainingLog};
pub use metrics::{evaluate, EvalConfig, MetricSubset, MetricsReport};
pub use objective::TrainConfig;
pub use scenario::{run_scenario, DataSource, ScenarioMode, ScenarioPlan, StageResult};
