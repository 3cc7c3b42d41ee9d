//! Round orchestration: broadcast, local client updates, weighted averaging.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{CellMetadata, EmbeddingMatrix, FilmAdapter};
use crate::error::{Error, Result};
use crate::objective::{client_local_update, ClientState, LocalUpdate, TrainConfig};

/// How client tables are merged into the next global adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggregationMode {
    /// Every entry is the sample-weighted mean over all clients' full
    /// tables. A client's copy differs from the round-start table only in
    /// its own row, so each update is shrunk by `n_b / sum(n)`.
    #[default]
    FullTable,
    /// Each row is taken from the client that owns it.
    RowRestricted,
}

impl std::str::FromStr for AggregationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-table" => Ok(Self::FullTable),
            "row-restricted" => Ok(Self::RowRestricted),
            other => Err(Error::Validation(format!(
                "unknown aggregation mode '{other}' (expected full-table or row-restricted)"
            ))),
        }
    }
}

/// One client's contribution: its full copy of the tables, its weight and,
/// for row-restricted merging, the row it owns.
#[derive(Debug, Clone, Copy)]
pub struct Submission<'a> {
    pub table: &'a FilmAdapter,
    pub weight: usize,
    pub owner_row: Option<usize>,
}

fn weighted_mean(values: &[f64], weights: &[f64], total: f64) -> f64 {
    // Anchored at the first value so identical submissions reproduce it
    // exactly; clamped because rounding may leave the hull by an ulp.
    let first = values[0];
    let mut acc = 0.0;
    let mut lo = first;
    let mut hi = first;
    for (&v, &w) in values.iter().zip(weights) {
        acc += w * (v - first);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (first + acc / total).clamp(lo, hi)
}

/// Merges client tables into the next global adapter.
///
/// Frozen rows of `round_start` are copied through untouched in both modes,
/// as are rows no client owns in row-restricted mode.
pub fn aggregate(
    round_start: &FilmAdapter,
    submissions: &[Submission<'_>],
    mode: AggregationMode,
) -> Result<FilmAdapter> {
    if submissions.is_empty() {
        return Err(Error::Empty("aggregation needs at least one client".into()));
    }
    for s in submissions {
        if s.table.batch_names() != round_start.batch_names() || s.table.dim() != round_start.dim()
        {
            return Err(Error::Dimension(
                "client table shape differs from the round-start table".into(),
            ));
        }
    }
    let total: usize = submissions.iter().map(|s| s.weight).sum();
    if total == 0 {
        return Err(Error::Validation("total aggregation weight is zero".into()));
    }

    let mut next = round_start.clone();
    let d = round_start.dim();
    match mode {
        AggregationMode::FullTable => {
            let weights: Vec<f64> = submissions.iter().map(|s| s.weight as f64).collect();
            let total = total as f64;
            let mut column = vec![0.0; submissions.len()];
            for row in 0..round_start.n_batches() {
                if round_start.is_frozen(row) {
                    continue;
                }
                for j in row * d..(row + 1) * d {
                    for (c, s) in column.iter_mut().zip(submissions) {
                        *c = s.table.gamma()[j];
                    }
                    next.gamma_mut()[j] = weighted_mean(&column, &weights, total);
                    for (c, s) in column.iter_mut().zip(submissions) {
                        *c = s.table.beta()[j];
                    }
                    next.beta_mut()[j] = weighted_mean(&column, &weights, total);
                }
            }
        }
        AggregationMode::RowRestricted => {
            for s in submissions {
                let Some(row) = s.owner_row else {
                    return Err(Error::Validation(
                        "row-restricted aggregation needs an owner row per client".into(),
                    ));
                };
                if row >= round_start.n_batches() {
                    return Err(Error::Dimension(format!("owner row {row} out of range")));
                }
                if !round_start.is_frozen(row) {
                    next.set_row(row, s.table.gamma_row(row), s.table.beta_row(row));
                }
            }
        }
    }
    Ok(next)
}

/// One log record: a client's losses after its local epochs in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    pub client: String,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// Completed rounds, each holding one record per client in canonical
    /// client order.
    pub rounds: Vec<Vec<LogRecord>>,
}

impl TrainingLog {
    pub fn records(&self) -> impl Iterator<Item = &LogRecord> {
        self.rounds.iter().flatten()
    }

    /// Client-size-weighted mean training loss of each round.
    pub fn round_train_losses(&self, weights: &[usize]) -> Vec<f64> {
        self.rounds
            .iter()
            .map(|recs| {
                let total: usize = weights.iter().sum();
                recs.iter()
                    .zip(weights)
                    .map(|(r, &w)| r.train_loss * w as f64)
                    .sum::<f64>()
                    / total as f64
            })
            .collect()
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Global state across rounds.
#[derive(Debug, Clone)]
pub struct RoundState {
    pub round_index: usize,
    pub global: FilmAdapter,
    pub clients: Vec<ClientState>,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub adapter: FilmAdapter,
    pub log: TrainingLog,
    /// Aggregation weight (all cells) of each client, in log order.
    pub client_weights: Vec<usize>,
}

/// Drives the federated rounds for one dataset.
pub struct Federation<'a> {
    emb: &'a EmbeddingMatrix,
    cfg: TrainConfig,
    state: RoundState,
}

impl<'a> Federation<'a> {
    /// One client per non-frozen batch of `meta`. `init` must hold a row
    /// for every batch of `meta`; extra rows (frozen references) are kept.
    pub fn new(
        emb: &'a EmbeddingMatrix,
        meta: &CellMetadata,
        cfg: TrainConfig,
        init: FilmAdapter,
    ) -> Result<Self> {
        cfg.validate()?;
        meta.check_aligned(emb)?;
        if init.dim() != emb.dim() {
            return Err(Error::Dimension(format!(
                "adapter dimension {} does not match embedding dimension {}",
                init.dim(),
                emb.dim()
            )));
        }
        let mut clients = Vec::new();
        for (b, name) in meta.batch_names().iter().enumerate() {
            let row = init
                .row_of(name)
                .ok_or_else(|| Error::MissingAdapterRow(name.clone()))?;
            if init.is_frozen(row) {
                continue;
            }
            let cells = meta.cells_in_batch(b);
            let index = clients.len();
            clients.push(ClientState::new(
                name.clone(),
                row,
                index,
                &cells,
                emb.dim(),
                &cfg,
            )?);
        }
        if clients.is_empty() {
            return Err(Error::Validation("no trainable batches".into()));
        }
        Ok(Self {
            emb,
            cfg,
            state: RoundState {
                round_index: 0,
                global: init,
                clients,
                log: TrainingLog::default(),
            },
        })
    }

    pub fn state(&self) -> &RoundState {
        &self.state
    }

    /// Broadcast, local updates, aggregation.
    pub fn step(&mut self) -> Result<()> {
        let round = self.state.round_index;
        let snapshot = &self.state.global;
        let emb = self.emb;
        let cfg = &self.cfg;
        // Clients only read the snapshot; collect keeps canonical order.
        let updates: Vec<LocalUpdate> = self
            .state
            .clients
            .par_iter_mut()
            .map(|client| client_local_update(client, emb, snapshot, cfg, round))
            .collect::<Result<_>>()?;

        let tables: Vec<FilmAdapter> = self
            .state
            .clients
            .iter()
            .zip(&updates)
            .map(|(c, u)| {
                let mut t = snapshot.clone();
                t.set_row(c.adapter_row, &u.gamma, &u.beta);
                t
            })
            .collect();
        let submissions: Vec<Submission<'_>> = self
            .state
            .clients
            .iter()
            .zip(&tables)
            .map(|(c, t)| Submission {
                table: t,
                weight: c.n_cells,
                owner_row: Some(c.adapter_row),
            })
            .collect();
        let next = aggregate(snapshot, &submissions, cfg.aggregation_mode)?;

        let records = self
            .state
            .clients
            .iter()
            .zip(&updates)
            .map(|(c, u)| LogRecord {
                round: round + 1,
                client: c.batch_name.clone(),
                train_loss: u.train_loss,
                validation_loss: u.validation_loss,
            })
            .collect();
        self.state.global = next;
        self.state.log.rounds.push(records);
        self.state.round_index += 1;
        Ok(())
    }

    pub fn run(mut self) -> Result<FitOutcome> {
        for _ in 0..self.cfg.rounds {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> FitOutcome {
        FitOutcome {
            client_weights: self.state.clients.iter().map(|c| c.n_cells).collect(),
            adapter: self.state.global,
            log: self.state.log,
        }
    }
}

/// Runs `cfg.rounds` federated rounds from `init`.
pub fn run_federated_fit(
    emb: &EmbeddingMatrix,
    meta: &CellMetadata,
    cfg: &TrainConfig,
    init: FilmAdapter,
) -> Result<FitOutcome> {
    Federation::new(emb, meta, cfg.clone(), init)?.run()
}
