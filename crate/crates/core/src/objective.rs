//! Per-client local objective, its gradient, Adam, and local training.
//!
//! For batch `b` with cells `z_1..z_m` the objective is
//!
//! ```text
//! L_b = mean_i |gamma_b * z_i + beta_b - z_i|^2
//!     + mu * (|gamma_b - gamma_b^t|^2 + |beta_b - beta_b^t|^2)
//!     + lambda * (|gamma|_F^2 + |beta|_F^2)
//! ```
//!
//! where `^t` marks the round-start global rows and the last term runs over
//! every batch's rows. Only row `b` is optimized; the other rows enter the
//! loss as a constant.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingMatrix, FilmAdapter};
use crate::error::{Error, Result};
use crate::federation::AggregationMode;
use crate::rng;

/// Optimization hyperparameters. Defaults follow the published protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
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
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mu: 1e-3,
            lambda: 1e-3,
            learning_rate: 1e-3,
            local_epochs: 2,
            rounds: 7,
            minibatch_size: 256,
            train_fraction: 0.9,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            reset_moments_per_round: false,
            aggregation_mode: AggregationMode::FullTable,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Validation(msg.to_string()));
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return fail("mu must be finite and >= 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail("lambda must be finite and >= 0");
        }
        // learning_rate = 0 is accepted as a frozen (no-op) run
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail("learning_rate must be finite and >= 0");
        }
        if self.local_epochs < 1 {
            return fail("local_epochs must be >= 1");
        }
        if self.rounds < 1 {
            return fail("rounds must be >= 1");
        }
        if self.minibatch_size < 1 {
            return fail("minibatch_size must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return fail("train_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam betas must lie in [0, 1)");
        }
        if self.adam_epsilon.is_nan() || self.adam_epsilon <= 0.0 {
            return fail("adam_epsilon must be > 0");
        }
        Ok(())
    }
}

/// The local objective of one client for one round.
#[derive(Debug, Clone)]
pub struct LocalObjective<'a> {
    anchor_gamma: &'a [f64],
    anchor_beta: &'a [f64],
    /// Squared norm of every other batch's rows; constant during the round.
    others_sq_norm: f64,
    mu: f64,
    lambda: f64,
}

impl<'a> LocalObjective<'a> {
    /// Objective for `row` of `snapshot`, anchored at that row.
    pub fn new(snapshot: &'a FilmAdapter, row: usize, mu: f64, lambda: f64) -> Self {
        let others_sq_norm = (0..snapshot.n_batches())
            .filter(|&r| r != row)
            .map(|r| {
                snapshot
                    .gamma_row(r)
                    .iter()
                    .chain(snapshot.beta_row(r))
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .sum();
        Self {
            anchor_gamma: snapshot.gamma_row(row),
            anchor_beta: snapshot.beta_row(row),
            others_sq_norm,
            mu,
            lambda,
        }
    }

    fn check(&self, cells: &[&[f64]], gamma: &[f64], beta: &[f64]) -> Result<()> {
        if cells.is_empty() {
            return Err(Error::Empty(
                "local objective needs at least one cell".into(),
            ));
        }
        let d = self.anchor_gamma.len();
        if gamma.len() != d || beta.len() != d || cells.iter().any(|z| z.len() != d) {
            return Err(Error::Dimension(format!(
                "local objective expects vectors of length {d}"
            )));
        }
        Ok(())
    }

    pub fn loss(&self, cells: &[&[f64]], gamma: &[f64], beta: &[f64]) -> Result<f64> {
        self.check(cells, gamma, beta)?;
        let mut recon = 0.0;
        for z in cells {
            for j in 0..z.len() {
                let r = gamma[j] * z[j] + beta[j] - z[j];
                recon += r * r;
            }
        }
        recon /= cells.len() as f64;
        let mut prox = 0.0;
        let mut own = 0.0;
        for j in 0..gamma.len() {
            let dg = gamma[j] - self.anchor_gamma[j];
            let db = beta[j] - self.anchor_beta[j];
            prox += dg * dg + db * db;
            own += gamma[j] * gamma[j] + beta[j] * beta[j];
        }
        Ok(recon + self.mu * prox + self.lambda * (own + self.others_sq_norm))
    }

    /// Writes the gradient with respect to the client's own row.
    pub fn gradient(
        &self,
        cells: &[&[f64]],
        gamma: &[f64],
        beta: &[f64],
        grad_gamma: &mut [f64],
        grad_beta: &mut [f64],
    ) -> Result<()> {
        self.smooth_gradient(cells, gamma, beta, grad_gamma, grad_beta)?;
        for j in 0..gamma.len() {
            grad_gamma[j] += 2.0 * self.mu * (gamma[j] - self.anchor_gamma[j]);
            grad_beta[j] += 2.0 * self.mu * (beta[j] - self.anchor_beta[j]);
        }
        Ok(())
    }

    /// Gradient of the reconstruction and l2 terms only.
    pub fn smooth_gradient(
        &self,
        cells: &[&[f64]],
        gamma: &[f64],
        beta: &[f64],
        grad_gamma: &mut [f64],
        grad_beta: &mut [f64],
    ) -> Result<()> {
        self.check(cells, gamma, beta)?;
        grad_gamma.fill(0.0);
        grad_beta.fill(0.0);
        for z in cells {
            for j in 0..z.len() {
                let r = gamma[j] * z[j] + beta[j] - z[j];
                grad_gamma[j] += z[j] * r;
                grad_beta[j] += r;
            }
        }
        let scale = 2.0 / cells.len() as f64;
        for j in 0..gamma.len() {
            grad_gamma[j] = scale * grad_gamma[j] + 2.0 * self.lambda * gamma[j];
            grad_beta[j] = scale * grad_beta[j] + 2.0 * self.lambda * beta[j];
        }
        Ok(())
    }

    /// The round-start row, `[gamma | beta]`.
    pub fn anchor(&self) -> Vec<f64> {
        self.anchor_gamma
            .iter()
            .chain(self.anchor_beta)
            .copied()
            .collect()
    }
}

/// Local loss of `(gamma_b, beta_b)` for row `row` of `snapshot`.
///
/// The l2 term covers the full tables with row `row` replaced by the
/// candidate values.
pub fn local_loss(
    cells: &[&[f64]],
    gamma_b: &[f64],
    beta_b: &[f64],
    snapshot: &FilmAdapter,
    row: usize,
    mu: f64,
    lambda: f64,
) -> Result<f64> {
    LocalObjective::new(snapshot, row, mu, lambda).loss(cells, gamma_b, beta_b)
}

/// Analytic gradient of [`local_loss`] with respect to `(gamma_b, beta_b)`.
pub fn local_gradient(
    cells: &[&[f64]],
    gamma_b: &[f64],
    beta_b: &[f64],
    snapshot: &FilmAdapter,
    row: usize,
    mu: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = gamma_b.len();
    let mut gg = vec![0.0; d];
    let mut gb = vec![0.0; d];
    LocalObjective::new(snapshot, row, mu, lambda)
        .gradient(cells, gamma_b, beta_b, &mut gg, &mut gb)?;
    Ok((gg, gb))
}

/// Adam state for a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Adam {
    pub fn new(len: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn reset(&mut self) {
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step = 0;
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        self.update_proximal(params, grads, lr, &[], 0.0);
    }

    /// Adam step on `grads`, followed by the proximal map of
    /// `mu * |params - anchor|^2` in the metric of Adam's preconditioner:
    /// `p = (D y + 2 lr mu a) / (D + 2 lr mu)` with `D = sqrt(v_hat) + eps`
    /// and `y` the plain Adam iterate. Fixed points are the stationary points
    /// of the smooth loss plus the proximal term. `mu = 0` is plain Adam.
    pub fn update_proximal(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        anchor: &[f64],
        mu: f64,
    ) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert!(mu == 0.0 || anchor.len() == params.len());
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let pull = 2.0 * lr * mu;
        for (i, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let scale = (*v / bc2).sqrt() + self.epsilon;
            let y = *p - lr * m_hat / scale;
            *p = if pull > 0.0 {
                (scale * y + pull * anchor[i]) / (scale + pull)
            } else {
                y
            };
        }
    }
}

/// One batch's optimization unit.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub batch_name: String,
    /// Row of this batch in the global adapter.
    pub adapter_row: usize,
    /// Position of this client in canonical order; keys its random streams.
    pub client_index: usize,
    /// All cells of the batch; this is the aggregation weight.
    pub n_cells: usize,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
    pub adam: Adam,
}

impl ClientState {
    /// Draws the fixed train/holdout split of `cells` (embedding row
    /// indices) once; the split is reused for every round.
    pub fn new(
        batch_name: String,
        adapter_row: usize,
        client_index: usize,
        cells: &[usize],
        dim: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let mut order = cells.to_vec();
        order.shuffle(&mut rng::stream(
            cfg.seed,
            &[rng::SPLIT, client_index as u64],
        ));
        let n_train = ((cells.len() as f64) * cfg.train_fraction).round() as usize;
        let n_train = n_train.min(cells.len());
        if n_train == 0 {
            return Err(Error::EmptyClient(batch_name));
        }
        let holdout_indices = order.split_off(n_train);
        Ok(Self {
            batch_name,
            adapter_row,
            client_index,
            n_cells: cells.len(),
            train_indices: order,
            holdout_indices,
            adam: Adam::new(2 * dim, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon),
        })
    }
}

/// Result of one client's local round.
#[derive(Debug, Clone)]
pub struct LocalUpdate {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Objective over the training cells at the returned parameters.
    pub train_loss: f64,
    /// Objective over the held-out cells, if any.
    pub validation_loss: Option<f64>,
}

/// Runs `cfg.local_epochs` epochs of mini-batch Adam on the client's own
/// adapter row, starting from and anchored at `snapshot`. The proximal
/// term is applied through [`Adam::update_proximal`].
pub fn client_local_update(
    state: &mut ClientState,
    emb: &EmbeddingMatrix,
    snapshot: &FilmAdapter,
    cfg: &TrainConfig,
    round: usize,
) -> Result<LocalUpdate> {
    if state.train_indices.is_empty() {
        return Err(Error::EmptyClient(state.batch_name.clone()));
    }
    let d = snapshot.dim();
    if emb.dim() != d {
        return Err(Error::Dimension(format!(
            "adapter dimension {d} does not match embedding dimension {}",
            emb.dim()
        )));
    }
    if cfg.reset_moments_per_round {
        state.adam.reset();
    }
    let row = state.adapter_row;
    let objective = LocalObjective::new(snapshot, row, cfg.mu, cfg.lambda);

    // params = [gamma_b | beta_b]
    let mut params = snapshot.gamma_row(row).to_vec();
    params.extend_from_slice(snapshot.beta_row(row));
    let anchor = objective.anchor();
    let mut grads = vec![0.0; 2 * d];
    let mut order = state.train_indices.clone();
    let mut cells: Vec<&[f64]> = Vec::with_capacity(cfg.minibatch_size.min(order.len()));

    for epoch in 0..cfg.local_epochs {
        let mut shuffle = rng::stream(
            cfg.seed,
            &[
                rng::SHUFFLE,
                round as u64,
                epoch as u64,
                state.client_index as u64,
            ],
        );
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.minibatch_size) {
            cells.clear();
            cells.extend(chunk.iter().map(|&i| emb.row(i)));
            let (g, b) = params.split_at(d);
            let (gg, gb) = grads.split_at_mut(d);
            objective.smooth_gradient(&cells, g, b, gg, gb)?;
            state
                .adam
                .update_proximal(&mut params, &grads, cfg.learning_rate, &anchor, cfg.mu);
        }
    }

    let (gamma, beta) = params.split_at(d);
    let train_cells: Vec<&[f64]> = state.train_indices.iter().map(|&i| emb.row(i)).collect();
    let train_loss = objective.loss(&train_cells, gamma, beta)?;
    let validation_loss = if state.holdout_indices.is_empty() {
        None
    } else {
        let held: Vec<&[f64]> = state.holdout_indices.iter().map(|&i| emb.row(i)).collect();
        Some(objective.loss(&held, gamma, beta)?)
    };
    if !train_loss.is_finite() || gamma.iter().chain(beta).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            round,
            client: state.batch_name.clone(),
        });
    }
    Ok(LocalUpdate {
        gamma: gamma.to_vec(),
        beta: beta.to_vec(),
        train_loss,
        validation_loss,
    })
}
