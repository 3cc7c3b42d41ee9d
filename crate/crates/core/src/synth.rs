//! Seeded synthetic embeddings with affine per-batch effects.
//!
//! Cell `i` of type `c` in batch `b` is drawn as
//! `z_i = a_b * (mu_c + eps_i) + c_b` with `eps_i ~ N(0, sigma^2 I)`,
//! so the exact inverse adapter is `gamma_b = 1 / a_b`, `beta_b = -c_b / a_b`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{CellMetadata, EmbeddingMatrix, FilmAdapter};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_batches: usize,
    pub n_types: usize,
    pub dim: usize,
    pub cells_per_batch: usize,
    pub centroid_scale: f64,
    pub noise_sigma: f64,
    /// Range `[lo, hi]` of the per-dimension multiplicative effect.
    pub effect_scale_range: (f64, f64),
    pub effect_shift_sigma: f64,
    /// Per-batch cell-type proportions; uniform when absent.
    pub type_mixture: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_batches: 3,
            n_types: 4,
            dim: 16,
            cells_per_batch: 600,
            centroid_scale: 3.0,
            noise_sigma: 1.0,
            effect_scale_range: (1.0, 1.0),
            effect_shift_sigma: 1.0,
            type_mixture: None,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_batches == 0 || self.n_types == 0 || self.dim == 0 || self.cells_per_batch == 0 {
            return Err(Error::Validation(
                "synthetic counts must all be >= 1".into(),
            ));
        }
        let (lo, hi) = self.effect_scale_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Validation(
                "effect scale range needs 0 < lo <= hi".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0
            && self.effect_shift_sigma >= 0.0
            && self.centroid_scale >= 0.0)
        {
            return Err(Error::Validation("spreads must be >= 0".into()));
        }
        if let Some(mix) = &self.type_mixture {
            if mix.len() != self.n_batches {
                return Err(Error::Validation(
                    "type_mixture needs one row per batch".into(),
                ));
            }
            for row in mix {
                let total: f64 = row.iter().sum();
                if row.len() != self.n_types
                    || row.iter().any(|p| p.is_nan() || *p < 0.0)
                    || (total - 1.0).abs() > 1e-9
                {
                    return Err(Error::Validation(
                        "each type_mixture row needs n_types proportions summing to 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The effects and centroids the data were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub batch_names: Vec<String>,
    pub type_names: Vec<String>,
    /// `a_b`, one row per batch.
    pub scale: Vec<Vec<f64>>,
    /// `c_b`, one row per batch.
    pub shift: Vec<Vec<f64>>,
    pub centroids: Vec<Vec<f64>>,
}

impl GroundTruth {
    /// Adapter that exactly undoes the batch effects.
    pub fn inverse_adapter(&self) -> Result<FilmAdapter> {
        let dim = self.scale.first().map_or(0, Vec::len);
        let mut gamma = Vec::new();
        let mut beta = Vec::new();
        for (a, c) in self.scale.iter().zip(&self.shift) {
            for (aj, cj) in a.iter().zip(c) {
                gamma.push(1.0 / aj);
                beta.push(-cj / aj);
            }
        }
        FilmAdapter::new(
            self.batch_names.clone(),
            dim,
            gamma,
            beta,
            vec![false; self.batch_names.len()],
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub embedding: EmbeddingMatrix,
    pub metadata: CellMetadata,
    pub truth: GroundTruth,
}

/// Largest-remainder split of `n` by `props`.
fn apportion(n: usize, props: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..props.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &t in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[t] += 1;
        left -= 1;
    }
    counts
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let d = spec.dim;
    let batch_names: Vec<String> = (0..spec.n_batches).map(|b| format!("batch{b}")).collect();
    let type_names: Vec<String> = (0..spec.n_types).map(|c| format!("type{c}")).collect();

    let mut crng = rng::stream(spec.seed, &[rng::CENTROIDS]);
    let centroids: Vec<Vec<f64>> = (0..spec.n_types)
        .map(|_| {
            (0..d)
                .map(|_| spec.centroid_scale * normal(&mut crng))
                .collect()
        })
        .collect();
    let (lo, hi) = spec.effect_scale_range;
    let scale: Vec<Vec<f64>> = (0..spec.n_batches)
        .map(|b| {
            let mut r = rng::stream(spec.seed, &[rng::EFFECT_SCALE, b as u64]);
            (0..d)
                .map(|_| {
                    if lo == hi {
                        lo
                    } else {
                        r.random_range(lo..=hi)
                    }
                })
                .collect()
        })
        .collect();
    let shift: Vec<Vec<f64>> = (0..spec.n_batches)
        .map(|b| {
            let mut r = rng::stream(spec.seed, &[rng::EFFECT_SHIFT, b as u64]);
            (0..d)
                .map(|_| spec.effect_shift_sigma * normal(&mut r))
                .collect()
        })
        .collect();

    // (batch, type) of every cell, batch-major
    let uniform = vec![1.0 / spec.n_types as f64; spec.n_types];
    let mut assignments = Vec::with_capacity(spec.n_batches * spec.cells_per_batch);
    for b in 0..spec.n_batches {
        let props = spec.type_mixture.as_ref().map_or(&uniform, |m| &m[b]);
        for (c, count) in apportion(spec.cells_per_batch, props)
            .into_iter()
            .enumerate()
        {
            assignments.extend(std::iter::repeat_n((b, c), count));
        }
    }

    let values: Vec<f64> = assignments
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, &(b, c))| {
            let mut r = rng::stream(spec.seed, &[rng::NOISE, i as u64]);
            let row: Vec<f64> = (0..d)
                .map(|j| {
                    let eps = spec.noise_sigma * normal(&mut r);
                    scale[b][j] * (centroids[c][j] + eps) + shift[b][j]
                })
                .collect();
            row
        })
        .collect();

    let cell_ids: Vec<String> = (0..assignments.len())
        .map(|i| format!("cell{i:06}"))
        .collect();
    let embedding = EmbeddingMatrix::new(cell_ids.clone(), values, d)?;
    let metadata = CellMetadata::new(
        cell_ids,
        assignments
            .iter()
            .map(|&(b, _)| batch_names[b].clone())
            .collect(),
        Some(
            assignments
                .iter()
                .map(|&(_, c)| type_names[c].clone())
                .collect(),
        ),
    )?;
    Ok(SynthData {
        embedding,
        metadata,
        truth: GroundTruth {
            batch_names,
            type_names,
            scale,
            shift,
            centroids,
        },
    })
}
