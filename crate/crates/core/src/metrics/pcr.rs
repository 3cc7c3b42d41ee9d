//! Principal component regression on batch indicators.

use nalgebra::{DMatrix, DVector};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::pca::principal_scores;

pub const MAX_COMPONENTS: usize = 50;

/// R^2 of the least-squares fit of `y` on the columns of `design`.
pub(crate) fn r_squared(design: &DMatrix<f64>, y: &[f64]) -> f64 {
    let yv = DVector::from_column_slice(y);
    let mean = yv.mean();
    let total: f64 = yv.iter().map(|v| (v - mean) * (v - mean)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let pinv = design
        .clone()
        .pseudo_inverse(1e-12)
        .expect("non-negative tolerance");
    let fitted = design * (pinv * &yv);
    let residual: f64 = yv
        .iter()
        .zip(fitted.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (1.0 - residual / total).clamp(0.0, 1.0)
}

/// Per-component R^2 of principal component scores regressed on one-hot
/// batch indicators, for up to `min(d, 50)` non-null components.
pub fn pcr_r_squared(emb: &EmbeddingMatrix, batches: &[usize]) -> Result<Vec<f64>> {
    if batches.len() != emb.n_cells() {
        return Err(Error::Dimension("batches do not match embedding".into()));
    }
    let n_batches = batches.iter().max().map_or(0, |m| m + 1);
    let mut distinct = batches.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Validation("PCR needs at least two batches".into()));
    }
    if emb.n_cells() <= distinct.len() {
        return Err(Error::Validation(
            "PCR needs more cells than batches".into(),
        ));
    }
    let design = DMatrix::from_fn(emb.n_cells(), n_batches, |i, b| {
        if batches[i] == b {
            1.0
        } else {
            0.0
        }
    });
    let scores = principal_scores(emb, emb.dim().min(MAX_COMPONENTS));
    Ok(scores.iter().map(|s| r_squared(&design, s)).collect())
}

/// `1 - mean R^2`; an embedding with no variance has nothing batch-driven
/// and scores 1.
pub fn pcr_score(emb: &EmbeddingMatrix, batches: &[usize]) -> Result<f64> {
    let r2 = pcr_r_squared(emb, batches)?;
    if r2.is_empty() {
        return Ok(1.0);
    }
    Ok(1.0 - r2.iter().sum::<f64>() / r2.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indicator_dimension_is_fully_explained() {
        let rows: Vec<Vec<f64>> = (0..8)
            .map(|i| vec![if i % 2 == 0 { 10.0 } else { 0.0 }])
            .collect();
        let emb =
            EmbeddingMatrix::from_rows((0..8).map(|i| format!("c{i}")).collect(), &rows).unwrap();
        let batches: Vec<usize> = (0..8).map(|i| i % 2).collect();
        let r2 = pcr_r_squared(&emb, &batches).unwrap();
        assert!((r2[0] - 1.0).abs() < 1e-12);
        assert!(pcr_score(&emb, &batches).unwrap().abs() < 1e-12);
    }

    #[test]
    fn needs_two_batches_and_enough_cells() {
        let emb = EmbeddingMatrix::new(vec!["a".into(), "b".into()], vec![0.0, 1.0], 1).unwrap();
        assert!(pcr_score(&emb, &[0, 0]).is_err());
        assert!(pcr_score(&emb, &[0, 1]).is_err());
    }
}
