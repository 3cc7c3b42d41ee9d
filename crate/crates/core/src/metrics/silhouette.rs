//! Silhouette widths for label separation and batch mixing.

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Euclidean silhouette of each listed cell, grouping by `groups`
/// (parallel to `cells`). Cells alone in their group get 0.
pub fn silhouette_samples(
    emb: &EmbeddingMatrix,
    cells: &[usize],
    groups: &[usize],
) -> Result<Vec<f64>> {
    if cells.len() != groups.len() {
        return Err(Error::Dimension(
            "cell and group lists differ in length".into(),
        ));
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; n_groups];
    for &g in groups {
        sizes[g] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Validation(
            "silhouette needs at least two groups".into(),
        ));
    }
    Ok(cells
        .par_iter()
        .zip(groups.par_iter())
        .map(|(&i, &gi)| {
            if sizes[gi] < 2 {
                return 0.0;
            }
            let mut sums = vec![0.0; n_groups];
            for (&j, &gj) in cells.iter().zip(groups) {
                if j != i {
                    sums[gj] += dist(emb.row(i), emb.row(j));
                }
            }
            let a = sums[gi] / (sizes[gi] - 1) as f64;
            let b = (0..n_groups)
                .filter(|&g| g != gi && sizes[g] > 0)
                .map(|g| sums[g] / sizes[g] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect())
}

/// Mean label silhouette rescaled to `[0, 1]` as `(s + 1) / 2`.
pub fn label_asw(emb: &EmbeddingMatrix, labels: &[usize]) -> Result<f64> {
    let cells: Vec<usize> = (0..emb.n_cells()).collect();
    let s = silhouette_samples(emb, &cells, labels)?;
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    Ok((mean + 1.0) / 2.0)
}

/// Batch mixing: within every label, mean of `1 - |s|` over the batch
/// silhouette, then the mean over labels.
///
/// Labels seen in a single batch, or with one cell per batch, carry no
/// mixing signal and are skipped.
pub fn batch_asw(emb: &EmbeddingMatrix, batches: &[usize], labels: &[usize]) -> Result<f64> {
    let mut distinct: Vec<usize> = batches.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Validation(
            "batch ASW needs at least two batches".into(),
        ));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut per_label = Vec::new();
    for label in 0..n_labels {
        let cells: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == label).collect();
        if cells.is_empty() {
            continue;
        }
        let mut local: Vec<usize> = cells.iter().map(|&i| batches[i]).collect();
        let mut present = local.clone();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 || present.len() == cells.len() {
            continue;
        }
        for b in local.iter_mut() {
            *b = present.binary_search(b).expect("present batch");
        }
        let s = silhouette_samples(emb, &cells, &local)?;
        per_label.push(s.iter().map(|v| 1.0 - v.abs()).sum::<f64>() / s.len() as f64);
    }
    if per_label.is_empty() {
        return Err(Error::Validation(
            "no label is shared by two or more batches".into(),
        ));
    }
    Ok(per_label.iter().sum::<f64>() / per_label.len() as f64)
}
