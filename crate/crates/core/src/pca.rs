//! Principal component analysis via eigendecomposition of the covariance.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Relative eigenvalue threshold below which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

/// Fitted principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `components x features`, unit-norm rows, largest loading positive.
    pub axes: Vec<Vec<f64>>,
    /// Variance along each axis (covariance eigenvalue, `n - 1` divisor).
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.axes.len()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| {
                if self.total_variance > 0.0 {
                    v / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Projects rows of `features` onto the fitted axes.
    pub fn transform(&self, features: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if features.dim() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "model fitted on {} features, got {}",
                self.mean.len(),
                features.dim()
            )));
        }
        let k = self.axes.len();
        let mut out = Vec::with_capacity(features.n_cells() * k);
        for row in features.rows() {
            for axis in &self.axes {
                let mut s = 0.0;
                for ((x, m), a) in row.iter().zip(&self.mean).zip(axis) {
                    s += (x - m) * a;
                }
                out.push(s);
            }
        }
        EmbeddingMatrix::new(features.cell_ids().to_vec(), out, k)
    }
}

/// Eigenpairs of the covariance of `rows`, sorted by decreasing eigenvalue.
fn covariance_eigen(features: &EmbeddingMatrix) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let n = features.n_cells();
    let g = features.dim();
    let mut mean = vec![0.0; g];
    for row in features.rows() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(g, g);
    let mut centered = vec![0.0; g];
    for row in features.rows() {
        for (c, (x, m)) in centered.iter_mut().zip(row.iter().zip(&mean)) {
            *c = x - m;
        }
        for a in 0..g {
            let ca = centered[a];
            for b in a..g {
                cov[(a, b)] += ca * centered[b];
            }
        }
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    for a in 0..g {
        for b in a..g {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v
                .iter()
                .copied()
                .fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    (mean, values, vectors)
}

fn numeric_rank(values: &[f64]) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    if top <= 0.0 {
        return 0;
    }
    values.iter().filter(|&&v| v > RANK_TOL * top).count()
}

/// Fits the top `components` principal axes of `features`.
pub fn fit_pca(features: &EmbeddingMatrix, components: usize) -> Result<PcaModel> {
    let limit = features.n_cells().min(features.dim());
    if components == 0 || components > limit {
        return Err(Error::Validation(format!(
            "requested {components} components, must lie in 1..={limit}"
        )));
    }
    let (mean, values, vectors) = covariance_eigen(features);
    let rank = numeric_rank(&values);
    if components > rank {
        return Err(Error::Validation(format!(
            "requested {components} components but the data has rank {rank}"
        )));
    }
    let total_variance = values.iter().sum();
    Ok(PcaModel {
        mean,
        axes: vectors.into_iter().take(components).collect(),
        explained_variance: values.into_iter().take(components).collect(),
        total_variance,
    })
}

/// Projects `features` onto its top `components` principal axes.
pub fn pca(features: &EmbeddingMatrix, components: usize) -> Result<(EmbeddingMatrix, PcaModel)> {
    let model = fit_pca(features, components)?;
    Ok((model.transform(features)?, model))
}

/// Scores on up to `max_components` non-null principal axes.
pub(crate) fn principal_scores(features: &EmbeddingMatrix, max_components: usize) -> Vec<Vec<f64>> {
    let (mean, values, vectors) = covariance_eigen(features);
    let k = numeric_rank(&values).min(max_components);
    vectors
        .iter()
        .take(k)
        .map(|axis| {
            features
                .rows()
                .map(|row| {
                    row.iter()
                        .zip(&mean)
                        .zip(axis)
                        .map(|((x, m), a)| (x - m) * a)
                        .sum()
                })
                .collect()
        })
        .collect()
}
