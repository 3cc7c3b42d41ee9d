//! Independent reference computations shared by the integration tests.
//!
//! Everything here is written from the textbook definitions, without
//! reusing library code paths, so the library can be checked against it.

#![allow(dead_code)]

use fedfilm::{CellMetadata, EmbeddingMatrix, FilmAdapter};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn matrix(rows: &[Vec<f64>]) -> EmbeddingMatrix {
    let ids = (0..rows.len()).map(|i| format!("c{i}")).collect();
    EmbeddingMatrix::from_rows(ids, rows).unwrap()
}

pub fn random_rows(r: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| r.random_range(-spread..spread)).collect())
        .collect()
}

pub fn names(n: usize) -> Vec<String> {
    (0..n).map(|b| format!("b{b}")).collect()
}

pub fn metadata(batches: &[usize], labels: Option<&[usize]>) -> CellMetadata {
    CellMetadata::new(
        (0..batches.len()).map(|i| format!("c{i}")).collect(),
        batches.iter().map(|b| format!("b{b}")).collect(),
        labels.map(|l| l.iter().map(|c| format!("t{c}")).collect()),
    )
    .unwrap()
}

pub fn adapter(gamma: &[Vec<f64>], beta: &[Vec<f64>]) -> FilmAdapter {
    let d = gamma[0].len();
    FilmAdapter::new(
        names(gamma.len()),
        d,
        gamma.concat(),
        beta.concat(),
        vec![false; gamma.len()],
    )
    .unwrap()
}

/// Minimizer of the per-dimension quadratic local objective.
///
/// For one coordinate with `s1 = mean z`, `s2 = mean z^2`, setting both
/// partial derivatives to zero gives
///
/// ```text
/// [ s2 + mu + lambda   s1               ] [g]   [ s2 + mu * g0 ]
/// [ s1                 1 + mu + lambda  ] [b] = [ s1 + mu * b0 ]
/// ```
pub fn closed_form_minimizer(
    cells: &[Vec<f64>],
    anchor_gamma: &[f64],
    anchor_beta: &[f64],
    mu: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let m = cells.len() as f64;
    let d = anchor_gamma.len();
    let mut gamma = vec![0.0; d];
    let mut beta = vec![0.0; d];
    for j in 0..d {
        let s1 = cells.iter().map(|z| z[j]).sum::<f64>() / m;
        let s2 = cells.iter().map(|z| z[j] * z[j]).sum::<f64>() / m;
        let a11 = s2 + mu + lambda;
        let a12 = s1;
        let a22 = 1.0 + mu + lambda;
        let r1 = s2 + mu * anchor_gamma[j];
        let r2 = s1 + mu * anchor_beta[j];
        let det = a11 * a22 - a12 * a12;
        gamma[j] = (r1 * a22 - a12 * r2) / det;
        beta[j] = (a11 * r2 - a12 * r1) / det;
    }
    (gamma, beta)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

// ---- clustering agreement ----

/// NMI through `I = H(X) + H(Y) - H(X, Y)` in bits, arithmetic-mean
/// normalisation.
pub fn nmi_oracle(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len() as f64;
    let h = |counts: Vec<usize>| -> f64 {
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.log2()
            })
            .sum()
    };
    let kx = x.iter().max().unwrap() + 1;
    let ky = y.iter().max().unwrap() + 1;
    let mut cx = vec![0; kx];
    let mut cy = vec![0; ky];
    let mut cxy = vec![0; kx * ky];
    for (&a, &b) in x.iter().zip(y) {
        cx[a] += 1;
        cy[b] += 1;
        cxy[a * ky + b] += 1;
    }
    let (hx, hy, hxy) = (h(cx), h(cy), h(cxy));
    if hx + hy == 0.0 {
        return 1.0;
    }
    2.0 * (hx + hy - hxy) / (hx + hy)
}

/// ARI from explicit enumeration of all unordered pairs.
pub fn ari_oracle(x: &[usize], y: &[usize]) -> f64 {
    let n = x.len();
    let (mut both, mut only_x, mut only_y, mut neither) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (x[i] == x[j], y[i] == y[j]) {
                (true, true) => both += 1.0,
                (true, false) => only_x += 1.0,
                (false, true) => only_y += 1.0,
                (false, false) => neither += 1.0,
            }
        }
    }
    let total = both + only_x + only_y + neither;
    let sx = both + only_x;
    let sy = both + only_y;
    // (index - expected) / (max - expected), multiplied through by `total`
    let num = both * total - sx * sy;
    let den = 0.5 * (sx + sy) * total - sx * sy;
    if den == 0.0 {
        return 1.0;
    }
    num / den
}

// ---- silhouette ----

pub fn silhouette_oracle(rows: &[Vec<f64>], groups: &[usize]) -> Vec<f64> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let own: Vec<usize> = (0..n)
                .filter(|&j| j != i && groups[j] == groups[i])
                .collect();
            if own.is_empty() {
                return 0.0;
            }
            let a = own.iter().map(|&j| euclid(&rows[i], &rows[j])).sum::<f64>() / own.len() as f64;
            let mut b = f64::INFINITY;
            let mut others: Vec<usize> =
                groups.iter().copied().filter(|&g| g != groups[i]).collect();
            others.sort_unstable();
            others.dedup();
            for g in others {
                let members: Vec<usize> = (0..n).filter(|&j| groups[j] == g).collect();
                let mean = members
                    .iter()
                    .map(|&j| euclid(&rows[i], &rows[j]))
                    .sum::<f64>()
                    / members.len() as f64;
                b = b.min(mean);
            }
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

// ---- neighbourhoods ----

/// k nearest other cells by full sort on (distance, index).
pub fn knn_oracle(rows: &[Vec<f64>], k: usize) -> Vec<Vec<usize>> {
    let n = rows.len();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let sq: f64 = rows[i]
                        .iter()
                        .zip(&rows[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (sq, j)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

pub fn lisi_oracle(neighbors: &[Vec<usize>], groups: &[usize]) -> Vec<f64> {
    neighbors
        .iter()
        .map(|list| {
            let mut distinct: Vec<usize> = list.iter().map(|&j| groups[j]).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let k = list.len() as f64;
            let simpson: f64 = distinct
                .iter()
                .map(|&g| {
                    let c = list.iter().filter(|&&j| groups[j] == g).count() as f64;
                    (c / k) * (c / k)
                })
                .sum();
            1.0 / simpson
        })
        .collect()
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = x;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Union-find over kNN edges whose endpoints share a label.
pub fn connectivity_oracle(neighbors: &[Vec<usize>], labels: &[usize]) -> f64 {
    let n = labels.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for (i, list) in neighbors.iter().enumerate() {
        for &j in list {
            if labels[i] == labels[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut total = 0.0;
    for &l in &distinct {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == l).collect();
        let mut comp_sizes = std::collections::BTreeMap::new();
        for &i in &members {
            *comp_sizes.entry(find(&mut parent, i)).or_insert(0usize) += 1;
        }
        total += *comp_sizes.values().max().unwrap() as f64 / members.len() as f64;
    }
    total / distinct.len() as f64
}

/// Accepted cells per label, chi-square tail from `statrs`.
pub fn kbet_oracle(
    rows: &[Vec<f64>],
    batches: &[usize],
    labels: &[usize],
    k: usize,
    alpha: f64,
) -> f64 {
    let mut distinct: Vec<usize> = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut rates = Vec::new();
    for &l in &distinct {
        let cells: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == l).collect();
        let mut present: Vec<usize> = cells.iter().map(|&i| batches[i]).collect();
        present.sort_unstable();
        present.dedup();
        if present.len() < 2 {
            rates.push(1.0);
            continue;
        }
        let sub: Vec<Vec<f64>> = cells.iter().map(|&i| rows[i].clone()).collect();
        let nn = knn_oracle(&sub, k.min(cells.len() - 1));
        let chi = ChiSquared::new((present.len() - 1) as f64).unwrap();
        let mut accepted = 0;
        for list in &nn {
            let mut stat = 0.0;
            for &b in &present {
                let share =
                    cells.iter().filter(|&&i| batches[i] == b).count() as f64 / cells.len() as f64;
                let expected = share * list.len() as f64;
                let observed = list.iter().filter(|&&j| batches[cells[j]] == b).count() as f64;
                stat += (observed - expected).powi(2) / expected;
            }
            if chi.sf(stat) >= alpha {
                accepted += 1;
            }
        }
        rates.push(accepted as f64 / cells.len() as f64);
    }
    rates.iter().sum::<f64>() / rates.len() as f64
}

// ---- principal components ----

/// Cyclic Jacobi eigendecomposition of a symmetric matrix; eigenvectors are
/// the columns of the returned matrix.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Principal scores, largest variance first, dropping null directions.
pub fn pc_scores_oracle(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let cov: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    rows.iter()
                        .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                        .sum::<f64>()
                        / (n - 1) as f64
                })
                .collect()
        })
        .collect();
    let (values, vectors) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let top = values[order[0]];
    let keep: Vec<usize> = order
        .into_iter()
        .filter(|&i| values[i] > 1e-10 * top)
        .collect();
    let scores = keep
        .iter()
        .map(|&c| {
            rows.iter()
                .map(|r| (0..d).map(|j| (r[j] - mean[j]) * vectors[j][c]).sum())
                .collect()
        })
        .collect();
    (keep.iter().map(|&i| values[i]).collect(), scores)
}

/// Share of a vector's variance explained by its group means.
pub fn group_mean_r2(y: &[f64], groups: &[usize]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let total: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let mut distinct: Vec<usize> = groups.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let mut within = 0.0;
    for g in distinct {
        let members: Vec<f64> = y
            .iter()
            .zip(groups)
            .filter(|(_, &h)| h == g)
            .map(|(v, _)| *v)
            .collect();
        let m = members.iter().sum::<f64>() / members.len() as f64;
        within += members.iter().map(|v| (v - m).powi(2)).sum::<f64>();
    }
    1.0 - within / total
}

pub fn pcr_oracle(rows: &[Vec<f64>], batches: &[usize]) -> f64 {
    let (_, scores) = pc_scores_oracle(rows);
    let k = scores.len().min(50);
    1.0 - scores
        .iter()
        .take(k)
        .map(|s| group_mean_r2(s, batches))
        .sum::<f64>()
        / k as f64
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}
