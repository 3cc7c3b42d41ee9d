//! K-means and partition-agreement scores.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ITERATIONS: usize = 300;
pub const TOLERANCE: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    /// Row-major `k x d`.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(point, centroid);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn plus_plus_seeds<R: Rng>(emb: &EmbeddingMatrix, k: usize, rng: &mut R) -> Vec<f64> {
    let n = emb.n_cells();
    let d = emb.dim();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut closest: Vec<f64> = emb.rows().map(|r| sq_dist(r, emb.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = closest.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // every point coincides with a centroid already
            (0..n).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (c, row) in closest.iter_mut().zip(emb.rows()) {
            *c = c.min(sq_dist(row, emb.row(next)));
        }
    }
    let mut centroids = Vec::with_capacity(k * d);
    for &i in &chosen {
        centroids.extend_from_slice(emb.row(i));
    }
    centroids
}

fn lloyd(emb: &EmbeddingMatrix, mut centroids: Vec<f64>, k: usize) -> Clustering {
    let d = emb.dim();
    let n = emb.n_cells();
    let mut labels = vec![0; n];
    let mut iterations = 0;
    for _ in 0..MAX_ITERATIONS {
        iterations += 1;
        let mut dists = vec![0.0; n];
        for (i, row) in emb.rows().enumerate() {
            let (c, dist) = nearest(row, &centroids, d);
            labels[i] = c;
            dists[i] = dist;
        }
        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (row, &c) in emb.rows().zip(&labels) {
            counts[c] += 1;
            for (s, x) in sums[c * d..(c + 1) * d].iter_mut().zip(row) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster at the worst-served point
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                dists[far] = 0.0;
                sums[c * d..(c + 1) * d].copy_from_slice(emb.row(far));
                counts[c] = 1;
            }
        }
        let mut shift = 0.0_f64;
        for c in 0..k {
            let inv = 1.0 / counts[c] as f64;
            let old = &mut centroids[c * d..(c + 1) * d];
            let mut moved = 0.0;
            for (o, s) in old.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                let new = s * inv;
                moved += (new - *o) * (new - *o);
                *o = new;
            }
            shift = shift.max(moved.sqrt());
        }
        if shift <= TOLERANCE {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, row) in emb.rows().enumerate() {
        let (c, dist) = nearest(row, &centroids, d);
        labels[i] = c;
        inertia += dist;
    }
    Clustering {
        labels,
        centroids,
        inertia,
        iterations,
    }
}

/// Lloyd's algorithm from k-means++ seeds, best of `restarts` by inertia.
pub fn kmeans_with_restarts(
    emb: &EmbeddingMatrix,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Clustering> {
    if k == 0 || k > emb.n_cells() {
        return Err(Error::Validation(format!(
            "k-means needs 1 <= k <= {} (got {k})",
            emb.n_cells()
        )));
    }
    let runs: Vec<Clustering> = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, &[rng::KMEANS, r as u64]);
            lloyd(emb, plus_plus_seeds(emb, k, &mut rng), k)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.inertia < runs[best].inertia {
            best = i;
        }
    }
    Ok(runs.into_iter().nth(best).expect("at least one restart"))
}

pub fn kmeans(emb: &EmbeddingMatrix, k: usize, seed: u64) -> Result<Clustering> {
    kmeans_with_restarts(emb, k, seed, DEFAULT_RESTARTS)
}

struct Contingency {
    n: f64,
    joint: HashMap<(usize, usize), f64>,
    left: HashMap<usize, f64>,
    right: HashMap<usize, f64>,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency> {
    if a.is_empty() {
        return Err(Error::Empty("partition comparison on zero items".into()));
    }
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "partitions of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut joint = HashMap::new();
    let mut left = HashMap::new();
    let mut right = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *joint.entry((x, y)).or_insert(0.0) += 1.0;
        *left.entry(x).or_insert(0.0) += 1.0;
        *right.entry(y).or_insert(0.0) += 1.0;
    }
    Ok(Contingency {
        n: a.len() as f64,
        joint,
        left,
        right,
    })
}

fn sorted_values(m: &HashMap<usize, f64>) -> Vec<f64> {
    let mut keys: Vec<_> = m.keys().copied().collect();
    keys.sort_unstable();
    keys.iter().map(|k| m[k]).collect()
}

fn entropy(counts: &[f64], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| {
            let p = c / n;
            -p * p.ln()
        })
        .sum()
}

/// `2 I(C;Y) / (H(C) + H(Y))`, natural log; 1 when both entropies vanish.
pub fn nmi(clusters: &[usize], labels: &[usize]) -> Result<f64> {
    let t = contingency(clusters, labels)?;
    let hc = entropy(&sorted_values(&t.left), t.n);
    let hy = entropy(&sorted_values(&t.right), t.n);
    if hc + hy == 0.0 {
        return Ok(1.0);
    }
    let mut keys: Vec<_> = t.joint.keys().copied().collect();
    keys.sort_unstable();
    let mut mi = 0.0;
    for key in keys {
        let nij = t.joint[&key];
        let pij = nij / t.n;
        let pi = t.left[&key.0] / t.n;
        let pj = t.right[&key.1] / t.n;
        mi += pij * (pij / (pi * pj)).ln();
    }
    Ok((2.0 * mi / (hc + hy)).clamp(0.0, 1.0))
}

fn pairs(x: f64) -> f64 {
    x * (x - 1.0) / 2.0
}

/// Pair-counting adjusted Rand index.
pub fn ari(clusters: &[usize], labels: &[usize]) -> Result<f64> {
    let t = contingency(clusters, labels)?;
    let mut keys: Vec<_> = t.joint.keys().copied().collect();
    keys.sort_unstable();
    let index: f64 = keys.iter().map(|k| pairs(t.joint[k])).sum();
    let a: f64 = sorted_values(&t.left).into_iter().map(pairs).sum();
    let b: f64 = sorted_values(&t.right).into_iter().map(pairs).sum();
    let total = pairs(t.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    // scaled by `total` so integer-valued inputs stay exact
    let num = index * total - a * b;
    let den = 0.5 * (a + b) * total - a * b;
    if den == 0.0 {
        return Ok(1.0);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolatedLabelF1 {
    pub score: f64,
    /// Label codes present in the fewest batches.
    pub isolated: Vec<usize>,
    /// Every label sits in the same number of batches, so all count as
    /// isolated.
    pub all_labels_isolated: bool,
}

/// Best-cluster F1 of each isolated label, averaged.
pub fn isolated_label_f1(
    batches: &[usize],
    labels: &[usize],
    clusters: &[usize],
) -> Result<IsolatedLabelF1> {
    if labels.is_empty() {
        return Err(Error::Empty("isolated-label F1 on zero cells".into()));
    }
    if batches.len() != labels.len() || clusters.len() != labels.len() {
        return Err(Error::Dimension(
            "batch, label and cluster vectors differ in length".into(),
        ));
    }
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let n_clusters = clusters.iter().max().map_or(0, |m| m + 1);
    let mut batches_of: Vec<Vec<usize>> = vec![Vec::new(); n_labels];
    for (&l, &b) in labels.iter().zip(batches) {
        if !batches_of[l].contains(&b) {
            batches_of[l].push(b);
        }
    }
    let present: Vec<usize> = (0..n_labels)
        .filter(|&l| !batches_of[l].is_empty())
        .collect();
    let fewest = present
        .iter()
        .map(|&l| batches_of[l].len())
        .min()
        .unwrap_or(0);
    let isolated: Vec<usize> = present
        .iter()
        .copied()
        .filter(|&l| batches_of[l].len() == fewest)
        .collect();

    let mut cluster_size = vec![0usize; n_clusters];
    for &c in clusters {
        cluster_size[c] += 1;
    }
    let mut total = 0.0;
    for &label in &isolated {
        let mut overlap = vec![0usize; n_clusters];
        let mut label_size = 0;
        for (&l, &c) in labels.iter().zip(clusters) {
            if l == label {
                overlap[c] += 1;
                label_size += 1;
            }
        }
        let best = (0..n_clusters)
            .map(|c| {
                let tp = overlap[c] as f64;
                if tp == 0.0 {
                    return 0.0;
                }
                let precision = tp / cluster_size[c] as f64;
                let recall = tp / label_size as f64;
                2.0 * precision * recall / (precision + recall)
            })
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(IsolatedLabelF1 {
        score: total / isolated.len() as f64,
        all_labels_isolated: isolated.len() == present.len(),
        isolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_and_independent_partitions() {
        let a = [0, 0, 1, 1, 2, 2];
        assert_eq!(nmi(&a, &a).unwrap(), 1.0);
        assert_eq!(ari(&a, &a).unwrap(), 1.0);
        assert!(nmi(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap().abs() < 1e-15);
        assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn degenerate_partitions() {
        assert_eq!(nmi(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert_eq!(ari(&[3, 3, 3], &[1, 1, 1]).unwrap(), 1.0);
        assert!(nmi(&[], &[]).is_err());
        assert!(ari(&[], &[]).is_err());
    }

    #[test]
    fn f1_half_captured_label() {
        // label 1 only in batch 0; cluster 2 holds half of it and nothing else
        let batches = [0, 0, 0, 0, 1, 1, 0, 1];
        let labels = [1, 1, 1, 1, 0, 0, 0, 0];
        let clusters = [2, 2, 0, 0, 1, 1, 1, 1];
        let f = isolated_label_f1(&batches, &labels, &clusters).unwrap();
        assert_eq!(f.isolated, vec![1]);
        // cluster 0 also holds exactly half of label 1 and nothing else
        assert!((f.score - 2.0 / 3.0).abs() < 1e-15);
        assert!(!f.all_labels_isolated);
    }

    #[test]
    fn f1_perfect_capture_and_flag() {
        let f = isolated_label_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], &[5, 6, 5, 6]).unwrap();
        assert_eq!(f.score, 1.0);
        assert!(f.all_labels_isolated);
    }

    fn points(rows: &[Vec<f64>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows((0..rows.len()).map(|i| format!("p{i}")).collect(), rows)
            .unwrap()
    }

    #[test]
    fn kmeans_edge_counts() {
        let e = points(&[vec![0.0], vec![1.0], vec![5.0], vec![9.0]]);
        let one = kmeans(&e, 1, 3).unwrap();
        assert!(one.labels.iter().all(|&l| l == 0));
        let all = kmeans(&e, 4, 3).unwrap();
        assert_eq!(all.inertia, 0.0);
        let mut l = all.labels.clone();
        l.sort();
        l.dedup();
        assert_eq!(l.len(), 4);
        assert!(kmeans(&e, 5, 3).is_err());
        assert_eq!(kmeans(&e, 2, 9).unwrap(), kmeans(&e, 2, 9).unwrap());
    }
}
