//! k-nearest-neighbour graph, graph connectivity and LISI.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

/// Exact Euclidean kNN lists; ties are broken by row index.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    /// Requested neighbourhood size.
    pub k: usize,
    /// `min(k, N - 1)` nearest other cells per row, nearest first.
    pub neighbors: Vec<Vec<usize>>,
}

impl NeighborGraph {
    pub fn build(emb: &EmbeddingMatrix, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("neighbourhood size must be >= 1".into()));
        }
        let n = emb.n_cells();
        let take = k.min(n - 1);
        let neighbors = (0..n)
            .into_par_iter()
            .map(|i| {
                let zi = emb.row(i);
                let mut cand: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d: f64 = zi
                            .iter()
                            .zip(emb.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum();
                        (d, j)
                    })
                    .collect();
                let cmp =
                    |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
                if take < cand.len() && take > 0 {
                    cand.select_nth_unstable_by(take - 1, cmp);
                }
                cand.truncate(take);
                cand.sort_by(cmp);
                cand.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        Ok(Self { k, neighbors })
    }

    pub fn n_cells(&self) -> usize {
        self.neighbors.len()
    }

    /// Undirected adjacency: `j` is adjacent to `i` if either lists the other.
    pub fn symmetric_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj: Vec<Vec<usize>> = self.neighbors.clone();
        for (i, list) in self.neighbors.iter().enumerate() {
            for &j in list {
                adj[j].push(i);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}

/// Per label, the largest connected share of the label's induced subgraph
/// on the symmetrized kNN edges; averaged over labels.
pub fn graph_connectivity(graph: &NeighborGraph, labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("graph connectivity on zero cells".into()));
    }
    if labels.len() != graph.n_cells() {
        return Err(Error::Dimension("labels do not match graph size".into()));
    }
    let adj = graph.symmetric_adjacency();
    let n_labels = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; labels.len()];
    let mut largest = vec![0usize; n_labels];
    let mut sizes = vec![0usize; n_labels];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        let label = labels[start];
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0;
        while let Some(u) = queue.pop_front() {
            size += 1;
            for &v in &adj[u] {
                if !seen[v] && labels[v] == label {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        largest[label] = largest[label].max(size);
    }
    let present: Vec<usize> = (0..n_labels).filter(|&l| sizes[l] > 0).collect();
    Ok(present
        .iter()
        .map(|&l| largest[l] as f64 / sizes[l] as f64)
        .sum::<f64>()
        / present.len() as f64)
}

/// Inverse Simpson index of `groups` over each cell's neighbour list.
pub fn lisi(graph: &NeighborGraph, groups: &[usize]) -> Result<Vec<f64>> {
    let n = graph.n_cells();
    if groups.len() != n {
        return Err(Error::Dimension("groups do not match graph size".into()));
    }
    if graph.k >= n {
        return Err(Error::Validation(format!(
            "LISI needs k < N (k = {}, N = {n})",
            graph.k
        )));
    }
    let n_groups = groups.iter().max().map_or(0, |m| m + 1);
    Ok(graph
        .neighbors
        .iter()
        .map(|list| {
            let mut counts = vec![0usize; n_groups];
            for &j in list {
                counts[groups[j]] += 1;
            }
            let k = list.len() as f64;
            let simpson: f64 = counts.iter().map(|&c| (c as f64 / k).powi(2)).sum();
            1.0 / simpson
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(mean iLISI - 1) / (B - 1)`, clamped to `[0, 1]`.
pub fn ilisi_score(per_cell: &[f64], n_batches: usize) -> Result<f64> {
    if n_batches < 2 {
        return Err(Error::Validation("iLISI needs at least two batches".into()));
    }
    Ok(((mean(per_cell) - 1.0) / (n_batches - 1) as f64).clamp(0.0, 1.0))
}

/// `(C - mean cLISI) / (C - 1)`, clamped to `[0, 1]`; 1 for a single type.
pub fn clisi_score(per_cell: &[f64], n_types: usize) -> f64 {
    if n_types < 2 {
        return 1.0;
    }
    let c = n_types as f64;
    ((c - mean(per_cell)) / (c - 1.0)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            (0..xs.len()).map(|i| format!("x{i}")).collect(),
            xs.to_vec(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn neighbour_lists() {
        let g = NeighborGraph::build(&line(&[0.0, 1.0, 3.0, 10.0]), 2).unwrap();
        assert_eq!(g.neighbors[0], vec![1, 2]);
        assert_eq!(g.neighbors[3], vec![2, 1]);
        let big = NeighborGraph::build(&line(&[0.0, 1.0]), 15).unwrap();
        assert_eq!(big.neighbors, vec![vec![1], vec![0]]);
    }

    #[test]
    fn inverse_simpson_values() {
        let g = NeighborGraph {
            k: 4,
            neighbors: vec![
                vec![1, 2, 3, 4],
                vec![0, 2, 3, 4],
                vec![0, 1, 3, 4],
                vec![0, 1, 2, 4],
                vec![0, 1, 2, 3],
            ],
        };
        let same = lisi(&g, &[0, 0, 0, 0, 0]).unwrap();
        assert_eq!(same[0], 1.0);
        // cell 4 sees groups [0, 0, 1, 1]
        let half = lisi(&g, &[0, 0, 1, 1, 2]).unwrap();
        assert_eq!(half[4], 2.0);
        // cell 0 sees [0, 1, 1, 2] -> proportions 1/4, 1/2, 1/4
        assert!((half[0] - 8.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn connectivity_fraction() {
        // label 0 = {0,1,2,3}; 3 is only linked to a label-1 cell
        let g = NeighborGraph {
            k: 1,
            neighbors: vec![vec![1], vec![2], vec![1], vec![4], vec![3]],
        };
        let c = graph_connectivity(&g, &[0, 0, 0, 0, 1]).unwrap();
        assert!((c - (0.75 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rescaling() {
        assert_eq!(ilisi_score(&[2.0, 2.0], 2).unwrap(), 1.0);
        assert_eq!(ilisi_score(&[1.0], 3).unwrap(), 0.0);
        assert!(ilisi_score(&[1.0], 1).is_err());
        assert_eq!(clisi_score(&[1.0, 1.0], 4), 1.0);
        assert_eq!(clisi_score(&[4.0], 4), 0.0);
    }

    #[test]
    fn lisi_rejects_k_at_least_n() {
        let g = NeighborGraph::build(&line(&[0.0, 1.0, 2.0]), 3).unwrap();
        assert!(lisi(&g, &[0, 1, 0]).is_err());
    }
}
