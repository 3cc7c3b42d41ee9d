//! Embeddings, per-cell metadata and the batch-indexed FiLM adapter.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense N x d matrix of cell latent vectors, row-aligned with cell ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    cell_ids: Vec<String>,
    values: Vec<f64>,
    dim: usize,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major `values`.
    pub fn new(cell_ids: Vec<String>, values: Vec<f64>, dim: usize) -> Result<Self> {
        if cell_ids.is_empty() {
            return Err(Error::Empty("embedding has no cells".into()));
        }
        if dim == 0 {
            return Err(Error::Dimension("embedding dimension must be >= 1".into()));
        }
        if values.len() != cell_ids.len() * dim {
            return Err(Error::Dimension(format!(
                "{} values for {} cells of dimension {}",
                values.len(),
                cell_ids.len(),
                dim
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value at cell '{}', column {}",
                cell_ids[pos / dim],
                pos % dim
            )));
        }
        let mut seen = HashSet::with_capacity(cell_ids.len());
        for id in &cell_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("duplicate cell id '{id}'")));
            }
        }
        Ok(Self {
            cell_ids,
            values,
            dim,
        })
    }

    pub fn from_rows(cell_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(Error::Dimension(format!(
                "row {bad} has {} columns, expected {dim}",
                rows[bad].len()
            )));
        }
        if rows.len() != cell_ids.len() {
            return Err(Error::Dimension(format!(
                "{} rows for {} cell ids",
                rows.len(),
                cell_ids.len()
            )));
        }
        Self::new(cell_ids, rows.concat(), dim)
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    /// Row-major values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// New matrix with the given rows, in the given order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&i| self.cell_ids[i].clone()).collect();
        let mut values = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self::new(ids, values, self.dim)
    }

    /// Stacks `other` below `self`.
    pub fn concat(&self, other: &EmbeddingMatrix) -> Result<Self> {
        if other.dim != self.dim {
            return Err(Error::Dimension(format!(
                "cannot stack dimension {} onto {}",
                other.dim, self.dim
            )));
        }
        let mut ids = self.cell_ids.clone();
        ids.extend(other.cell_ids.iter().cloned());
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Self::new(ids, values, self.dim)
    }
}

/// Per-cell batch assignment and optional cell-type label.
///
/// Batches are indexed in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMetadata {
    cell_ids: Vec<String>,
    batch_names: Vec<String>,
    batch_of: Vec<usize>,
    label_names: Vec<String>,
    label_of: Option<Vec<usize>>,
}

fn index_by_first_appearance(values: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut names: Vec<String> = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let codes = values
        .iter()
        .map(|v| {
            *lookup.entry(v.as_str()).or_insert_with(|| {
                names.push(v.clone());
                names.len() - 1
            })
        })
        .collect();
    (names, codes)
}

impl CellMetadata {
    pub fn new(
        cell_ids: Vec<String>,
        batches: Vec<String>,
        labels: Option<Vec<String>>,
    ) -> Result<Self> {
        if cell_ids.is_empty() {
            return Err(Error::Empty("metadata has no cells".into()));
        }
        if batches.len() != cell_ids.len() {
            return Err(Error::Dimension(format!(
                "{} batch entries for {} cells",
                batches.len(),
                cell_ids.len()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != cell_ids.len() {
                return Err(Error::Validation(format!(
                    "labels cover {} of {} cells",
                    l.len(),
                    cell_ids.len()
                )));
            }
        }
        let mut seen = HashSet::with_capacity(cell_ids.len());
        for id in &cell_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate cell id '{id}' in metadata"
                )));
            }
        }
        let (batch_names, batch_of) = index_by_first_appearance(&batches);
        let (label_names, label_of) = match labels {
            Some(l) => {
                let (names, codes) = index_by_first_appearance(&l);
                (names, Some(codes))
            }
            None => (Vec::new(), None),
        };
        Ok(Self {
            cell_ids,
            batch_names,
            batch_of,
            label_names,
            label_of,
        })
    }

    pub fn n_cells(&self) -> usize {
        self.cell_ids.len()
    }

    pub fn cell_ids(&self) -> &[String] {
        &self.cell_ids
    }

    /// Batch names in canonical order.
    pub fn batch_names(&self) -> &[String] {
        &self.batch_names
    }

    pub fn n_batches(&self) -> usize {
        self.batch_names.len()
    }

    /// Per-cell batch index into [`Self::batch_names`].
    pub fn batch_codes(&self) -> &[usize] {
        &self.batch_of
    }

    pub fn batch_of(&self, cell: usize) -> &str {
        &self.batch_names[self.batch_of[cell]]
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.batch_names.len()];
        for &b in &self.batch_of {
            sizes[b] += 1;
        }
        sizes
    }

    /// Row indices of every cell in batch `b`, in row order.
    pub fn cells_in_batch(&self, b: usize) -> Vec<usize> {
        (0..self.n_cells())
            .filter(|&i| self.batch_of[i] == b)
            .collect()
    }

    pub fn has_labels(&self) -> bool {
        self.label_of.is_some()
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn label_codes(&self) -> Option<&[usize]> {
        self.label_of.as_deref()
    }

    pub fn label_of(&self, cell: usize) -> Option<&str> {
        self.label_of
            .as_ref()
            .map(|l| self.label_names[l[cell]].as_str())
    }

    /// Reorders the metadata to follow the embedding's row order.
    ///
    /// Batch order stays the metadata's first-appearance order. Metadata
    /// rows for cells absent from the embedding are dropped.
    pub fn aligned_to(&self, emb: &EmbeddingMatrix) -> Result<Self> {
        let position: HashMap<&str, usize> = self
            .cell_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut rows = Vec::with_capacity(emb.n_cells());
        for id in emb.cell_ids() {
            match position.get(id.as_str()) {
                Some(&i) => rows.push(i),
                None => return Err(Error::Validation(format!("no metadata for cell '{id}'"))),
            }
        }
        Ok(self.select_keeping_order(&rows))
    }

    /// Subset of cells; batches keep their relative canonical order.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("empty cell selection".into()));
        }
        Ok(self.select_keeping_order(rows))
    }

    fn select_keeping_order(&self, rows: &[usize]) -> Self {
        let present: HashSet<usize> = rows.iter().map(|&i| self.batch_of[i]).collect();
        let mut remap = vec![usize::MAX; self.batch_names.len()];
        let mut batch_names = Vec::new();
        for (b, name) in self.batch_names.iter().enumerate() {
            if present.contains(&b) {
                remap[b] = batch_names.len();
                batch_names.push(name.clone());
            }
        }
        let (label_names, label_of) = match &self.label_of {
            Some(codes) => {
                let present: HashSet<usize> = rows.iter().map(|&i| codes[i]).collect();
                let mut lremap = vec![usize::MAX; self.label_names.len()];
                let mut names = Vec::new();
                for (c, name) in self.label_names.iter().enumerate() {
                    if present.contains(&c) {
                        lremap[c] = names.len();
                        names.push(name.clone());
                    }
                }
                (
                    names,
                    Some(rows.iter().map(|&i| lremap[codes[i]]).collect()),
                )
            }
            None => (Vec::new(), None),
        };
        Self {
            cell_ids: rows.iter().map(|&i| self.cell_ids[i].clone()).collect(),
            batch_names,
            batch_of: rows.iter().map(|&i| remap[self.batch_of[i]]).collect(),
            label_names,
            label_of,
        }
    }

    pub(crate) fn check_aligned(&self, emb: &EmbeddingMatrix) -> Result<()> {
        if self.cell_ids.as_slice() != emb.cell_ids() {
            return Err(Error::Validation(
                "metadata rows are not aligned with embedding rows".into(),
            ));
        }
        Ok(())
    }
}

/// Per-batch scale (`gamma`) and shift (`beta`) tables, B x d each.
#[derive(Debug, Clone, PartialEq)]
pub struct FilmAdapter {
    batch_names: Vec<String>,
    dim: usize,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    frozen: Vec<bool>,
}

impl FilmAdapter {
    pub fn new(
        batch_names: Vec<String>,
        dim: usize,
        gamma: Vec<f64>,
        beta: Vec<f64>,
        frozen: Vec<bool>,
    ) -> Result<Self> {
        if batch_names.is_empty() {
            return Err(Error::Validation("adapter needs at least one batch".into()));
        }
        if dim == 0 {
            return Err(Error::Dimension("adapter dimension must be >= 1".into()));
        }
        let mut seen = HashSet::new();
        for name in &batch_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Validation(format!("duplicate batch name '{name}'")));
            }
        }
        let cells = batch_names.len() * dim;
        if gamma.len() != cells || beta.len() != cells {
            return Err(Error::Dimension(format!(
                "gamma/beta have {}/{} entries, expected {cells}",
                gamma.len(),
                beta.len()
            )));
        }
        if frozen.len() != batch_names.len() {
            return Err(Error::Dimension(format!(
                "{} frozen flags for {} batches",
                frozen.len(),
                batch_names.len()
            )));
        }
        if gamma.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "adapter contains non-finite values".into(),
            ));
        }
        Ok(Self {
            batch_names,
            dim,
            gamma,
            beta,
            frozen,
        })
    }

    /// Ones for every scale, zeros for every shift, nothing frozen.
    pub fn identity(batch_names: &[String], dim: usize) -> Result<Self> {
        let n = batch_names.len() * dim;
        Self::new(
            batch_names.to_vec(),
            dim,
            vec![1.0; n],
            vec![0.0; n],
            vec![false; batch_names.len()],
        )
    }

    pub fn batch_names(&self) -> &[String] {
        &self.batch_names
    }

    pub fn n_batches(&self) -> usize {
        self.batch_names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row_of(&self, batch: &str) -> Option<usize> {
        self.batch_names.iter().position(|b| b == batch)
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn gamma_row(&self, row: usize) -> &[f64] {
        &self.gamma[row * self.dim..(row + 1) * self.dim]
    }

    pub fn beta_row(&self, row: usize) -> &[f64] {
        &self.beta[row * self.dim..(row + 1) * self.dim]
    }

    pub(crate) fn set_row(&mut self, row: usize, gamma: &[f64], beta: &[f64]) {
        let span = row * self.dim..(row + 1) * self.dim;
        self.gamma[span.clone()].copy_from_slice(gamma);
        self.beta[span].copy_from_slice(beta);
    }

    pub(crate) fn gamma_mut(&mut self) -> &mut [f64] {
        &mut self.gamma
    }

    pub(crate) fn beta_mut(&mut self) -> &mut [f64] {
        &mut self.beta
    }

    pub fn frozen(&self) -> &[bool] {
        &self.frozen
    }

    pub fn is_frozen(&self, row: usize) -> bool {
        self.frozen[row]
    }

    pub fn freeze_all(&mut self) {
        self.frozen.iter_mut().for_each(|f| *f = true);
    }

    /// Appends identity rows for `names`, which must all be new.
    pub fn with_identity_rows(&self, names: &[String]) -> Result<Self> {
        let mut batch_names = self.batch_names.clone();
        batch_names.extend(names.iter().cloned());
        let mut gamma = self.gamma.clone();
        gamma.extend(std::iter::repeat_n(1.0, names.len() * self.dim));
        let mut beta = self.beta.clone();
        beta.extend(std::iter::repeat_n(0.0, names.len() * self.dim));
        let mut frozen = self.frozen.clone();
        frozen.extend(std::iter::repeat_n(false, names.len()));
        Self::new(batch_names, self.dim, gamma, beta, frozen)
    }

    /// Squared Frobenius norm of both tables.
    pub fn squared_norm(&self) -> f64 {
        self.gamma.iter().chain(&self.beta).map(|v| v * v).sum()
    }
}

/// Identity adapter for the given batches.
pub fn identity_adapter(batch_names: &[String], dim: usize) -> Result<FilmAdapter> {
    FilmAdapter::identity(batch_names, dim)
}

/// Computes `gamma_b * z_i + beta_b` for every cell `i` of batch `b`.
pub fn apply_adapter(
    emb: &EmbeddingMatrix,
    meta: &CellMetadata,
    adapter: &FilmAdapter,
) -> Result<EmbeddingMatrix> {
    meta.check_aligned(emb)?;
    if adapter.dim() != emb.dim() {
        return Err(Error::Dimension(format!(
            "adapter dimension {} does not match embedding dimension {}",
            adapter.dim(),
            emb.dim()
        )));
    }
    let rows: Vec<usize> = meta
        .batch_names()
        .iter()
        .map(|name| {
            adapter
                .row_of(name)
                .ok_or_else(|| Error::MissingAdapterRow(name.clone()))
        })
        .collect::<Result<_>>()?;

    let d = emb.dim();
    let codes = meta.batch_codes();
    let mut out = vec![0.0; emb.values().len()];
    out.par_chunks_mut(d)
        .zip(emb.values().par_chunks(d))
        .enumerate()
        .for_each(|(i, (dst, z))| {
            let r = rows[codes[i]];
            let g = adapter.gamma_row(r);
            let b = adapter.beta_row(r);
            for j in 0..d {
                // skipping a zero shift keeps -0.0 intact under the identity
                dst[j] = if b[j] == 0.0 {
                    g[j] * z[j]
                } else {
                    g[j] * z[j] + b[j]
                };
            }
        });
    EmbeddingMatrix::new(emb.cell_ids().to_vec(), out, d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_cell_scale_and_shift() {
        let emb = EmbeddingMatrix::new(ids(1), vec![2.0, -1.0], 2).unwrap();
        let meta = CellMetadata::new(ids(1), names(&["b"]), None).unwrap();
        let adapter = FilmAdapter::new(
            names(&["b"]),
            2,
            vec![0.5, 2.0],
            vec![1.0, 0.0],
            vec![false],
        )
        .unwrap();
        let out = apply_adapter(&emb, &meta, &adapter).unwrap();
        assert_eq!(out.values(), &[2.0, -2.0]);
        // input untouched
        assert_eq!(emb.values(), &[2.0, -1.0]);
    }

    #[test]
    fn identity_tables() {
        let a = identity_adapter(&names(&["A", "B"]), 2).unwrap();
        assert_eq!(a.gamma(), &[1.0; 4]);
        assert_eq!(a.beta(), &[0.0; 4]);
        assert!(a.frozen().iter().all(|f| !f));
        let one = identity_adapter(&names(&["A"]), 1).unwrap();
        assert_eq!(one.gamma(), &[1.0]);
        assert_eq!(one.beta(), &[0.0]);
    }

    #[test]
    fn identity_rejects_duplicates() {
        assert!(matches!(
            identity_adapter(&names(&["A", "A"]), 2),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn identity_application_is_bit_exact() {
        let vals = vec![1e-300, -0.0, 3.5, f64::MAX, -7.25, 1.0 / 3.0];
        let emb = EmbeddingMatrix::new(ids(3), vals.clone(), 2).unwrap();
        let meta = CellMetadata::new(ids(3), names(&["x", "y", "x"]), None).unwrap();
        let a = identity_adapter(meta.batch_names(), 2).unwrap();
        let out = apply_adapter(&emb, &meta, &a).unwrap();
        for (o, v) in out.values().iter().zip(&vals) {
            assert_eq!(o.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn matches_scalar_loop() {
        let vals = vec![0.3, -1.2, 2.0, 4.5, -0.7, 0.05];
        let emb = EmbeddingMatrix::new(ids(3), vals.clone(), 2).unwrap();
        let meta = CellMetadata::new(ids(3), names(&["p", "q", "p"]), None).unwrap();
        let g = vec![1.5, 0.25, -2.0, 3.0];
        let b = vec![0.1, -0.4, 7.0, 0.5];
        let a =
            FilmAdapter::new(names(&["p", "q"]), 2, g.clone(), b.clone(), vec![false; 2]).unwrap();
        let out = apply_adapter(&emb, &meta, &a).unwrap();
        let rows = [0usize, 1, 0];
        for i in 0..3 {
            for j in 0..2 {
                let expect = g[rows[i] * 2 + j] * vals[i * 2 + j] + b[rows[i] * 2 + j];
                assert_eq!(out.values()[i * 2 + j], expect);
            }
        }
    }

    #[test]
    fn unknown_batch_and_dimension_errors() {
        let emb = EmbeddingMatrix::new(ids(2), vec![1.0, 2.0, 3.0, 4.0], 2).unwrap();
        let meta = CellMetadata::new(ids(2), names(&["A", "Z"]), None).unwrap();
        let a = identity_adapter(&names(&["A"]), 2).unwrap();
        match apply_adapter(&emb, &meta, &a) {
            Err(Error::MissingAdapterRow(b)) => assert_eq!(b, "Z"),
            other => panic!("unexpected {other:?}"),
        }
        let wide = identity_adapter(&names(&["A", "Z"]), 3).unwrap();
        assert!(matches!(
            apply_adapter(&emb, &meta, &wide),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn batch_order_is_first_appearance() {
        let meta = CellMetadata::new(ids(4), names(&["k", "a", "k", "z"]), None).unwrap();
        assert_eq!(meta.batch_names(), &names(&["k", "a", "z"])[..]);
        assert_eq!(meta.batch_sizes(), vec![2, 1, 1]);
    }

    #[test]
    fn embedding_validation() {
        assert!(EmbeddingMatrix::new(ids(1), vec![f64::NAN], 1).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into(), "a".into()], vec![1.0, 2.0], 1).is_err());
        assert!(EmbeddingMatrix::new(ids(2), vec![1.0], 1).is_err());
        assert!(CellMetadata::new(ids(2), names(&["a", "b"]), Some(names(&["t"]))).is_err());
    }

    #[test]
    fn alignment_follows_embedding_order() {
        let emb = EmbeddingMatrix::new(names(&["y", "x"]), vec![1.0, 2.0], 1).unwrap();
        let meta = CellMetadata::new(names(&["x", "y"]), names(&["B1", "B2"]), None).unwrap();
        let aligned = meta.aligned_to(&emb).unwrap();
        assert_eq!(aligned.cell_ids(), emb.cell_ids());
        assert_eq!(aligned.batch_of(0), "B2");
        assert_eq!(aligned.batch_names(), &names(&["B1", "B2"])[..]);
        let missing = EmbeddingMatrix::new(names(&["w"]), vec![1.0], 1).unwrap();
        assert!(meta.aligned_to(&missing).is_err());
    }
}
