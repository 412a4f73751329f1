//! Embedding database with exact nearest-neighbour search, its on-disk
//! format, and synthetic Gaussian-mixture worlds.

mod io;
mod world;

pub use io::{load_db, read_db, save_db, write_db};
pub use world::{generate_world, Query, Split, SyntheticWorld, WorldParams};

use std::collections::HashMap;
use std::ops::Deref;

use crate::error::{Error, Result};
use crate::numerics::l2_norm;

/// A dense embedding vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps raw values without normalising.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::domain("empty embedding"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite embedding value"));
        }
        Ok(Self(values))
    }

    /// Scales `values` to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::numeric(format!(
                "cannot normalise vector with norm {norm}"
            )));
        }
        Self::new(values.into_iter().map(|v| v / norm).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl Deref for Embedding {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

#[inline]
fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = l2_norm(a);
    let nb = l2_norm(b);
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    crate::numerics::dot(a, b) / (na * nb)
}

/// One search hit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

/// Immutable collection of `(id, embedding)` items sharing one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingDb {
    dim: usize,
    ids: Vec<u64>,
    // row-major, one row per item
    values: Vec<f64>,
    index: HashMap<u64, usize>,
}

impl EmbeddingDb {
    pub fn new(dim: usize, items: Vec<(u64, Embedding)>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("dimension must be positive"));
        }
        let mut index = HashMap::with_capacity(items.len());
        let mut ids = Vec::with_capacity(items.len());
        let mut values = Vec::with_capacity(items.len() * dim);
        for (id, e) in items {
            if e.dim() != dim {
                return Err(Error::shape(format!(
                    "item {id} has dimension {}, database has {dim}",
                    e.dim()
                )));
            }
            if index.insert(id, ids.len()).is_some() {
                return Err(Error::domain(format!("duplicate id {id}")));
            }
            ids.push(id);
            values.extend_from_slice(e.values());
        }
        Ok(Self {
            dim,
            ids,
            values,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn id_at(&self, index: usize) -> u64 {
        self.ids[index]
    }

    pub fn vector_at(&self, index: usize) -> &[f64] {
        &self.values[index * self.dim..(index + 1) * self.dim]
    }

    pub fn index_of(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<&[f64]> {
        self.index_of(id).map(|i| self.vector_at(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &[f64])> + '_ {
        self.ids
            .iter()
            .copied()
            .zip(self.values.chunks_exact(self.dim))
    }

    /// Exact top-`n` by Euclidean distance, ascending, ties by ascending id.
    ///
    /// Returns every item when `n` exceeds the database size.
    pub fn knn(&self, query: &[f64], n: usize) -> Result<Vec<Neighbor>> {
        let hits = self.knn_indices(query, n)?;
        Ok(hits
            .into_iter()
            .map(|(i, d2)| Neighbor {
                id: self.ids[i],
                distance: d2.sqrt(),
            })
            .collect())
    }

    /// Like [`knn`](Self::knn) but returns `(row index, squared distance)`.
    pub fn knn_indices(&self, query: &[f64], n: usize) -> Result<Vec<(usize, f64)>> {
        if self.is_empty() {
            return Err(Error::domain("search on an empty database"));
        }
        if n == 0 {
            return Err(Error::domain("n must be at least 1"));
        }
        if query.len() != self.dim {
            return Err(Error::shape(format!(
                "query dimension {} vs database {}",
                query.len(),
                self.dim
            )));
        }
        let mut scored: Vec<(f64, u64, usize)> = self
            .values
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, v)| (squared_distance(query, v), self.ids[i], i))
            .collect();
        let order = |a: &(f64, u64, usize), b: &(f64, u64, usize)| {
            a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
        };
        let n = n.min(scored.len());
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, order);
            scored.truncate(n);
        }
        scored.sort_unstable_by(order);
        Ok(scored.into_iter().map(|(d2, _, i)| (i, d2)).collect())
    }

    /// Distance from `query` to its nearest item.
    pub fn nearest_distance(&self, query: &[f64]) -> Result<f64> {
        Ok(self.knn_indices(query, 1)?[0].1.sqrt())
    }
}
