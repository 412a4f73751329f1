//! Set-level rewards over a fan-out result and the Vendi Score.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::numerics::{sym_eigenvalues, Matrix};
use crate::store::{cosine, Embedding, EmbeddingDb};

/// Mixture weights of the composite abstract-retrieval reward.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardWeights {
    pub lambda_g: f64,
    pub lambda_d: f64,
    pub lambda_a: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            lambda_g: 0.6,
            lambda_d: 0.2,
            lambda_a: 0.2,
        }
    }
}

impl RewardWeights {
    pub fn new(lambda_g: f64, lambda_d: f64, lambda_a: f64) -> Result<Self> {
        let w = Self {
            lambda_g,
            lambda_d,
            lambda_a,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.lambda_g, self.lambda_d, self.lambda_a];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::domain("reward weights must be finite and non-negative"));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::domain("at least one reward weight must be positive"));
        }
        Ok(())
    }

    pub fn combine(&self, c: &RewardComponents) -> f64 {
        self.lambda_g * c.ground + self.lambda_d * c.div + self.lambda_a * c.align
    }
}

/// What one fan-out retrieved.
#[derive(Clone, Debug, PartialEq)]
pub struct FanOutResult {
    /// `e_text(q_i)` for each sub-query.
    pub sub_queries: Vec<Embedding>,
    /// Content embedding of the top-1 item retrieved by each sub-query.
    pub representatives: Vec<Embedding>,
    pub representative_ids: Vec<u64>,
    /// Ids retrieved by each sub-query, best first.
    pub per_sub_query: Vec<Vec<u64>>,
    /// Union of everything retrieved.
    pub retrieved_ids: BTreeSet<u64>,
}

impl FanOutResult {
    /// Runs `n` nearest-neighbour retrieval for every sub-query embedding.
    pub fn retrieve(sub_queries: Vec<Embedding>, db: &EmbeddingDb, n: usize) -> Result<Self> {
        if sub_queries.is_empty() {
            return Err(Error::domain("fan-out needs at least one sub-query"));
        }
        let mut representatives = Vec::with_capacity(sub_queries.len());
        let mut representative_ids = Vec::with_capacity(sub_queries.len());
        let mut per_sub_query = Vec::with_capacity(sub_queries.len());
        let mut retrieved_ids = BTreeSet::new();
        for q in &sub_queries {
            let hits = db.knn_indices(q, n)?;
            let top = hits[0].0;
            representatives.push(Embedding::new(db.vector_at(top).to_vec())?);
            representative_ids.push(db.id_at(top));
            let ids: Vec<u64> = hits.iter().map(|&(i, _)| db.id_at(i)).collect();
            retrieved_ids.extend(ids.iter().copied());
            per_sub_query.push(ids);
        }
        Ok(Self {
            sub_queries,
            representatives,
            representative_ids,
            per_sub_query,
            retrieved_ids,
        })
    }

    pub fn k(&self) -> usize {
        self.sub_queries.len()
    }

    fn check(&self) -> Result<()> {
        if self.sub_queries.is_empty() || self.sub_queries.len() != self.representatives.len() {
            return Err(Error::shape(format!(
                "{} sub-queries vs {} representatives",
                self.sub_queries.len(),
                self.representatives.len()
            )));
        }
        Ok(())
    }
}

/// Exponential of the von Neumann entropy of the cosine kernel `K/n`.
///
/// Eigenvalues are clamped at zero; `0·ln 0 = 0`. The score lies in `[1, n]`.
pub fn vendi_score<E: AsRef<[f64]>>(embeddings: &[E]) -> Result<f64> {
    let n = embeddings.len();
    if n == 0 {
        return Err(Error::domain("Vendi score of an empty set"));
    }
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k.set(i, i, 1.0 / n as f64);
        for j in i + 1..n {
            let s = cosine(embeddings[i].as_ref(), embeddings[j].as_ref()) / n as f64;
            k.set(i, j, s);
            k.set(j, i, s);
        }
    }
    let entropy: f64 = sym_eigenvalues(&k)?
        .into_iter()
        .map(|l| l.max(0.0))
        .filter(|&l| l > 0.0)
        .map(|l| -l * l.ln())
        .sum();
    Ok(entropy.exp())
}

/// One minus the mean distance from each sub-query to its nearest item.
/// Unclamped; negative values are possible on the unit sphere.
pub fn r_ground(result: &FanOutResult, db: &EmbeddingDb) -> Result<f64> {
    result.check()?;
    let mut total = 0.0;
    for q in &result.sub_queries {
        total += db.nearest_distance(q)?;
    }
    Ok(1.0 - total / result.k() as f64)
}

/// Mean cosine between each sub-query and the broad query.
pub fn r_align(query: &[f64], result: &FanOutResult) -> Result<f64> {
    result.check()?;
    let mut total = 0.0;
    for q in &result.sub_queries {
        if q.len() != query.len() {
            return Err(Error::shape("sub-query and query dimensions differ"));
        }
        total += cosine(q, query);
    }
    Ok(total / result.k() as f64)
}

/// Vendi Score of the top-1 representatives.
pub fn r_div(result: &FanOutResult) -> Result<f64> {
    result.check()?;
    vendi_score(&result.representatives)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RewardComponents {
    pub ground: f64,
    pub div: f64,
    pub align: f64,
}

pub fn reward_components(
    query: &[f64],
    result: &FanOutResult,
    db: &EmbeddingDb,
) -> Result<RewardComponents> {
    Ok(RewardComponents {
        ground: r_ground(result, db)?,
        div: r_div(result)?,
        align: r_align(query, result)?,
    })
}

/// Weighted sum of groundedness, diversity and alignment.
pub fn reward_abs(
    query: &[f64],
    result: &FanOutResult,
    db: &EmbeddingDb,
    w: &RewardWeights,
) -> Result<f64> {
    w.validate()?;
    Ok(w.combine(&reward_components(query, result, db)?))
}

/// Fraction of the reference set found anywhere in the fan-out union.
pub fn reward_set(result: &FanOutResult, reference: &BTreeSet<u64>) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::domain("empty reference set"));
    }
    let hit = reference
        .iter()
        .filter(|id| result.retrieved_ids.contains(id))
        .count();
    Ok(hit as f64 / reference.len() as f64)
}
