//! Categorical fan-out policy.
//!
//! Each sub-query is one token drawn from `softmax(W·z_q / τ)` over a finite
//! vocabulary; the token's vocabulary embedding is the sub-query embedding.
//! `k` tokens are drawn i.i.d. with replacement so per-token importance
//! ratios are exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{Reader, Writer};
use crate::numerics::{log_softmax, Matrix, Rng};
use crate::rewards::FanOutResult;
use crate::store::{Embedding, EmbeddingDb};

const MAGIC: &[u8; 4] = b"R4TP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    /// `V × d` scoring table.
    pub weight: Matrix,
    pub temperature: f64,
}

impl PolicyParams {
    pub fn new(weight: Matrix, temperature: f64) -> Result<Self> {
        if weight.rows() < 2 {
            return Err(Error::domain("policy needs at least two tokens"));
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::domain(format!("bad temperature {temperature}")));
        }
        if !weight.is_finite() {
            return Err(Error::numeric("non-finite policy weight"));
        }
        Ok(Self {
            weight,
            temperature,
        })
    }

    pub fn zeros(vocab: usize, dim: usize, temperature: f64) -> Result<Self> {
        Self::new(Matrix::zeros(vocab, dim), temperature)
    }

    /// Gaussian weights with standard deviation `scale`.
    pub fn random(vocab: usize, dim: usize, scale: f64, temperature: f64, rng: &mut Rng) -> Result<Self> {
        let data = (0..vocab * dim).map(|_| scale * rng.normal()).collect();
        Self::new(Matrix::from_vec(vocab, dim, data)?, temperature)
    }

    pub fn vocab_size(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn with_temperature(&self, temperature: f64) -> Result<Self> {
        Self::new(self.weight.clone(), temperature)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u32(self.vocab_size() as u32);
        w.u32(self.dim() as u32);
        w.f64(self.temperature);
        for &v in self.weight.as_slice() {
            w.f64(v);
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let v = r.u32("vocab size")? as usize;
        let d = r.u32("dim")? as usize;
        let at = r.offset();
        let temperature = r.f64("temperature")?;
        let data = r.f64_vec(v * d, "weights")?;
        r.finish()?;
        let weight = Matrix::from_vec(v, d, data).map_err(|e| Error::format(at, e.to_string()))?;
        Self::new(weight, temperature).map_err(|e| Error::format(at, e.to_string()))
    }
}

/// `W·z_q / τ`.
pub fn logits(params: &PolicyParams, z_q: &[f64]) -> Result<Vec<f64>> {
    let mut l = params.weight.matvec(z_q)?;
    l.iter_mut().for_each(|x| *x /= params.temperature);
    Ok(l)
}

/// Log-probabilities of every token for query `z_q`.
pub fn token_log_probs(params: &PolicyParams, z_q: &[f64]) -> Result<Vec<f64>> {
    log_softmax(&logits(params, z_q)?, 1.0)
}

/// Per-token `log π(o_t)` under `params`.
pub fn logp_current(params: &PolicyParams, z_q: &[f64], tokens: &[usize]) -> Result<Vec<f64>> {
    let lp = token_log_probs(params, z_q)?;
    tokens
        .iter()
        .map(|&t| {
            lp.get(t)
                .copied()
                .ok_or_else(|| Error::domain(format!("token {t} outside vocabulary of {}", lp.len())))
        })
        .collect()
}

/// One rollout of the policy for one query.
#[derive(Clone, Debug, PartialEq)]
pub struct FanOutSample {
    pub query_id: u64,
    pub tokens: Vec<usize>,
    /// `log π_old(o_t)` recorded at sampling time.
    pub logp_old: Vec<f64>,
    pub result: FanOutResult,
    /// Filled in once the rollout has been scored.
    pub reward: Option<f64>,
}

/// Draws `k` sub-query tokens and executes retrieval for each.
#[allow(clippy::too_many_arguments)]
pub fn sample_fanout(
    params: &PolicyParams,
    query_id: u64,
    z_q: &[f64],
    k: usize,
    rng: &mut Rng,
    vocab: &[Embedding],
    db: &EmbeddingDb,
    n_per_subquery: usize,
) -> Result<FanOutSample> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if vocab.is_empty() {
        return Err(Error::domain("empty vocabulary"));
    }
    if vocab.len() != params.vocab_size() {
        return Err(Error::shape(format!(
            "policy over {} tokens, vocabulary has {}",
            params.vocab_size(),
            vocab.len()
        )));
    }
    let lp = token_log_probs(params, z_q)?;
    let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
    let tokens: Vec<usize> = (0..k).map(|_| rng.categorical(&probs)).collect();
    let logp_old = tokens.iter().map(|&t| lp[t]).collect();
    let subs = tokens.iter().map(|&t| vocab[t].clone()).collect();
    let result = FanOutResult::retrieve(subs, db, n_per_subquery)?;
    Ok(FanOutSample {
        query_id,
        tokens,
        logp_old,
        result,
        reward: None,
    })
}
