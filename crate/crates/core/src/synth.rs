//! Supervision synthesis: turning trained-policy rollouts into coherent
//! `L × d` target tensors for the diffusion retriever.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{check_records, Reader, Writer};
use crate::grpo::TaskReward;
use crate::numerics::{l2_norm, Matrix, Rng};
use crate::policy::{sample_fanout, FanOutSample, PolicyParams};
use crate::store::{Embedding, SyntheticWorld};

const MAGIC: &[u8; 4] = b"R4TS";
const VERSION: u32 = 1;

/// What the target rows are.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    /// Content embeddings of the top-1 retrieved items.
    Oar,
    /// Sub-query text embeddings.
    Wscr,
}

impl TargetMode {
    pub fn code(self) -> u8 {
        match self {
            TargetMode::Oar => 0,
            TargetMode::Wscr => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(TargetMode::Oar),
            1 => Some(TargetMode::Wscr),
            _ => None,
        }
    }
}

impl std::str::FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "oar" => Ok(TargetMode::Oar),
            "wscr" => Ok(TargetMode::Wscr),
            other => Err(Error::domain(format!("unknown target mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetTensor {
    rows: Matrix,
    pub mode: TargetMode,
}

impl TargetTensor {
    /// Every row must be unit-norm within 1e-6.
    pub fn new(rows: Matrix, mode: TargetMode) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::domain("target tensor with no rows"));
        }
        for r in 0..rows.rows() {
            let n = l2_norm(rows.row(r));
            if (n - 1.0).abs() > 1e-6 {
                return Err(Error::domain(format!("target row {r} has norm {n}")));
            }
        }
        Ok(Self { rows, mode })
    }

    pub fn len(&self) -> usize {
        self.rows.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.rows.row(i)
    }

    pub fn rows(&self) -> &Matrix {
        &self.rows
    }

    /// Row-major `L·d` values.
    pub fn as_slice(&self) -> &[f64] {
        self.rows.as_slice()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthRecord {
    pub query_id: u64,
    pub z_q: Embedding,
    pub target: TargetTensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HarvestConfig {
    pub samples_per_query: usize,
    pub temperature: f64,
    pub k: usize,
    pub n_per_subquery: usize,
}

impl Default for HarvestConfig {
    fn default() -> Self {
        Self {
            samples_per_query: 16,
            temperature: 0.9,
            k: 10,
            n_per_subquery: 50,
        }
    }
}

/// Draws `samples_per_query` rollouts for every training query at the
/// harvest temperature. Query order follows the world; rollouts for one
/// query are contiguous.
pub fn harvest(
    params: &PolicyParams,
    world: &SyntheticWorld,
    cfg: &HarvestConfig,
    rng: &mut Rng,
) -> Result<Vec<FanOutSample>> {
    if cfg.samples_per_query == 0 {
        return Err(Error::domain("samples_per_query must be positive"));
    }
    let policy = params.with_temperature(cfg.temperature)?;
    let mut out = Vec::new();
    for q in world.train_queries() {
        for _ in 0..cfg.samples_per_query {
            out.push(sample_fanout(
                &policy,
                q.id,
                &q.embedding,
                cfg.k,
                rng,
                &world.vocab,
                &world.db,
                cfg.n_per_subquery,
            )?);
        }
    }
    Ok(out)
}

/// Scores every rollout and keeps the best `ceil(fraction · n)` per query.
pub fn keep_top_fraction(
    world: &SyntheticWorld,
    samples: Vec<FanOutSample>,
    reward: &TaskReward,
    fraction: f64,
) -> Result<Vec<FanOutSample>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::domain(format!("keep fraction {fraction} outside (0, 1]")));
    }
    let mut by_query: Vec<(u64, Vec<FanOutSample>)> = Vec::new();
    for mut s in samples {
        let q = world
            .query(s.query_id)
            .ok_or_else(|| Error::domain(format!("rollout for unknown query {}", s.query_id)))?;
        s.reward = Some(reward.score(world, q, &s)?.0);
        match by_query.last_mut() {
            Some((id, group)) if *id == s.query_id => group.push(s),
            _ => by_query.push((s.query_id, vec![s])),
        }
    }
    let mut out = Vec::new();
    for (_, mut group) in by_query {
        let keep = ((fraction * group.len() as f64).ceil() as usize).max(1);
        // stable: equal rewards keep sampling order
        group.sort_by(|a, b| b.reward.unwrap_or(0.0).total_cmp(&a.reward.unwrap_or(0.0)));
        group.truncate(keep);
        out.extend(group);
    }
    Ok(out)
}

/// Stacks the rows chosen by `mode`, cycling when `k < L` and truncating when `k > L`.
pub fn build_target(sample: &FanOutSample, mode: TargetMode, l: usize) -> Result<TargetTensor> {
    let source = match mode {
        TargetMode::Oar => &sample.result.representatives,
        TargetMode::Wscr => &sample.result.sub_queries,
    };
    if source.is_empty() {
        return Err(Error::domain("rollout has no sub-queries"));
    }
    if l == 0 {
        return Err(Error::domain("L must be positive"));
    }
    let d = source[0].dim();
    let mut data = Vec::with_capacity(l * d);
    for i in 0..l {
        data.extend_from_slice(&source[i % source.len()]);
    }
    TargetTensor::new(Matrix::from_vec(l, d, data)?, mode)
}

/// Uniformly random reordering of the rows.
pub fn permute_rows(target: &TargetTensor, rng: &mut Rng) -> TargetTensor {
    let (l, d) = target.rows.shape();
    let perm = rng.permutation(l);
    let mut data = Vec::with_capacity(l * d);
    for &p in &perm {
        data.extend_from_slice(target.row(p));
    }
    TargetTensor {
        rows: Matrix::from_vec(l, d, data).expect("permuted rows keep shape"),
        mode: target.mode,
    }
}

/// Builds one permuted record per rollout.
pub fn synthesize(
    world: &SyntheticWorld,
    samples: &[FanOutSample],
    mode: TargetMode,
    l: usize,
    rng: &mut Rng,
) -> Result<Vec<SynthRecord>> {
    samples
        .iter()
        .map(|s| {
            let q = world
                .query(s.query_id)
                .ok_or_else(|| Error::domain(format!("rollout for unknown query {}", s.query_id)))?;
            let target = permute_rows(&build_target(s, mode, l)?, rng);
            Ok(SynthRecord {
                query_id: s.query_id,
                z_q: q.embedding.clone(),
                target,
            })
        })
        .collect()
}

pub fn write_dataset(records: &[SynthRecord]) -> Result<Vec<u8>> {
    let first = records
        .first()
        .ok_or_else(|| Error::domain("cannot write an empty dataset"))?;
    let (l, d, mode) = (first.target.len(), first.target.dim(), first.target.mode);
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(records.len() as u64);
    w.u32(l as u32);
    w.u32(d as u32);
    w.u8(mode.code());
    for (i, r) in records.iter().enumerate() {
        if r.target.len() != l || r.target.dim() != d || r.z_q.dim() != d || r.target.mode != mode {
            return Err(Error::shape(format!("record {i} disagrees with the dataset shape")));
        }
        w.u64(r.query_id);
        w.f32_slice(&r.z_q);
        w.f32_slice(r.target.as_slice());
    }
    Ok(w.into_bytes())
}

pub fn read_dataset(bytes: &[u8]) -> Result<Vec<SynthRecord>> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let count = r.u64("count")?;
    let l = r.u32("L")? as usize;
    let d = r.u32("dim")? as usize;
    let mode_at = r.offset();
    let mode = TargetMode::from_code(r.u8("mode")?)
        .ok_or_else(|| Error::format(mode_at, "unknown target mode"))?;
    if l == 0 || d == 0 {
        return Err(Error::format(mode_at - 8, "L and dim must be positive"));
    }
    check_records(&r, count, 8 + 4 * d + 4 * l * d)?;
    let mut out = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = r.offset();
        let query_id = r.u64("query id")?;
        let z = r.f32_vec(d, "z_q")?;
        let t = r.f32_vec(l * d, "target")?;
        let bad = |e: Error| Error::format(at, format!("record {i}: {e}"));
        let z_q = Embedding::new(z).map_err(bad)?;
        let target = Matrix::from_vec(l, d, t)
            .and_then(|m| TargetTensor::new(m, mode))
            .map_err(bad)?;
        out.push(SynthRecord {
            query_id,
            z_q,
            target,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_dataset(records: &[SynthRecord], path: &Path) -> Result<()> {
    fs::write(path, write_dataset(records)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<SynthRecord>> {
    read_dataset(&fs::read(path)?)
}
