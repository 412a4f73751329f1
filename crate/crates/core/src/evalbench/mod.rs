//! Retrieval metrics, run-level diversity and the arm-by-arm comparison of
//! fan-out pipelines on held-out queries.

mod latency;

pub use latency::{latency_bench, latency_csv, latency_svg, LatencyRow, SimulatedDelay};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::diffusion::{sample_batch, Denoise};
use crate::error::{Error, Result};
use crate::grpo::TaskReward;
use crate::numerics::Rng;
use crate::policy::{sample_fanout, FanOutSample, PolicyParams};
use crate::rewards::{reward_components, vendi_score, FanOutResult, RewardComponents};
use crate::store::{Embedding, Query, SyntheticWorld};
use crate::synth::TargetMode;

/// `|reference ∩ pool| / |reference|`.
pub fn recall_at_pool(reference: &BTreeSet<u64>, pool: &BTreeSet<u64>) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::domain("recall against an empty reference set"));
    }
    Ok(reference.intersection(pool).count() as f64 / reference.len() as f64)
}

/// 1 when the pool holds at least one reference item, else 0.
pub fn hit_at_pool(reference: &BTreeSet<u64>, pool: &BTreeSet<u64>) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::domain("hit rate against an empty reference set"));
    }
    Ok(if reference.iter().any(|id| pool.contains(id)) { 1.0 } else { 0.0 })
}

/// Vendi score over one representative per run, the renormalised mean of
/// that run's sub-query embeddings.
pub fn vendi_over_runs<E: AsRef<[f64]>>(runs: &[Vec<E>]) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::domain("no runs"));
    }
    let reps = runs
        .iter()
        .map(|run| {
            let first = run.first().ok_or_else(|| Error::domain("run without sub-queries"))?;
            let mut mean = vec![0.0; first.as_ref().len()];
            for e in run {
                let e = e.as_ref();
                if e.len() != mean.len() {
                    return Err(Error::shape("sub-queries of one run differ in dimension"));
                }
                for (m, v) in mean.iter_mut().zip(e) {
                    *m += v;
                }
            }
            Embedding::normalized(mean)
                .map_err(|_| Error::numeric("run sub-queries average to the zero vector"))
        })
        .collect::<Result<Vec<_>>>()?;
    vendi_score(&reps)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    NoFanOut,
    ZeroShot,
    BestOfN,
    Folm,
    Diffusion,
}

impl Arm {
    pub const ALL: [Arm; 5] = [Arm::NoFanOut, Arm::ZeroShot, Arm::BestOfN, Arm::Folm, Arm::Diffusion];

    pub fn name(self) -> &'static str {
        match self {
            Arm::NoFanOut => "no-fan-out",
            Arm::ZeroShot => "zero-shot",
            Arm::BestOfN => "best-of-n",
            Arm::Folm => "folm",
            Arm::Diffusion => "diffusion",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub k: usize,
    pub n_per_subquery: usize,
    /// Rollouts per best-of-N selection.
    pub best_of_n: usize,
    /// Independent inference runs per query.
    pub runs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_per_subquery: 50,
            best_of_n: 5,
            runs: 5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_per_subquery == 0 || self.best_of_n == 0 || self.runs == 0 {
            return Err(Error::domain("k, n_per_subquery, best_of_n and runs must be positive"));
        }
        Ok(())
    }
}

/// Metrics for one query, averaged over runs (Vendi is across runs).
#[derive(Clone, Debug, PartialEq)]
pub struct QueryMetrics {
    pub query_id: u64,
    pub recall: f64,
    pub hit: f64,
    pub vendi: f64,
    pub reward: f64,
    pub components: RewardComponents,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub arm: Arm,
    pub seed: u64,
    pub digest: u64,
    pub per_query: Vec<QueryMetrics>,
    pub recall: f64,
    pub hit: f64,
    pub vendi: f64,
    pub reward: f64,
    pub components: RewardComponents,
}

impl MetricsReport {
    /// Scores `runs[q][r]`, the result of run `r` for `queries[q]`.
    pub fn from_runs(
        arm: Arm,
        world: &SyntheticWorld,
        queries: &[&Query],
        runs: &[Vec<FanOutResult>],
        reward: &TaskReward,
        seed: u64,
        digest: u64,
    ) -> Result<Self> {
        if queries.is_empty() || queries.len() != runs.len() {
            return Err(Error::shape("one run list per query, at least one query"));
        }
        let mut per_query = Vec::with_capacity(queries.len());
        for (q, results) in queries.iter().zip(runs) {
            if results.is_empty() {
                return Err(Error::domain(format!("query {} has no runs", q.id)));
            }
            let n = results.len() as f64;
            let mut m = QueryMetrics {
                query_id: q.id,
                recall: 0.0,
                hit: 0.0,
                vendi: 0.0,
                reward: 0.0,
                components: RewardComponents::default(),
            };
            for res in results {
                m.recall += recall_at_pool(&q.reference, &res.retrieved_ids)? / n;
                m.hit += hit_at_pool(&q.reference, &res.retrieved_ids)? / n;
                m.reward += score(world, q, res, reward)? / n;
                let c = reward_components(&q.embedding, res, &world.db)?;
                m.components.ground += c.ground / n;
                m.components.div += c.div / n;
                m.components.align += c.align / n;
            }
            m.vendi = vendi_over_runs(&results.iter().map(|r| r.sub_queries.clone()).collect::<Vec<_>>())?;
            per_query.push(m);
        }
        let n = per_query.len() as f64;
        let mean = |f: &dyn Fn(&QueryMetrics) -> f64| per_query.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            arm,
            seed,
            digest,
            recall: mean(&|m| m.recall),
            hit: mean(&|m| m.hit),
            vendi: mean(&|m| m.vendi),
            reward: mean(&|m| m.reward),
            components: RewardComponents {
                ground: mean(&|m| m.components.ground),
                div: mean(&|m| m.components.div),
                align: mean(&|m| m.components.align),
            },
            per_query,
        })
    }
}

fn score(world: &SyntheticWorld, q: &Query, res: &FanOutResult, reward: &TaskReward) -> Result<f64> {
    match reward {
        TaskReward::Abstract(w) => {
            w.validate()?;
            Ok(w.combine(&reward_components(&q.embedding, res, &world.db)?))
        }
        TaskReward::Coverage => recall_at_pool(&q.reference, &res.retrieved_ids),
    }
}

pub const REPORT_HEADER: &str = "arm,query_id,recall,hit,vendi,reward,r_ground,r_div,r_align";

/// Per-query rows of every report followed by one `mean` row per arm.
pub fn reports_csv(reports: &[MetricsReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        for m in &r.per_query {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.arm.name(),
                m.query_id,
                m.recall,
                m.hit,
                m.vendi,
                m.reward,
                m.components.ground,
                m.components.div,
                m.components.align
            );
        }
    }
    for r in reports {
        let _ = writeln!(
            out,
            "{},mean,{},{},{},{},{},{},{}",
            r.arm.name(),
            r.recall,
            r.hit,
            r.vendi,
            r.reward,
            r.components.ground,
            r.components.div,
            r.components.align
        );
    }
    out
}

pub fn reports_summary(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    if let Some(r) = reports.first() {
        let _ = writeln!(out, "seed {}", r.seed);
        let _ = writeln!(out, "config digest {:016x}", r.digest);
        let _ = writeln!(out, "held-out queries {}", r.per_query.len());
    }
    let _ = writeln!(
        out,
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "arm", "recall", "hit", "vendi", "reward", "ground", "div", "align"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.arm.name(),
            r.recall,
            r.hit,
            r.vendi,
            r.reward,
            r.components.ground,
            r.components.div,
            r.components.align
        );
    }
    out
}

/// Best of `n` rollouts by task reward. Returns the chosen rollout, every
/// rollout's reward and the chosen reward.
#[allow(clippy::too_many_arguments)]
pub fn best_of_n(
    params: &PolicyParams,
    world: &SyntheticWorld,
    query: &Query,
    reward: &TaskReward,
    n: usize,
    k: usize,
    n_per_subquery: usize,
    rng: &mut Rng,
) -> Result<(FanOutSample, Vec<f64>, f64)> {
    if n == 0 {
        return Err(Error::domain("best-of-N needs N ≥ 1"));
    }
    let mut best: Option<(FanOutSample, f64)> = None;
    let mut rewards = Vec::with_capacity(n);
    for _ in 0..n {
        let s = sample_fanout(
            params,
            query.id,
            &query.embedding,
            k,
            rng,
            &world.vocab,
            &world.db,
            n_per_subquery,
        )?;
        let r = score(world, query, &s.result, reward)?;
        rewards.push(r);
        if best.as_ref().is_none_or(|(_, b)| r > *b) {
            best = Some((s, r));
        }
    }
    let (mut s, r) = best.expect("n ≥ 1");
    s.reward = Some(r);
    Ok((s, rewards, r))
}

/// The trained denoiser and the mode its targets were built in.
pub struct DiffusionArm<'a, D: Denoise + ?Sized> {
    pub denoiser: &'a D,
    pub mode: TargetMode,
}

/// Runs every arm on the held-out queries and returns one report per arm,
/// in [`Arm::ALL`] order.
#[allow(clippy::too_many_arguments)]
pub fn compare_pipelines<D: Denoise + ?Sized>(
    world: &SyntheticWorld,
    zero_shot: &PolicyParams,
    trained: &PolicyParams,
    diffusion: &DiffusionArm<'_, D>,
    reward: &TaskReward,
    cfg: &EvalConfig,
    seed: u64,
    digest: u64,
) -> Result<Vec<MetricsReport>> {
    cfg.validate()?;
    let queries: Vec<&Query> = world.heldout_queries().collect();
    if queries.is_empty() {
        return Err(Error::domain("world has no held-out queries"));
    }
    let mut root = Rng::with_stream(seed, 0xe7a1);
    let mut out = Vec::with_capacity(Arm::ALL.len());
    for arm in Arm::ALL {
        let mut rng = root.fork();
        let runs = arm_runs(arm, world, &queries, zero_shot, trained, diffusion, reward, cfg, &mut rng)?;
        out.push(MetricsReport::from_runs(arm, world, &queries, &runs, reward, seed, digest)?);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn arm_runs<D: Denoise + ?Sized>(
    arm: Arm,
    world: &SyntheticWorld,
    queries: &[&Query],
    zero_shot: &PolicyParams,
    trained: &PolicyParams,
    diffusion: &DiffusionArm<'_, D>,
    reward: &TaskReward,
    cfg: &EvalConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec<FanOutResult>>> {
    let rollout = |params: &PolicyParams, q: &Query, rng: &mut Rng| {
        sample_fanout(
            params,
            q.id,
            &q.embedding,
            cfg.k,
            rng,
            &world.vocab,
            &world.db,
            cfg.n_per_subquery,
        )
        .map(|s| s.result)
    };
    match arm {
        Arm::NoFanOut => queries
            .iter()
            .map(|q| {
                let res = FanOutResult::retrieve(
                    vec![q.embedding.clone()],
                    &world.db,
                    cfg.n_per_subquery * cfg.k,
                )?;
                Ok(vec![res; cfg.runs])
            })
            .collect(),
        Arm::ZeroShot | Arm::Folm => {
            let params = if arm == Arm::ZeroShot { zero_shot } else { trained };
            queries
                .iter()
                .map(|q| (0..cfg.runs).map(|_| rollout(params, q, rng)).collect())
                .collect()
        }
        Arm::BestOfN => queries
            .iter()
            .map(|q| {
                (0..cfg.runs)
                    .map(|_| {
                        best_of_n(zero_shot, world, q, reward, cfg.best_of_n, cfg.k, cfg.n_per_subquery, rng)
                            .map(|(s, _, _)| s.result)
                    })
                    .collect()
            })
            .collect(),
        Arm::Diffusion => {
            let dcfg = diffusion.denoiser.config();
            if cfg.k > dcfg.l {
                return Err(Error::domain(format!(
                    "k = {} exceeds the {} rows the denoiser generates",
                    cfg.k, dcfg.l
                )));
            }
            let conds: Vec<&[f64]> = queries.iter().map(|q| &q.embedding[..]).collect();
            let mut runs: Vec<Vec<FanOutResult>> = vec![Vec::with_capacity(cfg.runs); queries.len()];
            for _ in 0..cfg.runs {
                let targets = sample_batch(diffusion.denoiser, &conds, diffusion.mode, rng)?;
                for (slot, t) in runs.iter_mut().zip(targets) {
                    let rows = (0..cfg.k)
                        .map(|i| Embedding::new(t.row(i).to_vec()))
                        .collect::<Result<Vec<_>>>()?;
                    slot.push(FanOutResult::retrieve(rows, &world.db, cfg.n_per_subquery)?);
                }
            }
            Ok(runs)
        }
    }
}
