//! Group-relative soft-PPO training of the fan-out policy.
//!
//! For every query in a batch the current policy is frozen as `π_old`, `G`
//! rollouts are drawn and scored, rewards are standardised within the group
//! and the clipped surrogate with forward/reverse KL penalties is minimised
//! by plain gradient descent. Each sample's advantage is shared by all of its
//! tokens and the loss is the per-token mean over the whole batch.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{entropy_of_counts, Matrix, Rng};
use crate::policy::{sample_fanout, token_log_probs, FanOutSample, PolicyParams};
use crate::rewards::{reward_components, reward_set, RewardComponents, RewardWeights};
use crate::store::{Embedding, Query, SyntheticWorld};

#[derive(Clone, Debug, PartialEq)]
pub struct SoftPpoConfig {
    pub clip_eps: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adv_eps: f64,
    pub group_size: usize,
    pub learning_rate: f64,
    pub iterations: usize,
    pub queries_per_batch: usize,
    /// Gradient steps per batch against the same `π_old` (1 to 4).
    pub inner_epochs: usize,
    /// Sub-queries per rollout.
    pub k: usize,
    pub n_per_subquery: usize,
}

impl Default for SoftPpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            beta1: 0.05,
            beta2: 0.05,
            adv_eps: 1e-8,
            group_size: 8,
            learning_rate: 1e-2,
            iterations: 200,
            queries_per_batch: 8,
            inner_epochs: 1,
            k: 10,
            n_per_subquery: 50,
        }
    }
}

impl SoftPpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::domain(format!("clip_eps {} outside (0, 1)", self.clip_eps)));
        }
        if !(self.beta1 >= 0.0 && self.beta2 >= 0.0) {
            return Err(Error::domain("KL weights must be non-negative"));
        }
        if !(self.adv_eps >= 0.0) {
            return Err(Error::domain("adv_eps must be non-negative"));
        }
        if self.group_size < 2 {
            return Err(Error::domain("group_size must be at least 2"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning_rate must be finite and non-negative"));
        }
        if self.queries_per_batch == 0 {
            return Err(Error::domain("queries_per_batch must be positive"));
        }
        if !(1..=4).contains(&self.inner_epochs) {
            return Err(Error::domain("inner_epochs must lie in [1, 4]"));
        }
        if self.k == 0 || self.n_per_subquery == 0 {
            return Err(Error::domain("k and n_per_subquery must be positive"));
        }
        Ok(())
    }
}

/// `A_i = (r_i − μ) / (σ + ε)` with the population standard deviation.
pub fn compute_advantages(rewards: &[f64], adv_eps: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::domain(format!(
            "a group needs at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let (mu, sigma) = mean_std(rewards);
    let adv: Vec<f64> = rewards.iter().map(|r| (r - mu) / (sigma + adv_eps)).collect();
    if adv.iter().any(|a| !a.is_finite()) {
        return Err(Error::numeric("non-finite advantage"));
    }
    Ok(adv)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// `G` scored rollouts for one query.
#[derive(Clone, Debug)]
pub struct RolloutGroup {
    pub query: Embedding,
    pub samples: Vec<FanOutSample>,
    pub mu_g: f64,
    pub sigma_g: f64,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    /// Every sample must already carry its reward.
    pub fn new(query: Embedding, samples: Vec<FanOutSample>, adv_eps: f64) -> Result<Self> {
        let rewards = samples
            .iter()
            .map(|s| s.reward.ok_or_else(|| Error::domain("unscored rollout in group")))
            .collect::<Result<Vec<f64>>>()?;
        let advantages = compute_advantages(&rewards, adv_eps)?;
        let (mu_g, sigma_g) = mean_std(&rewards);
        Ok(Self {
            query,
            samples,
            mu_g,
            sigma_g,
            advantages,
        })
    }

    /// Group with externally chosen advantages (used to isolate loss terms).
    pub fn with_advantages(query: Embedding, samples: Vec<FanOutSample>, advantages: Vec<f64>) -> Result<Self> {
        if samples.len() != advantages.len() || samples.len() < 2 {
            return Err(Error::shape("one advantage per sample, at least two samples"));
        }
        let rewards: Vec<f64> = samples.iter().map(|s| s.reward.unwrap_or(0.0)).collect();
        let (mu_g, sigma_g) = mean_std(&rewards);
        Ok(Self {
            query,
            samples,
            mu_g,
            sigma_g,
            advantages,
        })
    }
}

/// Soft-PPO loss and its gradient with respect to the policy weight table.
pub fn soft_ppo_loss(
    params: &PolicyParams,
    groups: &[RolloutGroup],
    cfg: &SoftPpoConfig,
) -> Result<(f64, Matrix)> {
    let (v, d) = params.weight.shape();
    let mut grad = Matrix::zeros(v, d);
    let mut loss = 0.0;
    let mut tokens = 0usize;
    let (lo, hi) = (1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);

    for group in groups {
        let lp = token_log_probs(params, &group.query)?;
        let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        for (s, &a) in group.samples.iter().zip(&group.advantages) {
            if s.tokens.len() != s.logp_old.len() {
                return Err(Error::shape("tokens and logp_old differ in length"));
            }
            // Σ_t ∂f_t/∂u_t · (e_{o_t} − p), accumulated as one coefficient per row
            let mut coef = vec![0.0; v];
            let mut g_sum = 0.0;
            for (t, (&o, &u_old)) in s.tokens.iter().zip(&s.logp_old).enumerate() {
                let u = *lp
                    .get(o)
                    .ok_or_else(|| Error::domain(format!("token {o} outside vocabulary")))?;
                let rho = (u - u_old).exp();
                let unclipped = rho * a;
                let clipped = rho.clamp(lo, hi) * a;
                let f = -unclipped.min(clipped) + cfg.beta1 * rho * (u - u_old) - cfg.beta2 * u;
                let mut g = cfg.beta1 * rho * (u - u_old + 1.0) - cfg.beta2;
                if unclipped <= clipped {
                    g -= rho * a;
                }
                if !f.is_finite() || !g.is_finite() {
                    return Err(Error::numeric(format!(
                        "non-finite loss at token {t} (id {o}) of query {}",
                        s.query_id
                    )));
                }
                loss += f;
                coef[o] += g;
                g_sum += g;
                tokens += 1;
            }
            for (c, p) in coef.iter_mut().zip(&probs) {
                *c -= g_sum * p;
            }
            for (r, c) in coef.iter().enumerate() {
                if *c != 0.0 {
                    let s = c / params.temperature;
                    for (gw, z) in grad.row_mut(r).iter_mut().zip(group.query.iter()) {
                        *gw += s * z;
                    }
                }
            }
        }
    }
    if tokens == 0 {
        return Err(Error::domain("soft-PPO loss over zero tokens"));
    }
    let n = tokens as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Which scalar reward drives training.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TaskReward {
    /// Weighted groundedness / diversity / alignment.
    Abstract(RewardWeights),
    /// Reference-set coverage.
    Coverage,
}

impl TaskReward {
    /// Scalar reward plus the components when they are defined.
    pub fn score(
        &self,
        world: &SyntheticWorld,
        query: &Query,
        sample: &FanOutSample,
    ) -> Result<(f64, Option<RewardComponents>)> {
        match self {
            TaskReward::Abstract(w) => {
                w.validate()?;
                let c = reward_components(&query.embedding, &sample.result, &world.db)?;
                Ok((w.combine(&c), Some(c)))
            }
            TaskReward::Coverage => Ok((reward_set(&sample.result, &query.reference)?, None)),
        }
    }
}

/// Mean rewards over a set of scored rollouts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardStats {
    pub reward: f64,
    pub components: Option<RewardComponents>,
}

#[derive(Default)]
struct Accum {
    n: usize,
    reward: f64,
    comps: Option<RewardComponents>,
}

impl Accum {
    fn push(&mut self, r: f64, c: Option<RewardComponents>) {
        self.n += 1;
        self.reward += r;
        if let Some(c) = c {
            let acc = self.comps.get_or_insert_with(RewardComponents::default);
            acc.ground += c.ground;
            acc.div += c.div;
            acc.align += c.align;
        }
    }

    fn finish(self) -> RewardStats {
        let n = self.n.max(1) as f64;
        RewardStats {
            reward: self.reward / n,
            components: self.comps.map(|c| RewardComponents {
                ground: c.ground / n,
                div: c.div / n,
                align: c.align / n,
            }),
        }
    }
}

fn train_pool(world: &SyntheticWorld) -> Result<Vec<&Query>> {
    let pool: Vec<&Query> = world.train_queries().collect();
    if pool.is_empty() {
        return Err(Error::domain("world has no training queries"));
    }
    Ok(pool)
}

/// One soft-PPO update. Returns the new parameters and the mean reward of
/// the rollouts drawn from the incoming parameters.
pub fn train_step(
    params: &PolicyParams,
    world: &SyntheticWorld,
    reward: &TaskReward,
    cfg: &SoftPpoConfig,
    rng: &mut Rng,
) -> Result<(PolicyParams, RewardStats)> {
    cfg.validate()?;
    let pool = train_pool(world)?;
    let batch: Vec<&Query> = if cfg.queries_per_batch >= pool.len() {
        pool
    } else {
        let mut order = rng.permutation(pool.len());
        order.truncate(cfg.queries_per_batch);
        order.into_iter().map(|i| pool[i]).collect()
    };

    let mut acc = Accum::default();
    let mut groups = Vec::with_capacity(batch.len());
    for q in batch {
        let mut samples = Vec::with_capacity(cfg.group_size);
        for _ in 0..cfg.group_size {
            let mut s = sample_fanout(
                params,
                q.id,
                &q.embedding,
                cfg.k,
                rng,
                &world.vocab,
                &world.db,
                cfg.n_per_subquery,
            )?;
            let (r, c) = reward.score(world, q, &s)?;
            acc.push(r, c);
            s.reward = Some(r);
            samples.push(s);
        }
        groups.push(RolloutGroup::new(q.embedding.clone(), samples, cfg.adv_eps)?);
    }

    let mut next = params.clone();
    for _ in 0..cfg.inner_epochs {
        let (_, grad) = soft_ppo_loss(&next, &groups, cfg)?;
        next.weight.add_scaled(&grad, -cfg.learning_rate)?;
    }
    if !next.weight.is_finite() {
        return Err(Error::numeric("policy weights diverged"));
    }
    Ok((next, acc.finish()))
}

/// One row of the training trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub stats: RewardStats,
}

/// Runs `cfg.iterations` steps, handing each trace row to `sink` as it is produced.
pub fn train(
    params0: &PolicyParams,
    world: &SyntheticWorld,
    reward: &TaskReward,
    cfg: &SoftPpoConfig,
    rng: &mut Rng,
    mut sink: impl FnMut(&TraceRow),
) -> Result<(PolicyParams, Vec<TraceRow>)> {
    cfg.validate()?;
    let mut params = params0.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    for iter in 0..cfg.iterations {
        let (next, stats) = train_step(&params, world, reward, cfg, rng)?;
        params = next;
        let row = TraceRow { iter, stats };
        sink(&row);
        trace.push(row);
    }
    Ok((params, trace))
}

pub const TRACE_HEADER: &str = "iter,reward,r_ground,r_div,r_align";

/// CSV rendering of a trace; component columns are empty when undefined.
pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for row in trace {
        let _ = write!(out, "{},{}", row.iter, row.stats.reward);
        match row.stats.components {
            Some(c) => {
                let _ = writeln!(out, ",{},{},{}", c.ground, c.div, c.align);
            }
            None => out.push_str(",,,\n"),
        }
    }
    out
}

/// Mean reward of `samples_per_query` fresh rollouts per query, without updating.
pub fn evaluate(
    params: &PolicyParams,
    world: &SyntheticWorld,
    queries: &[&Query],
    reward: &TaskReward,
    cfg: &SoftPpoConfig,
    samples_per_query: usize,
    rng: &mut Rng,
) -> Result<RewardStats> {
    if queries.is_empty() || samples_per_query == 0 {
        return Err(Error::domain("evaluation needs queries and samples"));
    }
    let mut acc = Accum::default();
    for q in queries {
        for _ in 0..samples_per_query {
            let s = sample_fanout(
                params,
                q.id,
                &q.embedding,
                cfg.k,
                rng,
                &world.vocab,
                &world.db,
                cfg.n_per_subquery,
            )?;
            let (r, c) = reward.score(world, q, &s)?;
            acc.push(r, c);
        }
    }
    Ok(acc.finish())
}

/// Entropy (nats) of the token histogram pooled over `draws` tokens per query.
pub fn empirical_token_entropy(
    params: &PolicyParams,
    queries: &[&Query],
    draws: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let mut counts = vec![0usize; params.vocab_size()];
    for q in queries {
        let probs: Vec<f64> = token_log_probs(params, &q.embedding)?
            .into_iter()
            .map(f64::exp)
            .collect();
        for _ in 0..draws {
            counts[rng.categorical(&probs)] += 1;
        }
    }
    Ok(entropy_of_counts(&counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, relative_error, Rng};
    use crate::rewards::FanOutResult;
    use crate::store::{generate_world, WorldParams};
    use proptest::prelude::*;

    fn toy_sample(tokens: Vec<usize>, logp_old: Vec<f64>) -> FanOutSample {
        let e = Embedding::new(vec![1.0, 0.0]).unwrap();
        let k = tokens.len();
        FanOutSample {
            query_id: 0,
            tokens,
            logp_old,
            result: FanOutResult {
                sub_queries: vec![e.clone(); k],
                representatives: vec![e; k],
                representative_ids: vec![0; k],
                per_sub_query: vec![vec![]; k],
                retrieved_ids: Default::default(),
            },
            reward: None,
        }
    }

    /// Random groups over a `v`-token policy whose `π_old` is a perturbation of `params`.
    fn random_instance(seed: u64, v: usize, d: usize) -> (PolicyParams, Vec<RolloutGroup>) {
        let mut rng = Rng::new(seed);
        let params = PolicyParams::random(v, d, 0.7, 0.8, &mut rng).unwrap();
        let old = {
            let mut p = params.clone();
            for w in p.weight.as_mut_slice() {
                *w += 0.4 * rng.normal();
            }
            p
        };
        let mut groups = Vec::new();
        for _ in 0..2 {
            let z = Embedding::normalized((0..d).map(|_| rng.normal()).collect()).unwrap();
            let old_lp = token_log_probs(&old, &z).unwrap();
            let samples: Vec<FanOutSample> = (0..3)
                .map(|_| {
                    let tokens: Vec<usize> = (0..4).map(|_| rng.below(v)).collect();
                    let lps = tokens.iter().map(|&t| old_lp[t]).collect();
                    let mut s = toy_sample(tokens, lps);
                    s.reward = Some(rng.normal());
                    s
                })
                .collect();
            groups.push(RolloutGroup::new(z, samples, 1e-8).unwrap());
        }
        (params, groups)
    }

    fn fd_check(params: &PolicyParams, groups: &[RolloutGroup], cfg: &SoftPpoConfig) -> f64 {
        let (_, grad) = soft_ppo_loss(params, groups, cfg).unwrap();
        let (v, d) = params.weight.shape();
        let t = params.temperature;
        let numeric = finite_diff_grad(
            |w| {
                let p = PolicyParams::new(Matrix::from_vec(v, d, w.to_vec())?, t)?;
                Ok(soft_ppo_loss(&p, groups, cfg)?.0)
            },
            params.weight.as_slice(),
            1e-5,
        )
        .unwrap();
        relative_error(grad.as_slice(), &numeric)
    }

    #[test]
    fn advantages_reference_values() {
        let a = compute_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
        let s = (1.5f64).sqrt();
        for (x, e) in a.iter().zip([-s, 0.0, s]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!((a[2] - 1.22474).abs() < 1e-5);
        assert_eq!(a[1], 0.0);
    }

    #[test]
    fn advantages_constant_group() {
        assert_eq!(compute_advantages(&[0.7; 5], 1e-8).unwrap(), vec![0.0; 5]);
    }

    #[test]
    fn advantages_need_two() {
        assert!(matches!(compute_advantages(&[1.0], 1e-8), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_loss_at_equality() {
        let p = PolicyParams::zeros(4, 2, 1.0).unwrap();
        let z = Embedding::new(vec![1.0, 0.0]).unwrap();
        let lp = (0.25f64).ln();
        let samples = vec![toy_sample(vec![0, 1], vec![lp; 2]), toy_sample(vec![2, 3], vec![lp; 2])];
        let g = RolloutGroup::with_advantages(z, samples, vec![0.0, 0.0]).unwrap();
        let cfg = SoftPpoConfig {
            beta1: 0.0,
            beta2: 0.0,
            ..SoftPpoConfig::default()
        };
        let (loss, grad) = soft_ppo_loss(&p, &[g.clone()], &cfg).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.as_slice().iter().all(|&x| x == 0.0));

        // forward KL surrogate vanishes at equality, only the reverse term remains
        let cfg = SoftPpoConfig {
            beta1: 0.3,
            beta2: 0.0,
            ..SoftPpoConfig::default()
        };
        assert_eq!(soft_ppo_loss(&p, &[g], &cfg).unwrap().0, 0.0);
    }

    #[test]
    fn unregularised_loss_inside_clip_band() {
        for seed in 0..10 {
            let (params, mut groups) = random_instance(seed, 5, 3);
            // make every ratio lie inside the band by setting logp_old close to current
            for g in &mut groups {
                let lp = token_log_probs(&params, &g.query).unwrap();
                for s in &mut g.samples {
                    for (t, old) in s.tokens.iter().zip(s.logp_old.iter_mut()) {
                        *old = lp[*t] + 0.05;
                    }
                }
            }
            let cfg = SoftPpoConfig {
                beta1: 0.0,
                beta2: 0.0,
                ..SoftPpoConfig::default()
            };
            let (loss, _) = soft_ppo_loss(&params, &groups, &cfg).unwrap();
            let mut expect = 0.0;
            let mut n = 0.0;
            for g in &groups {
                let lp = token_log_probs(&params, &g.query).unwrap();
                for (s, a) in g.samples.iter().zip(&g.advantages) {
                    for (t, old) in s.tokens.iter().zip(&s.logp_old) {
                        expect += (lp[*t] - old).exp() * a;
                        n += 1.0;
                    }
                }
            }
            assert!((loss + expect / n).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..20 {
            let (params, groups) = random_instance(100 + seed, 4, 3);
            let cfg = SoftPpoConfig::default();
            let err = fd_check(&params, &groups, &cfg);
            assert!(err < 1e-4, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn gradient_through_clipped_branch() {
        let (params, groups) = random_instance(7, 4, 3);
        let cfg = SoftPpoConfig {
            clip_eps: 0.05,
            beta1: 0.1,
            beta2: 0.2,
            ..SoftPpoConfig::default()
        };
        assert!(fd_check(&params, &groups, &cfg) < 1e-4);
    }

    #[test]
    fn reverse_kl_alone_is_likelihood_gradient() {
        let mut rng = Rng::new(3);
        let params = PolicyParams::random(5, 3, 1.0, 1.0, &mut rng).unwrap();
        let z = Embedding::normalized(vec![0.3, -0.5, 0.8]).unwrap();
        let lp = token_log_probs(&params, &z).unwrap();
        let tokens = vec![vec![0, 2, 2], vec![4, 1, 2]];
        let samples: Vec<FanOutSample> = tokens
            .iter()
            .map(|t| toy_sample(t.clone(), t.iter().map(|&o| lp[o]).collect()))
            .collect();
        let g = RolloutGroup::with_advantages(z.clone(), samples, vec![0.0, 0.0]).unwrap();
        let cfg = SoftPpoConfig {
            beta1: 0.0,
            beta2: 1.0,
            ..SoftPpoConfig::default()
        };
        let (_, grad) = soft_ppo_loss(&params, &[g], &cfg).unwrap();
        // gradient of the mean negative log-likelihood of the six tokens
        let probs: Vec<f64> = lp.iter().map(|x| x.exp()).collect();
        let mut expect = Matrix::zeros(5, 3);
        for &o in tokens.iter().flatten() {
            for v in 0..5 {
                let c = (probs[v] - if v == o { 1.0 } else { 0.0 }) / 6.0;
                for j in 0..3 {
                    let x = expect.get(v, j) + c * z[j];
                    expect.set(v, j, x);
                }
            }
        }
        assert!(relative_error(grad.as_slice(), expect.as_slice()) < 1e-12);
    }

    fn small_world(seed: u64) -> SyntheticWorld {
        generate_world(&WorldParams {
            seed,
            dim: 8,
            clusters: 4,
            items_per_cluster: 20,
            query_count: 8,
            clusters_per_query: 2,
            ..WorldParams::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let w = small_world(1);
        let mut rng = Rng::new(2);
        let p = PolicyParams::random(w.vocab_size(), w.dim(), 1.0, 1.0, &mut rng).unwrap();
        let cfg = SoftPpoConfig {
            learning_rate: 0.0,
            n_per_subquery: 5,
            queries_per_batch: 2,
            ..SoftPpoConfig::default()
        };
        let (next, stats) =
            train_step(&p, &w, &TaskReward::Abstract(RewardWeights::default()), &cfg, &mut rng).unwrap();
        assert_eq!(next, p);
        assert!(stats.reward.is_finite());
        assert!(stats.components.is_some());
    }

    #[test]
    fn zero_iterations_returns_initial() {
        let w = small_world(1);
        let p = PolicyParams::zeros(w.vocab_size(), w.dim(), 1.0).unwrap();
        let cfg = SoftPpoConfig {
            iterations: 0,
            ..SoftPpoConfig::default()
        };
        let (out, trace) = train(&p, &w, &TaskReward::Coverage, &cfg, &mut Rng::new(0), |_| {}).unwrap();
        assert_eq!(out, p);
        assert!(trace.is_empty());
    }

    #[test]
    fn trace_format() {
        let w = small_world(4);
        let p = PolicyParams::zeros(w.vocab_size(), w.dim(), 1.0).unwrap();
        let cfg = SoftPpoConfig {
            iterations: 3,
            n_per_subquery: 5,
            queries_per_batch: 2,
            ..SoftPpoConfig::default()
        };
        let mut seen = 0;
        let (_, trace) = train(&p, &w, &TaskReward::Coverage, &cfg, &mut Rng::new(0), |_| seen += 1).unwrap();
        assert_eq!(seen, 3);
        let csv = trace_csv(&trace);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,reward,r_ground,r_div,r_align");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,") && lines[1].ends_with(",,,"));

        let (_, trace) = train(
            &p,
            &w,
            &TaskReward::Abstract(RewardWeights::default()),
            &cfg,
            &mut Rng::new(0),
            |_| {},
        )
        .unwrap();
        let csv = trace_csv(&trace);
        let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row.len(), 5);
        assert!(row.iter().all(|f| !f.is_empty()));
    }

    #[test]
    fn config_validation() {
        let bad = [
            SoftPpoConfig { clip_eps: 1.0, ..SoftPpoConfig::default() },
            SoftPpoConfig { group_size: 1, ..SoftPpoConfig::default() },
            SoftPpoConfig { beta1: -0.1, ..SoftPpoConfig::default() },
            SoftPpoConfig { inner_epochs: 5, ..SoftPpoConfig::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
    }

    proptest! {
        #[test]
        fn advantages_standardised(rewards in prop::collection::vec(-10.0f64..10.0, 2..16)) {
            let (_, sigma) = mean_std(&rewards);
            prop_assume!(sigma > 1e-3);
            let eps = 1e-8;
            let a = compute_advantages(&rewards, eps).unwrap();
            let (m, s) = mean_std(&a);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!(s <= 1.0 + 1e-12 && s >= 1.0 - 10.0 * eps / sigma);
        }

        #[test]
        fn advantages_shift_and_scale(
            rewards in prop::collection::vec(-10.0f64..10.0, 2..16),
            shift in -100.0f64..100.0,
            scale in 0.01f64..100.0,
        ) {
            let a = compute_advantages(&rewards, 0.0).unwrap();
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = compute_advantages(&shifted, 0.0).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-6);
            }
            let argmax = |v: &[f64]| (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap();
            let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
            let c = compute_advantages(&scaled, 1e-8).unwrap();
            prop_assert_eq!(argmax(&a), argmax(&c));
        }

        #[test]
        fn gradient_check_randomised(seed in 0u64..10_000) {
            let (params, groups) = random_instance(seed, 4, 3);
            prop_assert!(fd_check(&params, &groups, &SoftPpoConfig::default()) < 1e-4);
        }
    }
}
