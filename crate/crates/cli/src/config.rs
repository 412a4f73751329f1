//! Flat `key = value` run configuration.
//!
//! Blank lines and text after `#` are ignored. Every key is optional and
//! falls back to the default listed in [`RunConfig::default`]; unknown or
//! repeated keys are rejected. The digest is FNV-1a (64-bit) over
//! [`RunConfig::canonical`], which lists every key with its parsed value.

use std::hash::Hasher;
use std::path::Path;

use r4t::diffusion::DiffusionConfig;
use r4t::evalbench::{EvalConfig, SimulatedDelay};
use r4t::grpo::{SoftPpoConfig, TaskReward};
use r4t::rewards::RewardWeights;
use r4t::store::WorldParams;
use r4t::synth::{HarvestConfig, TargetMode};

use crate::CliError;

trait Value: Sized {
    fn parse(text: &str) -> Result<Self, String>;
    fn render(&self) -> String;
}

impl Value for u64 {
    fn parse(text: &str) -> Result<Self, String> {
        text.parse().map_err(|_| format!("expected a non-negative integer, got `{text}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for usize {
    fn parse(text: &str) -> Result<Self, String> {
        text.parse().map_err(|_| format!("expected a non-negative integer, got `{text}`"))
    }
    fn render(&self) -> String {
        self.to_string()
    }
}

impl Value for f64 {
    fn parse(text: &str) -> Result<Self, String> {
        match text.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(format!("expected a finite number, got `{text}`")),
        }
    }
    fn render(&self) -> String {
        format!("{self:?}")
    }
}

impl Value for TargetMode {
    fn parse(text: &str) -> Result<Self, String> {
        text.parse().map_err(|_| format!("expected `oar` or `wscr`, got `{text}`"))
    }
    fn render(&self) -> String {
        match self {
            TargetMode::Oar => "oar",
            TargetMode::Wscr => "wscr",
        }
        .to_string()
    }
}

impl Value for Vec<usize> {
    fn parse(text: &str) -> Result<Self, String> {
        text.split(',')
            .map(|p| usize::parse(p.trim()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| format!("expected a comma-separated list of integers, got `{text}`"))
    }
    fn render(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

macro_rules! run_config {
    ($( $(#[$doc:meta])* $field:ident : $ty:ty = $default:expr, $key:literal; )*) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            $( $(#[$doc])* pub $field: $ty, )*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }

        impl RunConfig {
            /// Every accepted key, in canonical order.
            pub const KEYS: &'static [&'static str] = &[$( $key ),*];

            fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key {
                    $( $key => self.$field = Value::parse(value)?, )*
                    _ => return Err(format!("unknown key `{key}`")),
                }
                Ok(())
            }

            /// One `key = value` line per key with values in normal form.
            pub fn canonical(&self) -> String {
                let mut out = String::new();
                $(
                    out.push_str($key);
                    out.push_str(" = ");
                    out.push_str(&Value::render(&self.$field));
                    out.push('\n');
                )*
                out
            }
        }
    };
}

run_config! {
    seed: u64 = 0, "seed";
    /// `oar` trains on the composite reward and builds content targets;
    /// `wscr` trains on coverage and builds sub-query targets.
    mode: TargetMode = TargetMode::Oar, "mode";

    world_dim: usize = 16, "world.dim";
    world_clusters: usize = 8, "world.clusters";
    world_items_per_cluster: usize = 100, "world.items_per_cluster";
    world_query_count: usize = 48, "world.query_count";
    world_clusters_per_query: usize = 2, "world.clusters_per_query";
    world_cluster_spread: f64 = 0.08, "world.cluster_spread";
    world_variant_spread: f64 = 0.15, "world.variant_spread";
    world_heldout_fraction: f64 = 0.25, "world.heldout_fraction";

    policy_init_scale: f64 = 2.5, "policy.init_scale";
    policy_temperature: f64 = 1.0, "policy.temperature";

    reward_lambda_g: f64 = 0.6, "reward.lambda_g";
    reward_lambda_d: f64 = 0.2, "reward.lambda_d";
    reward_lambda_a: f64 = 0.2, "reward.lambda_a";

    fanout_k: usize = 10, "fanout.k";
    fanout_n_per_subquery: usize = 50, "fanout.n_per_subquery";

    grpo_clip_eps: f64 = 0.2, "grpo.clip_eps";
    grpo_beta1: f64 = 0.05, "grpo.beta1";
    grpo_beta2: f64 = 0.05, "grpo.beta2";
    grpo_adv_eps: f64 = 1e-8, "grpo.adv_eps";
    grpo_group_size: usize = 8, "grpo.group_size";
    grpo_learning_rate: f64 = 1e-2, "grpo.learning_rate";
    grpo_iterations: usize = 200, "grpo.iterations";
    grpo_queries_per_batch: usize = 8, "grpo.queries_per_batch";
    grpo_inner_epochs: usize = 1, "grpo.inner_epochs";

    synth_samples_per_query: usize = 16, "synth.samples_per_query";
    synth_temperature: f64 = 0.9, "synth.temperature";
    synth_keep_fraction: f64 = 1.0, "synth.keep_fraction";
    synth_l: usize = 12, "synth.l";

    diffusion_sigma_data: f64 = 0.088, "diffusion.sigma_data";
    diffusion_sigma_min: f64 = 1e-4, "diffusion.sigma_min";
    diffusion_sigma_max: f64 = 80.0, "diffusion.sigma_max";
    diffusion_cond_drop: f64 = 0.1, "diffusion.cond_drop";
    diffusion_cfg_strength: f64 = 0.1, "diffusion.cfg_strength";
    diffusion_sample_steps: usize = 256, "diffusion.sample_steps";
    diffusion_ema_decay: f64 = 0.9999, "diffusion.ema_decay";
    diffusion_width: usize = 512, "diffusion.width";
    diffusion_depth: usize = 3, "diffusion.depth";
    diffusion_learning_rate: f64 = 3e-4, "diffusion.learning_rate";
    diffusion_warmup_steps: usize = 500, "diffusion.warmup_steps";
    diffusion_total_steps: usize = 5000, "diffusion.total_steps";
    diffusion_batch_size: usize = 32, "diffusion.batch_size";
    diffusion_churn: f64 = 0.0, "diffusion.churn";

    eval_runs: usize = 5, "eval.runs";
    eval_best_of_n: usize = 5, "eval.best_of_n";

    bench_batch_sizes: Vec<usize> = vec![8, 16, 32, 64, 128, 256, 512, 1024], "bench.batch_sizes";
    /// Seconds per simulated autoregressive call.
    bench_call_delay: f64 = 0.010, "bench.call_delay";
    bench_token_delay: f64 = 0.0, "bench.token_delay";
    bench_tokens_per_call: usize = 0, "bench.tokens_per_call";
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |message: String| CliError::Config {
                line: Some(i + 1),
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("key `{key}` given twice")));
            }
            cfg.set(key, value).map_err(|m| bad(format!("{key}: {m}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            line: None,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        Self::parse(&text)
    }

    pub fn digest(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        h.write(self.canonical().as_bytes());
        h.finish()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: r4t::Result<()>| {
            r.map_err(|e| CliError::Config {
                line: None,
                message: e.to_string(),
            })
        };
        check(self.reward_weights().validate())?;
        check(self.ppo_config().validate())?;
        check(self.diffusion_config().validate())?;
        check(self.eval_config().validate())?;
        let fail = |message: String| Err(CliError::Config { line: None, message });
        if self.fanout_k > self.synth_l {
            return fail(format!(
                "fanout.k = {} exceeds synth.l = {}; the diffusion arm reads k generated rows",
                self.fanout_k, self.synth_l
            ));
        }
        if !(self.synth_keep_fraction > 0.0 && self.synth_keep_fraction <= 1.0) {
            return fail("synth.keep_fraction must lie in (0, 1]".into());
        }
        if !(self.policy_temperature > 0.0 && self.synth_temperature > 0.0) {
            return fail("temperatures must be positive".into());
        }
        if self.bench_batch_sizes.is_empty() || self.bench_batch_sizes.contains(&0) {
            return fail("bench.batch_sizes must list positive sizes".into());
        }
        if self.bench_call_delay < 0.0 || self.bench_token_delay < 0.0 {
            return fail("bench delays must be non-negative".into());
        }
        Ok(())
    }

    pub fn world_params(&self) -> WorldParams {
        WorldParams {
            seed: self.seed,
            dim: self.world_dim,
            clusters: self.world_clusters,
            items_per_cluster: self.world_items_per_cluster,
            query_count: self.world_query_count,
            clusters_per_query: self.world_clusters_per_query,
            cluster_spread: self.world_cluster_spread,
            variant_spread: self.world_variant_spread,
            heldout_fraction: self.world_heldout_fraction,
        }
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            lambda_g: self.reward_lambda_g,
            lambda_d: self.reward_lambda_d,
            lambda_a: self.reward_lambda_a,
        }
    }

    pub fn task_reward(&self) -> TaskReward {
        match self.mode {
            TargetMode::Oar => TaskReward::Abstract(self.reward_weights()),
            TargetMode::Wscr => TaskReward::Coverage,
        }
    }

    pub fn ppo_config(&self) -> SoftPpoConfig {
        SoftPpoConfig {
            clip_eps: self.grpo_clip_eps,
            beta1: self.grpo_beta1,
            beta2: self.grpo_beta2,
            adv_eps: self.grpo_adv_eps,
            group_size: self.grpo_group_size,
            learning_rate: self.grpo_learning_rate,
            iterations: self.grpo_iterations,
            queries_per_batch: self.grpo_queries_per_batch,
            inner_epochs: self.grpo_inner_epochs,
            k: self.fanout_k,
            n_per_subquery: self.fanout_n_per_subquery,
        }
    }

    pub fn harvest_config(&self) -> HarvestConfig {
        HarvestConfig {
            samples_per_query: self.synth_samples_per_query,
            temperature: self.synth_temperature,
            k: self.fanout_k,
            n_per_subquery: self.fanout_n_per_subquery,
        }
    }

    pub fn diffusion_config(&self) -> DiffusionConfig {
        DiffusionConfig {
            l: self.synth_l,
            d: self.world_dim,
            sigma_data: self.diffusion_sigma_data,
            sigma_min: self.diffusion_sigma_min,
            sigma_max: self.diffusion_sigma_max,
            cond_drop: self.diffusion_cond_drop,
            cfg_strength: self.diffusion_cfg_strength,
            sample_steps: self.diffusion_sample_steps,
            ema_decay: self.diffusion_ema_decay,
            width: self.diffusion_width,
            depth: self.diffusion_depth,
            learning_rate: self.diffusion_learning_rate,
            warmup_steps: self.diffusion_warmup_steps,
            total_steps: self.diffusion_total_steps,
            batch_size: self.diffusion_batch_size,
            churn: self.diffusion_churn,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.fanout_k,
            n_per_subquery: self.fanout_n_per_subquery,
            best_of_n: self.eval_best_of_n,
            runs: self.eval_runs,
        }
    }

    pub fn delay(&self) -> SimulatedDelay {
        SimulatedDelay {
            per_call: self.bench_call_delay,
            per_token: self.bench_token_delay,
            tokens_per_call: self.bench_tokens_per_call,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::parse("# nothing\n\n   \n").unwrap(), RunConfig::default());
    }

    #[test]
    fn values_and_comments() {
        let cfg = RunConfig::parse(
            "seed = 7  # trailing\nmode=wscr\ngrpo.learning_rate = 5\nbench.batch_sizes = 1, 2 ,4\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, TargetMode::Wscr);
        assert_eq!(cfg.grpo_learning_rate, 5.0);
        assert_eq!(cfg.bench_batch_sizes, vec![1, 2, 4]);
    }

    #[test]
    fn rejects_unknown_duplicate_and_malformed() {
        let line_of = |text: &str| match RunConfig::parse(text) {
            Err(CliError::Config { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(line_of("seed = 1\nwat = 3\n"), Some(2));
        assert_eq!(line_of("seed = 1\nseed = 2\n"), Some(2));
        assert_eq!(line_of("seed 1\n"), Some(1));
        assert_eq!(line_of("\n\nworld.dim = -3\n"), Some(3));
        assert_eq!(line_of("grpo.learning_rate = nan\n"), Some(1));
        assert_eq!(line_of("mode = both\n"), Some(1));
        assert_eq!(line_of("fanout.k = 20\n"), None);
        assert_eq!(line_of("grpo.clip_eps = 1.5\n"), None);
    }

    #[test]
    fn canonical_text_reparses_to_the_same_config() {
        let cfg = RunConfig::parse("seed = 3\ndiffusion.sigma_data = 0.25\nmode = wscr\n").unwrap();
        let text = cfg.canonical();
        assert_eq!(text.lines().count(), RunConfig::KEYS.len());
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn digest_tracks_values_not_spelling() {
        let a = RunConfig::parse("grpo.learning_rate = 5\n").unwrap();
        let b = RunConfig::parse("# same\ngrpo.learning_rate=5.0\n").unwrap();
        let c = RunConfig::parse("grpo.learning_rate = 5.5\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn digest_is_fnv1a() {
        let cfg = RunConfig::default();
        let mut h: u64 = 0xcbf29ce484222325;
        for b in cfg.canonical().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        assert_eq!(cfg.digest(), h);
    }

    #[test]
    fn core_configs_follow_the_keys() {
        let cfg = RunConfig::parse("world.dim = 8\nsynth.l = 10\nfanout.k = 4\n").unwrap();
        assert_eq!(cfg.diffusion_config().d, 8);
        assert_eq!(cfg.diffusion_config().l, 10);
        assert_eq!(cfg.ppo_config().k, 4);
        assert_eq!(cfg.harvest_config().k, 4);
        assert_eq!(cfg.eval_config().k, 4);
    }
}
