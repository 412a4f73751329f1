//! One function per subcommand plus the artifact names they share.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use r4t::diffusion::{self, decode, load_state, sample_batch, save_state, DenoiserState};
use r4t::evalbench::{
    compare_pipelines, latency_bench, latency_csv, latency_svg, reports_csv, reports_summary, DiffusionArm,
};
use r4t::grpo::{self, trace_csv};
use r4t::numerics::Rng;
use r4t::policy::PolicyParams;
use r4t::store::{generate_world, Query, SyntheticWorld};
use r4t::synth::{harvest, keep_top_fraction, load_dataset, save_dataset, synthesize, SynthRecord};

use crate::manifest::Manifest;
use crate::{CliError, Command, RunConfig};

pub const WORLD_FILES: [&str; 5] = [
    "world/db.r4te",
    "world/centers.r4te",
    "world/vocab.r4te",
    "world/queries.r4te",
    "world/queries.csv",
];
pub const POLICY0: &str = "policy0.r4tp";
pub const POLICY: &str = "policy.r4tp";
pub const TRACE: &str = "trace.csv";
pub const DATASET: &str = "dataset.r4ts";
pub const DENOISER: &str = "denoiser.r4td";
pub const DIFFUSION_LOSS: &str = "diffusion_loss.csv";
pub const SAMPLES: &str = "samples.r4ts";
pub const DECODED: &str = "decoded.csv";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "summary.txt";
pub const LATENCY_CSV: &str = "latency.csv";
pub const LATENCY_SVG: &str = "latency.svg";

const STREAM_FOLM: u64 = 1;
const STREAM_SYNTH: u64 = 2;
const STREAM_DIFFUSION: u64 = 3;
const STREAM_SAMPLE: u64 = 4;
const STREAM_BENCH: u64 = 6;

/// Resolved config plus where artifacts live.
pub struct Context {
    pub cfg: RunConfig,
    pub digest: u64,
    pub out: PathBuf,
    pub force: bool,
    /// Suppresses the per-stage progress lines.
    pub quiet: bool,
}

impl Context {
    pub fn new(cfg: RunConfig, out: PathBuf, force: bool) -> Self {
        Self {
            digest: cfg.digest(),
            cfg,
            out,
            force,
            quiet: false,
        }
    }

    fn say(&self, line: std::fmt::Arguments<'_>) {
        if !self.quiet {
            println!("{line}");
        }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    fn require(&self, rel: &str, producer: Command) -> Result<PathBuf, CliError> {
        let p = self.path(rel);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Missing {
                path: p.display().to_string(),
                producer: producer.name(),
            })
        }
    }

    fn rng(&self, stream: u64) -> Rng {
        Rng::with_stream(self.cfg.seed, stream)
    }

    fn world(&self) -> Result<SyntheticWorld, CliError> {
        for f in WORLD_FILES {
            self.require(f, Command::WorldGen)?;
        }
        Ok(SyntheticWorld::load(&self.path("world"))?)
    }

    fn policy(&self, rel: &str) -> Result<PolicyParams, CliError> {
        Ok(PolicyParams::load(&self.require(rel, Command::TrainFolm)?)?)
    }

    fn denoiser(&self) -> Result<DenoiserState, CliError> {
        Ok(load_state(&self.require(DENOISER, Command::TrainDiffusion)?)?)
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.path(rel), text).map_err(r4t::Error::from)?;
        Ok(())
    }

    fn record(&self, files: &[&str]) -> Result<(), CliError> {
        let mut m = Manifest::load(&self.out)?;
        for f in files {
            m.record(&self.out, f, self.digest)?;
        }
        m.save(&self.out)
    }
}

pub fn run_stage(ctx: &Context, command: Command) -> Result<(), CliError> {
    fs::create_dir_all(&ctx.out).map_err(r4t::Error::from)?;
    match command {
        Command::WorldGen => world_gen(ctx),
        Command::TrainFolm => train_folm(ctx),
        Command::Synth => synth(ctx),
        Command::TrainDiffusion => train_diffusion(ctx),
        Command::Sample => sample(ctx),
        Command::Eval => eval(ctx),
        Command::Bench => bench(ctx),
        Command::Pipeline => crate::PIPELINE.iter().try_for_each(|&c| run_stage(ctx, c)),
    }
}

fn world_gen(ctx: &Context) -> Result<(), CliError> {
    let world = generate_world(&ctx.cfg.world_params())?;
    world.save(&ctx.path("world"))?;
    ctx.record(&WORLD_FILES)?;
    ctx.say(format_args!(
        "world-gen: {} items, {} tokens, {} queries ({} held out)",
        world.db.len(),
        world.vocab_size(),
        world.queries.len(),
        world.heldout_queries().count()
    ));
    Ok(())
}

fn train_folm(ctx: &Context) -> Result<(), CliError> {
    let world = ctx.world()?;
    let cfg = &ctx.cfg;
    let mut rng = ctx.rng(STREAM_FOLM);
    let p0 = PolicyParams::random(
        world.vocab_size(),
        world.dim(),
        cfg.policy_init_scale,
        cfg.policy_temperature,
        &mut rng,
    )?;
    let (params, trace) = grpo::train(&p0, &world, &cfg.task_reward(), &cfg.ppo_config(), &mut rng, |_| {})?;
    p0.save(&ctx.path(POLICY0))?;
    params.save(&ctx.path(POLICY))?;
    ctx.write_text(TRACE, &trace_csv(&trace))?;
    ctx.record(&[POLICY0, POLICY, TRACE])?;
    match (trace.first(), trace.last()) {
        (Some(a), Some(b)) => ctx.say(format_args!(
            "train-folm: {} iterations, batch reward {:.4} -> {:.4}",
            trace.len(),
            a.stats.reward,
            b.stats.reward
        )),
        _ => ctx.say(format_args!("train-folm: 0 iterations")),
    }
    Ok(())
}

fn synth(ctx: &Context) -> Result<(), CliError> {
    let world = ctx.world()?;
    let params = ctx.policy(POLICY)?;
    let cfg = &ctx.cfg;
    let mut rng = ctx.rng(STREAM_SYNTH);
    let samples = harvest(&params, &world, &cfg.harvest_config(), &mut rng)?;
    let harvested = samples.len();
    let kept = keep_top_fraction(&world, samples, &cfg.task_reward(), cfg.synth_keep_fraction)?;
    let records = synthesize(&world, &kept, cfg.mode, cfg.synth_l, &mut rng)?;
    save_dataset(&records, &ctx.path(DATASET))?;
    ctx.record(&[DATASET])?;
    ctx.say(format_args!("synth: kept {} of {harvested} rollouts", records.len()));
    Ok(())
}

fn train_diffusion(ctx: &Context) -> Result<(), CliError> {
    let dataset = load_dataset(&ctx.require(DATASET, Command::Synth)?)?;
    let mut rng = ctx.rng(STREAM_DIFFUSION);
    let state = DenoiserState::new(ctx.cfg.diffusion_config(), &mut rng)?;
    let mut csv = String::from("step,loss,lr\n");
    let (state, losses) = diffusion::train(&state, &dataset, &mut rng, |step, loss, lr| {
        let _ = writeln!(csv, "{step},{loss},{lr}");
    })?;
    save_state(&state, &ctx.path(DENOISER))?;
    ctx.write_text(DIFFUSION_LOSS, &csv)?;
    ctx.record(&[DENOISER, DIFFUSION_LOSS])?;
    let tail = losses.len().min(100);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    ctx.say(format_args!(
        "train-diffusion: {} steps, loss {:.4} -> {:.4} (means of first and last {tail})",
        losses.len(),
        mean(&losses[..tail]),
        mean(&losses[losses.len() - tail..])
    ));
    Ok(())
}

fn sample(ctx: &Context) -> Result<(), CliError> {
    let world = ctx.world()?;
    let den = ctx.denoiser()?;
    let queries: Vec<&Query> = world.heldout_queries().collect();
    let conds: Vec<&[f64]> = queries.iter().map(|q| &q.embedding[..]).collect();
    let targets = sample_batch(&den, &conds, ctx.cfg.mode, &mut ctx.rng(STREAM_SAMPLE))?;
    let mut csv = String::from("query_id,row,retrieved\n");
    let mut records = Vec::with_capacity(targets.len());
    for (q, target) in queries.iter().zip(targets) {
        let res = decode(&target, &world.db, ctx.cfg.fanout_n_per_subquery)?;
        for (row, ids) in res.per_sub_query.iter().enumerate() {
            let ids: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            let _ = writeln!(csv, "{},{row},{}", q.id, ids.join(" "));
        }
        records.push(SynthRecord {
            query_id: q.id,
            z_q: q.embedding.clone(),
            target,
        });
    }
    if records.is_empty() {
        return Err(r4t::Error::Domain("world has no held-out queries to sample for".into()).into());
    }
    save_dataset(&records, &ctx.path(SAMPLES))?;
    ctx.write_text(DECODED, &csv)?;
    ctx.record(&[SAMPLES, DECODED])?;
    ctx.say(format_args!("sample: {} tensors for held-out queries", records.len()));
    Ok(())
}

fn eval(ctx: &Context) -> Result<(), CliError> {
    let world = ctx.world()?;
    let p0 = ctx.policy(POLICY0)?;
    let params = ctx.policy(POLICY)?;
    let den = ctx.denoiser()?;
    if !ctx.force {
        let m = Manifest::load(&ctx.out)?;
        for f in WORLD_FILES.iter().chain(&[POLICY0, POLICY, DENOISER]) {
            m.verify(&ctx.out, f, ctx.digest)?;
        }
    }
    let arm = DiffusionArm {
        denoiser: &den,
        mode: ctx.cfg.mode,
    };
    let reports = compare_pipelines(
        &world,
        &p0,
        &params,
        &arm,
        &ctx.cfg.task_reward(),
        &ctx.cfg.eval_config(),
        ctx.cfg.seed,
        ctx.digest,
    )?;
    let summary = reports_summary(&reports);
    ctx.write_text(METRICS, &reports_csv(&reports))?;
    ctx.write_text(SUMMARY, &summary)?;
    ctx.record(&[METRICS, SUMMARY])?;
    if !ctx.quiet {
        print!("{summary}");
    }
    Ok(())
}

fn bench(ctx: &Context) -> Result<(), CliError> {
    let world = ctx.world()?;
    let params = ctx.policy(POLICY)?;
    let den = ctx.denoiser()?;
    let cfg = &ctx.cfg;
    let rows = latency_bench(
        &cfg.bench_batch_sizes,
        &cfg.delay(),
        cfg.fanout_k,
        cfg.fanout_n_per_subquery,
        &params,
        &world,
        &den,
        &mut ctx.rng(STREAM_BENCH),
    )?;
    ctx.write_text(LATENCY_CSV, &latency_csv(&rows))?;
    ctx.write_text(LATENCY_SVG, &latency_svg(&rows))?;
    ctx.record(&[LATENCY_CSV, LATENCY_SVG])?;
    for r in &rows {
        ctx.say(format_args!(
            "bench: batch {:>5}  autoregressive {:>9.4}s  diffusion {:>9.4}s  speedup {:>6.1}x",
            r.batch,
            r.ar_seconds,
            r.diff_seconds,
            r.speedup()
        ));
    }
    Ok(())
}

/// Every file `pipeline` writes, relative to the output directory.
pub fn pipeline_files() -> Vec<&'static str> {
    let mut v: Vec<&str> = WORLD_FILES.to_vec();
    v.extend([
        POLICY0,
        POLICY,
        TRACE,
        DATASET,
        DENOISER,
        DIFFUSION_LOSS,
        SAMPLES,
        DECODED,
        METRICS,
        SUMMARY,
        crate::manifest::FILE_NAME,
    ]);
    v
}
