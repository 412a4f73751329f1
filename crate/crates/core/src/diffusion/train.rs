//! EDM-weighted denoising loss, Adam, warmup-cosine schedule and EMA.

use super::net::Mlp;
use super::{edm_weight, sample_sigma_tangent, DiffusionConfig, Precond};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};
use crate::synth::SynthRecord;

/// Denoiser parameters and their EMA shadow.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserState {
    pub config: DiffusionConfig,
    pub net: Mlp,
    pub ema: Mlp,
}

impl DenoiserState {
    pub fn new(config: DiffusionConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let net = Mlp::new(
            config.input_len(),
            config.width,
            config.depth,
            config.d,
            rng,
        );
        Ok(Self {
            ema: net.clone(),
            net,
            config,
        })
    }
}

/// Writes the `L` network input rows of one tensor into `x` starting at row `at`.
///
/// Row `i` is `[c_in·z_i, c_in·mean_j z_j, cond/σ_data or 0, is_null, c_noise]`.
pub(crate) fn fill_rows(
    cfg: &DiffusionConfig,
    z_noisy: &[f64],
    sigma: f64,
    cond: Option<&[f64]>,
    x: &mut Matrix,
    at: usize,
) {
    let p = Precond::new(sigma, cfg.sigma_data);
    let d = cfg.d;
    let mut mean = vec![0.0; d];
    for r in z_noisy.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / cfg.l as f64;
        }
    }
    for (i, r) in z_noisy.chunks_exact(d).enumerate() {
        let row = x.row_mut(at + i);
        for (o, z) in row[..d].iter_mut().zip(r) {
            *o = p.c_in * z;
        }
        for (o, m) in row[d..2 * d].iter_mut().zip(&mean) {
            *o = p.c_in * m;
        }
        match cond {
            Some(c) => {
                for (o, v) in row[2 * d..3 * d].iter_mut().zip(c) {
                    *o = v / cfg.sigma_data;
                }
            }
            None => row[2 * d..3 * d].fill(0.0),
        }
        row[3 * d] = if cond.is_some() { 0.0 } else { 1.0 };
        row[3 * d + 1] = p.c_noise;
    }
}

/// Everything random about one training example.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    /// Row order applied to the target.
    pub perm: Vec<usize>,
    pub sigma: f64,
    /// `L·d` standard-normal values, added after permuting.
    pub eps: Vec<f64>,
    /// Whether the condition is replaced by the null condition.
    pub drop: bool,
}

pub fn draw_noise(cfg: &DiffusionConfig, rng: &mut Rng) -> NoiseDraw {
    let perm = rng.permutation(cfg.l);
    let sigma = sample_sigma_tangent(rng, cfg.sigma_min, cfg.sigma_max);
    let eps = (0..cfg.target_len()).map(|_| rng.normal()).collect();
    let drop = cfg.cond_drop > 0.0 && rng.uniform() < cfg.cond_drop;
    NoiseDraw {
        perm,
        sigma,
        eps,
        drop,
    }
}

fn check_record(cfg: &DiffusionConfig, r: &SynthRecord) -> Result<()> {
    if r.target.len() != cfg.l || r.target.dim() != cfg.d || r.z_q.dim() != cfg.d {
        return Err(Error::shape(format!(
            "record for query {} is {}x{} with condition of {}, model expects {}x{}",
            r.query_id,
            r.target.len(),
            r.target.dim(),
            r.z_q.dim(),
            cfg.l,
            cfg.d
        )));
    }
    Ok(())
}

/// Mean over the batch of `λ(σ)·mean‖D − Z‖²` and its gradient in table order.
pub fn batch_loss(
    net: &Mlp,
    cfg: &DiffusionConfig,
    records: &[&SynthRecord],
    draws: &[NoiseDraw],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if records.is_empty() || records.len() != draws.len() {
        return Err(Error::shape("one noise draw per record, at least one record"));
    }
    let (b, n, d) = (records.len(), cfg.target_len(), cfg.d);
    let mut x = Matrix::zeros(b * cfg.l, cfg.input_len());
    let mut targets = Vec::with_capacity(b);
    let mut noisy = Vec::with_capacity(b);
    for (i, (r, draw)) in records.iter().zip(draws).enumerate() {
        check_record(cfg, r)?;
        if draw.perm.len() != cfg.l || draw.eps.len() != n {
            return Err(Error::shape("noise draw does not match the model shape"));
        }
        let mut z = Vec::with_capacity(n);
        for &p in &draw.perm {
            z.extend_from_slice(r.target.row(p));
        }
        let zn: Vec<f64> = z.iter().zip(&draw.eps).map(|(a, e)| a + draw.sigma * e).collect();
        let cond = (!draw.drop).then_some(&r.z_q[..d]);
        fill_rows(cfg, &zn, draw.sigma, cond, &mut x, i * cfg.l);
        targets.push(z);
        noisy.push(zn);
    }

    let cache = net.forward_cached(&x)?;
    let mut d_out = Matrix::zeros(b * cfg.l, d);
    let mut loss = 0.0;
    for i in 0..b {
        let sigma = draws[i].sigma;
        let p = Precond::new(sigma, cfg.sigma_data);
        let lambda = edm_weight(sigma, cfg.sigma_data);
        let f = &cache.out.as_slice()[i * n..(i + 1) * n];
        let mut sq = 0.0;
        let grad_row = &mut d_out.as_mut_slice()[i * n..(i + 1) * n];
        for j in 0..n {
            let diff = p.c_skip * noisy[i][j] + p.c_out * f[j] - targets[i][j];
            sq += diff * diff;
            grad_row[j] = 2.0 * lambda * diff * p.c_out / (n * b) as f64;
        }
        let li = lambda * sq / n as f64;
        if !li.is_finite() {
            return Err(Error::numeric(format!(
                "non-finite loss for record of query {}",
                records[i].query_id
            )));
        }
        loss += li;
    }
    let grads = net.backward(&cache, &d_out)?;
    Ok((loss / b as f64, grads))
}

/// Linear warmup to `peak` over `warmup` steps, cosine decay to zero at `total`.
pub fn lr_at(step: usize, peak: f64, warmup: usize, total: usize) -> f64 {
    if step < warmup {
        return peak * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return peak;
    }
    let progress = ((step - warmup) as f64 / (total - warmup) as f64).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp) -> Self {
        let zeros: Vec<Vec<f64>> = net.table_lens().into_iter().map(|n| vec![0.0; n]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

pub fn adam_update(net: &mut Mlp, opt: &mut Adam, grads: &[Vec<f64>], lr: f64) -> Result<()> {
    if grads.len() != opt.m.len() {
        return Err(Error::shape("gradient tables do not match the optimiser"));
    }
    opt.t += 1;
    let bc1 = 1.0 - opt.beta1.powi(opt.t);
    let bc2 = 1.0 - opt.beta2.powi(opt.t);
    for (((p, g), m), v) in net.tables_mut().into_iter().zip(grads).zip(&mut opt.m).zip(&mut opt.v) {
        for i in 0..p.len() {
            m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + opt.eps);
        }
    }
    Ok(())
}

/// `ema ← decay·ema + (1 − decay)·param`.
pub fn ema_update(ema: &mut Mlp, net: &Mlp, decay: f64) {
    for (e, p) in ema.tables_mut().into_iter().zip(net.tables()) {
        for (a, b) in e.iter_mut().zip(p) {
            *a = decay * *a + (1.0 - decay) * b;
        }
    }
}

/// Runs `config.total_steps` Adam steps; `sink` sees `(step, loss, lr)`.
pub fn train(
    state: &DenoiserState,
    dataset: &[SynthRecord],
    rng: &mut Rng,
    mut sink: impl FnMut(usize, f64, f64),
) -> Result<(DenoiserState, Vec<f64>)> {
    let cfg = &state.config;
    cfg.validate()?;
    let mut out = state.clone();
    if cfg.total_steps == 0 {
        return Ok((out, Vec::new()));
    }
    if dataset.is_empty() {
        return Err(Error::domain("diffusion training on an empty dataset"));
    }
    for r in dataset {
        check_record(cfg, r)?;
    }
    let mut opt = Adam::new(&out.net);
    let mut losses = Vec::with_capacity(cfg.total_steps);
    for step in 0..cfg.total_steps {
        let batch: Vec<&SynthRecord> = (0..cfg.batch_size)
            .map(|_| &dataset[rng.below(dataset.len())])
            .collect();
        let draws: Vec<NoiseDraw> = batch.iter().map(|_| draw_noise(cfg, rng)).collect();
        let (loss, grads) = batch_loss(&out.net, cfg, &batch, &draws)?;
        let lr = lr_at(step, cfg.learning_rate, cfg.warmup_steps, cfg.total_steps);
        adam_update(&mut out.net, &mut opt, &grads, lr)?;
        ema_update(&mut out.ema, &out.net, cfg.ema_decay);
        sink(step, loss, lr);
        losses.push(loss);
    }
    if !out.net.is_finite() {
        return Err(Error::numeric("denoiser weights diverged"));
    }
    Ok((out, losses))
}
