//! Guided probability-flow sampling and nearest-neighbour decoding.

use super::train::{fill_rows, DenoiserState};
use super::{tangent_sigma, DiffusionConfig, Precond};
use crate::error::{Error, Result};
use crate::numerics::{l2_norm, Matrix, Rng};
use crate::rewards::FanOutResult;
use crate::store::{Embedding, EmbeddingDb};
use crate::synth::{TargetMode, TargetTensor};

/// Anything that maps noisy flattened tensors to denoised ones.
pub trait Denoise {
    fn config(&self) -> &DiffusionConfig;

    /// Each row of `z_noisy` is one `L·d` tensor; `None` selects the null condition.
    fn denoise(&self, z_noisy: &Matrix, sigma: f64, conds: &[Option<&[f64]>]) -> Result<Matrix>;
}

impl Denoise for DenoiserState {
    fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    /// Uses the EMA weights.
    fn denoise(&self, z_noisy: &Matrix, sigma: f64, conds: &[Option<&[f64]>]) -> Result<Matrix> {
        let cfg = &self.config;
        let n = cfg.target_len();
        if z_noisy.cols() != n || conds.len() != z_noisy.rows() {
            return Err(Error::shape("denoiser input does not match the model shape"));
        }
        let mut x = Matrix::zeros(z_noisy.rows() * cfg.l, cfg.input_len());
        for (i, c) in conds.iter().enumerate() {
            if c.is_some_and(|c| c.len() != cfg.d) {
                return Err(Error::shape("condition dimension differs from d"));
            }
            fill_rows(cfg, z_noisy.row(i), sigma, *c, &mut x, i * cfg.l);
        }
        let f = self.ema.forward(&x)?;
        let mut out = Matrix::from_vec(z_noisy.rows(), n, f.into_vec())?;
        let p = Precond::new(sigma, cfg.sigma_data);
        for (o, z) in out.as_mut_slice().iter_mut().zip(z_noisy.as_slice()) {
            *o = p.c_skip * z + p.c_out * *o;
        }
        Ok(out)
    }
}

/// Returns one fixed tensor for every input, optionally another for the null condition.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    pub config: DiffusionConfig,
    pub conditional: Vec<f64>,
    pub unconditional: Vec<f64>,
}

impl Denoise for OracleDenoiser {
    fn config(&self) -> &DiffusionConfig {
        &self.config
    }

    fn denoise(&self, z_noisy: &Matrix, _sigma: f64, conds: &[Option<&[f64]>]) -> Result<Matrix> {
        let mut out = Matrix::zeros(z_noisy.rows(), z_noisy.cols());
        for (i, c) in conds.iter().enumerate() {
            let src = if c.is_some() { &self.conditional } else { &self.unconditional };
            out.row_mut(i).copy_from_slice(src);
        }
        Ok(out)
    }
}

/// `(1 + w)·D(z; σ, c) − w·D(z; σ, ∅)`.
pub fn cfg_denoise<D: Denoise + ?Sized>(
    den: &D,
    z_noisy: &Matrix,
    sigma: f64,
    conds: &[&[f64]],
    w: f64,
) -> Result<Matrix> {
    let c: Vec<Option<&[f64]>> = conds.iter().map(|c| Some(*c)).collect();
    let mut out = den.denoise(z_noisy, sigma, &c)?;
    if w == 0.0 {
        return Ok(out);
    }
    let u = den.denoise(z_noisy, sigma, &vec![None; conds.len()])?;
    for (o, u) in out.as_mut_slice().iter_mut().zip(u.as_slice()) {
        *o = (1.0 + w) * *o - w * u;
    }
    Ok(out)
}

/// `σ_N > … > σ_1 = σ_min`, followed by `σ_0 = 0`. A single step starts at `σ_max`.
pub fn sigma_levels(cfg: &DiffusionConfig) -> Vec<f64> {
    let n = cfg.sample_steps;
    let mut levels: Vec<f64> = (0..n)
        .map(|j| {
            let t = if n == 1 { 1.0 } else { 1.0 - j as f64 / (n - 1) as f64 };
            tangent_sigma(t, cfg.sigma_min, cfg.sigma_max)
        })
        .collect();
    levels.push(0.0);
    levels
}

/// Draws one tensor per condition. Rows are renormalised to unit length.
pub fn sample_batch<D: Denoise + ?Sized>(
    den: &D,
    conds: &[&[f64]],
    mode: TargetMode,
    rng: &mut Rng,
) -> Result<Vec<TargetTensor>> {
    let cfg = den.config();
    cfg.validate()?;
    if conds.is_empty() {
        return Ok(Vec::new());
    }
    let (b, n) = (conds.len(), cfg.target_len());
    let data = (0..b * n).map(|_| cfg.sigma_max * rng.normal()).collect();
    let mut z = Matrix::from_vec(b, n, data)?;
    let levels = sigma_levels(cfg);
    let gamma = if cfg.churn > 0.0 {
        (cfg.churn / cfg.sample_steps as f64).min(std::f64::consts::SQRT_2 - 1.0)
    } else {
        0.0
    };
    for (step, pair) in levels.windows(2).enumerate() {
        let (mut sigma, next) = (pair[0], pair[1]);
        if gamma > 0.0 {
            let hat = sigma * (1.0 + gamma);
            let s = (hat * hat - sigma * sigma).sqrt();
            z.as_mut_slice().iter_mut().for_each(|v| *v += s * rng.normal());
            sigma = hat;
        }
        let d = cfg_denoise(den, &z, sigma, conds, cfg.cfg_strength)?;
        let h = (next - sigma) / sigma;
        for (v, dv) in z.as_mut_slice().iter_mut().zip(d.as_slice()) {
            *v += h * (*v - dv);
        }
        if !z.is_finite() {
            return Err(Error::numeric(format!("sampler state non-finite at step {step}")));
        }
    }
    (0..b)
        .map(|i| {
            let mut rows = Vec::with_capacity(n);
            for r in z.row(i).chunks_exact(cfg.d) {
                let norm = l2_norm(r);
                if !(norm > 0.0) {
                    return Err(Error::numeric("sampled a zero row"));
                }
                rows.extend(r.iter().map(|x| x / norm));
            }
            TargetTensor::new(Matrix::from_vec(cfg.l, cfg.d, rows)?, mode)
        })
        .collect()
}

pub fn sample<D: Denoise + ?Sized>(den: &D, z_q: &[f64], mode: TargetMode, rng: &mut Rng) -> Result<TargetTensor> {
    Ok(sample_batch(den, &[z_q], mode, rng)?.remove(0))
}

/// `n` nearest items for every row; the result keeps per-row provenance.
pub fn decode(target: &TargetTensor, db: &EmbeddingDb, n: usize) -> Result<FanOutResult> {
    let rows = (0..target.len())
        .map(|i| Embedding::new(target.row(i).to_vec()))
        .collect::<Result<Vec<_>>>()?;
    FanOutResult::retrieve(rows, db, n)
}
