//! Variance-exploding diffusion over `L × d` target tensors.
//!
//! One network is applied to every row, seeing the row, the mean of all
//! rows and the condition, so the denoiser commutes with row reordering.
//! It is preconditioned as in EDM, trained with the EDM loss
//! weighting on noise levels drawn from a tangent-warped uniform schedule,
//! and sampled with an Euler probability-flow integrator under
//! classifier-free guidance. Generated rows are decoded by exact
//! nearest-neighbour search.

mod io;
mod net;
mod sample;
mod train;

pub use io::{load_state, read_state, save_state, write_state};
pub use net::Mlp;
pub use sample::{cfg_denoise, decode, sample, sample_batch, sigma_levels, Denoise, OracleDenoiser};
pub use train::{
    adam_update, batch_loss, draw_noise, ema_update, lr_at, train, Adam, DenoiserState, NoiseDraw,
};

use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionConfig {
    /// Rows per target tensor.
    pub l: usize,
    pub d: usize,
    pub sigma_data: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub cond_drop: f64,
    pub cfg_strength: f64,
    pub sample_steps: usize,
    pub ema_decay: f64,
    pub width: usize,
    /// Hidden layers.
    pub depth: usize,
    /// Peak learning rate.
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub batch_size: usize,
    /// Stochastic churn per sampling trajectory; 0 gives the deterministic ODE.
    pub churn: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            l: 12,
            d: 128,
            sigma_data: 0.088,
            sigma_min: 1e-4,
            sigma_max: 80.0,
            cond_drop: 0.1,
            cfg_strength: 0.1,
            sample_steps: 256,
            ema_decay: 0.9999,
            width: 512,
            depth: 3,
            learning_rate: 3e-4,
            warmup_steps: 500,
            total_steps: 5000,
            batch_size: 32,
            churn: 0.0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l == 0 || self.d == 0 {
            return Err(Error::domain("L and d must be positive"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::domain(format!(
                "need 0 < sigma_min < sigma_max, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::domain("sigma_data must be positive"));
        }
        if !(0.0..1.0).contains(&self.cond_drop) {
            return Err(Error::domain("cond_drop must lie in [0, 1)"));
        }
        if !(self.cfg_strength >= 0.0 && self.cfg_strength.is_finite()) {
            return Err(Error::domain("cfg_strength must be non-negative"));
        }
        if self.sample_steps == 0 {
            return Err(Error::domain("sample_steps must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::domain("ema_decay must lie in [0, 1]"));
        }
        if self.width == 0 {
            return Err(Error::domain("width must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning_rate must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch_size must be positive"));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::domain("warmup_steps exceeds total_steps"));
        }
        if !(self.churn >= 0.0 && self.churn.is_finite()) {
            return Err(Error::domain("churn must be non-negative"));
        }
        Ok(())
    }

    /// Flattened target length `L·d`.
    pub fn target_len(&self) -> usize {
        self.l * self.d
    }

    /// Per-row network input: the noisy row, the mean noisy row, the
    /// condition, the null flag and the noise embedding.
    pub fn input_len(&self) -> usize {
        3 * self.d + 2
    }
}

/// `λ(σ) = (σ² + σ_d²) / (σ·σ_d)²`.
pub fn edm_weight(sigma: f64, sigma_data: f64) -> f64 {
    (sigma * sigma + sigma_data * sigma_data) / (sigma * sigma_data).powi(2)
}

/// EDM preconditioning coefficients at one noise level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precond {
    pub c_skip: f64,
    pub c_out: f64,
    pub c_in: f64,
    pub c_noise: f64,
}

impl Precond {
    pub fn new(sigma: f64, sigma_data: f64) -> Self {
        let s2 = sigma * sigma + sigma_data * sigma_data;
        Self {
            c_skip: sigma_data * sigma_data / s2,
            c_out: sigma * sigma_data / s2.sqrt(),
            c_in: 1.0 / s2.sqrt(),
            c_noise: sigma.ln() / 4.0,
        }
    }
}

/// `D = c_skip·z + c_out·F`.
pub fn precondition(f: &[f64], z_noisy: &[f64], sigma: f64, sigma_data: f64) -> Result<Vec<f64>> {
    if f.len() != z_noisy.len() {
        return Err(Error::shape("network output and noisy input differ in length"));
    }
    let p = Precond::new(sigma, sigma_data);
    Ok(z_noisy
        .iter()
        .zip(f)
        .map(|(z, f)| p.c_skip * z + p.c_out * f)
        .collect())
}

/// `tan(t·(atan σ_max − atan σ_min) + atan σ_min)`.
pub fn tangent_sigma(t: f64, sigma_min: f64, sigma_max: f64) -> f64 {
    let (a, b) = (sigma_min.atan(), sigma_max.atan());
    (t * (b - a) + a).tan().clamp(sigma_min, sigma_max)
}

/// Noise level with `atan σ` uniform on `[atan σ_min, atan σ_max]`.
pub fn sample_sigma_tangent(rng: &mut Rng, sigma_min: f64, sigma_max: f64) -> f64 {
    tangent_sigma(rng.uniform(), sigma_min, sigma_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_at_sigma_data() {
        let sd: f64 = 0.088;
        let w = edm_weight(sd, sd);
        assert!((w - 2.0 / (sd * sd)).abs() < 1e-9);
        assert!((w - 258.264).abs() < 1e-3);
    }

    #[test]
    fn weight_asymptote() {
        let sd = 0.088;
        let w = edm_weight(1e6, sd);
        assert!((w - 1.0 / (sd * sd)).abs() / w < 1e-9);
    }

    #[test]
    fn preconditioning_limits() {
        let p = Precond::new(1e-9, 0.088);
        assert!((p.c_skip - 1.0).abs() < 1e-12);
        assert!(p.c_out < 1e-8);
        let p = Precond::new(0.088, 0.088);
        assert!((p.c_skip - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_network_gives_skip() {
        let z = [0.3, -1.2, 2.0];
        let d = precondition(&[0.0; 3], &z, 0.5, 0.25).unwrap();
        let c_skip = 0.0625 / (0.25 + 0.0625);
        for (a, b) in d.iter().zip(z) {
            assert_eq!(*a, c_skip * b);
        }
    }

    #[test]
    fn identities_hold() {
        let mut rng = Rng::new(3);
        for _ in 0..100 {
            let sigma = (rng.uniform() * 12.0 - 9.0).exp();
            let sd = 0.088;
            let p = Precond::new(sigma, sd);
            assert!((edm_weight(sigma, sd) * p.c_out * p.c_out - 1.0).abs() < 1e-12);
            assert!((p.c_in * p.c_in * (sigma * sigma + sd * sd) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tangent_endpoints_and_range() {
        assert!((tangent_sigma(0.0, 1e-4, 80.0) - 1e-4).abs() < 1e-15);
        assert!((tangent_sigma(1.0, 1e-4, 80.0) - 80.0).abs() < 1e-9);
        let mut rng = Rng::new(4);
        for _ in 0..100_000 {
            let s = sample_sigma_tangent(&mut rng, 1e-4, 80.0);
            assert!((1e-4..=80.0).contains(&s));
        }
    }

    #[test]
    fn tangent_is_uniform_in_arctan() {
        let (lo, hi) = (1e-4f64, 80.0f64);
        let mut rng = Rng::new(5);
        let n = 100_000;
        let mut u: Vec<f64> = (0..n)
            .map(|_| {
                let s = sample_sigma_tangent(&mut rng, lo, hi);
                (s.atan() - lo.atan()) / (hi.atan() - lo.atan())
            })
            .collect();
        u.sort_by(f64::total_cmp);
        let ks = u
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let lo = (x - i as f64 / n as f64).abs();
                let hi = (x - (i + 1) as f64 / n as f64).abs();
                lo.max(hi)
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS statistic {ks}");
    }

    #[test]
    fn config_validation() {
        assert!(DiffusionConfig::default().validate().is_ok());
        let bad = [
            DiffusionConfig { sigma_min: 0.0, ..Default::default() },
            DiffusionConfig { sigma_min: 90.0, ..Default::default() },
            DiffusionConfig { cond_drop: 1.0, ..Default::default() },
            DiffusionConfig { cfg_strength: -0.1, ..Default::default() },
            DiffusionConfig { sample_steps: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Domain(_))));
        }
    }
}
