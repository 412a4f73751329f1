//! Dense linear algebra, activations, a symmetric eigensolver, seeded
//! randomness and a finite-difference gradient checker.

mod eigen;
mod gradcheck;
mod matrix;
mod rng;

pub use eigen::sym_eigenvalues;
pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{dot, gemm, matmul, Matrix};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Temperature softmax with max-subtraction.
pub fn softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let logp = log_softmax(v, temperature)?;
    Ok(logp.into_iter().map(f64::exp).collect())
}

/// Log of [`softmax`], computed stably.
pub fn log_softmax(v: &[f64], temperature: f64) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::domain(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if v.is_empty() {
        return Err(Error::domain("softmax of an empty vector"));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::numeric(format!("non-finite logit at index {i}")));
    }
    let scaled: Vec<f64> = v.iter().map(|x| x / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    Ok(scaled.into_iter().map(|x| x - lse).collect())
}

/// SiLU activation `x·σ(x)`.
#[inline]
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Derivative of [`silu`].
#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Shannon entropy (nats) of a histogram of counts.
pub fn entropy_of_counts(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / t;
            -p * p.ln()
        })
        .sum()
}
