//! Fully connected SiLU network with hand-written backpropagation.

use crate::error::{Error, Result};
use crate::numerics::{gemm, silu, silu_grad, Matrix, Rng};

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    /// `inputs × outputs`.
    w: Matrix,
    b: Vec<f64>,
}

const FORWARD_BLOCK: usize = 256;

/// `depth` SiLU hidden layers of `width` units and a linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct Cache {
    /// Input to every layer (the first is the network input).
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
    pub(crate) out: Matrix,
}

impl Mlp {
    /// LeCun-normal weights, zero biases.
    pub fn new(input: usize, width: usize, depth: usize, output: usize, rng: &mut Rng) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(width, depth));
        dims.push(output);
        let layers = dims
            .windows(2)
            .map(|w| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1]).map(|_| scale * rng.normal()).collect();
                Layer {
                    w: Matrix::from_vec(w[0], w[1], data).expect("finite init"),
                    b: vec![0.0; w[1]],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.cols()
    }

    /// Lengths of the parameter tables in storage order (weights then bias, per layer).
    pub fn table_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().len(), l.b.len()])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.table_lens().iter().sum()
    }

    pub fn tables(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice(), l.b.as_slice()])
            .collect()
    }

    pub fn tables_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w.as_mut_slice(), l.b.as_mut_slice()])
            .collect()
    }

    /// All parameters concatenated in table order.
    pub fn flat(&self) -> Vec<f64> {
        self.tables().concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for t in self.tables_mut() {
            t.copy_from_slice(&values[at..at + t.len()]);
            at += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tables().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Rows of `x` are independent inputs. Large inputs are processed in
    /// blocks of rows so the activations stay cache resident.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.rows() <= FORWARD_BLOCK {
            return self.forward_block(x);
        }
        let mut out = Vec::with_capacity(x.rows() * self.output_dim());
        for chunk in x.as_slice().chunks(FORWARD_BLOCK * x.cols()) {
            let block = Matrix::from_vec(chunk.len() / x.cols(), x.cols(), chunk.to_vec())?;
            out.extend_from_slice(self.forward_block(&block)?.as_slice());
        }
        Matrix::from_vec(x.rows(), self.output_dim(), out)
    }

    fn forward_block(&self, x: &Matrix) -> Result<Matrix> {
        let mut a = self.affine(0, x)?;
        for i in 1..self.layers.len() {
            a.as_mut_slice().iter_mut().for_each(|v| *v = silu(*v));
            a = self.affine(i, &a)?;
        }
        Ok(a)
    }

    fn affine(&self, i: usize, x: &Matrix) -> Result<Matrix> {
        let layer = &self.layers[i];
        let mut out = Matrix::zeros(x.rows(), layer.w.cols());
        for r in 0..x.rows() {
            out.row_mut(r).copy_from_slice(&layer.b);
        }
        gemm(1.0, x, false, &layer.w, false, 1.0, &mut out)?;
        Ok(out)
    }

    pub(crate) fn forward_cached(&self, x: &Matrix) -> Result<Cache> {
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut z = self.affine(0, x)?;
        for i in 1..self.layers.len() {
            let mut a = z.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = silu(*v));
            pre.push(z);
            z = self.affine(i, &a)?;
            inputs.push(a);
        }
        Ok(Cache {
            inputs,
            pre,
            out: z,
        })
    }

    /// Gradients of `Σ d_out ⊙ output` in table order.
    pub(crate) fn backward(&self, cache: &Cache, d_out: &Matrix) -> Result<Vec<Vec<f64>>> {
        let n = self.layers.len();
        let mut grads = vec![Vec::new(); 2 * n];
        let mut delta = d_out.clone();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let mut gw = Matrix::zeros(layer.w.rows(), layer.w.cols());
            gemm(1.0, input, true, &delta, false, 0.0, &mut gw)?;
            let mut gb = vec![0.0; layer.b.len()];
            for r in 0..delta.rows() {
                for (g, d) in gb.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            grads[2 * i] = gw.into_vec();
            grads[2 * i + 1] = gb;
            if i > 0 {
                let mut da = Matrix::zeros(delta.rows(), layer.w.rows());
                gemm(1.0, &delta, false, &layer.w, true, 0.0, &mut da)?;
                for (g, p) in da.as_mut_slice().iter_mut().zip(cache.pre[i - 1].as_slice()) {
                    *g *= silu_grad(*p);
                }
                delta = da;
            }
        }
        Ok(grads)
    }
}
