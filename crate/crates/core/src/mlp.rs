//! Small fully connected network with manual backprop.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math;

/// ReLU hidden layers, linear output. Parameters live in one flat buffer,
/// per layer `W` (`out × in`, row-major) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    pub params: Vec<f64>,
}

/// Activations kept for [`Mlp::backward`].
#[derive(Debug, Clone, Default)]
pub struct MlpTape {
    /// Input of each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
}

impl Mlp {
    /// All parameters zero.
    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(alloc::format!("bad layer widths {dims:?}")));
        }
        let n = dims.windows(2).map(|w| w[1] * (w[0] + 1)).sum();
        Ok(Self { dims: dims.to_vec(), params: vec![0.0; n] })
    }

    /// Hidden layers uniform in `±1/sqrt(fan_in)`, final layer zeroed.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(dims)?;
        let last = mlp.layer_count() - 1;
        let mut off = 0;
        for l in 0..last {
            let (i, o) = (dims[l], dims[l + 1]);
            let bound = 1.0 / math::sqrt(i as f64);
            for v in &mut mlp.params[off..off + o * (i + 1)] {
                *v = rng.random_range(-bound..bound);
            }
            off += o * (i + 1);
        }
        Ok(mlp)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("at least two widths")
    }

    pub fn layer_count(&self) -> usize {
        self.dims.len() - 1
    }

    /// Offset of layer `l`'s weights, and of its biases.
    fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let off: usize = self.dims.windows(2).take(l).map(|w| w[1] * (w[0] + 1)).sum();
        (off, off + self.dims[l] * self.dims[l + 1])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.run(x, None)
    }

    pub fn forward_recorded(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        let mut tape = MlpTape::default();
        let out = self.run(x, Some(&mut tape))?;
        Ok((out, tape))
    }

    fn run(&self, x: &[f64], mut tape: Option<&mut MlpTape>) -> Result<Vec<f64>> {
        check_dim("mlp input", self.input_dim(), x.len())?;
        let mut h = x.to_vec();
        let last = self.layer_count() - 1;
        for l in 0..=last {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..w_off + o * i];
            let b = &self.params[b_off..b_off + o];
            let mut next = b.to_vec();
            for (r, n) in next.iter_mut().enumerate() {
                let row = &w[r * i..(r + 1) * i];
                *n += row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>();
                if l < last && *n < 0.0 {
                    *n = 0.0;
                }
            }
            if let Some(t) = tape.as_deref_mut() {
                t.inputs.push(core::mem::take(&mut h));
            }
            h = next;
        }
        Ok(h)
    }

    /// Accumulates dL/d params into `d_params` and returns dL/d input.
    pub fn backward(&self, tape: &MlpTape, d_out: &[f64], d_params: &mut [f64]) -> Result<Vec<f64>> {
        check_dim("mlp output gradient", self.output_dim(), d_out.len())?;
        check_dim("mlp parameter gradient", self.params.len(), d_params.len())?;
        if tape.inputs.len() != self.layer_count() {
            return Err(Error::MissingAux);
        }
        let mut g = d_out.to_vec();
        for l in (0..self.layer_count()).rev() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let input = &tape.inputs[l];
            let mut d_in = vec![0.0; i];
            for r in 0..o {
                let gr = g[r];
                if gr == 0.0 {
                    continue;
                }
                d_params[b_off + r] += gr;
                let row = w_off + r * i;
                for c in 0..i {
                    d_params[row + c] += gr * input[c];
                    d_in[c] += gr * self.params[row + c];
                }
            }
            if l > 0 {
                // `input` is the ReLU output of layer l-1; zero means inactive.
                for (d, &a) in d_in.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            g = d_in;
        }
        Ok(g)
    }
}
