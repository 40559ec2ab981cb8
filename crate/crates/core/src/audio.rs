//! Audio feature tracks and the temporal smoother producing `f_a`.
//!
//! A window of frames around the current one passes through a stack of
//! 1D convolutions over time, one self-attention block, and a mean-pool.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::math;

pub const DEFAULT_WINDOW: usize = 16;
pub const DEFAULT_OUTPUT_DIM: usize = 32;
pub const DEFAULT_CHANNELS: usize = 32;
pub const CONV_LAYERS: usize = 2;
pub const KERNEL: usize = 3;
pub const LEAKY_SLOPE: f64 = 0.02;

/// Per-frame ASR features, `frames × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFeatureTrack {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
    pub source_model: String,
}

impl AudioFeatureTrack {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>, source_model: impl Into<String>) -> Result<Self> {
        check_dim("audio feature payload", frames * dim, data.len())?;
        if dim == 0 {
            return Err(Error::Empty("audio feature dimension"));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("audio features"));
        }
        Ok(Self { frames, dim, data, source_model: source_model.into() })
    }

    /// Single-channel track from a scalar signal.
    pub fn from_signal(signal: &[f64], source_model: impl Into<String>) -> Result<Self> {
        Self::new(signal.len(), 1, signal.iter().map(|&v| v as f32).collect(), source_model)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// `len` frames starting at `center - len/2`, replicating the edges.
    pub fn window(&self, center: usize, len: usize) -> Result<Vec<f64>> {
        if self.frames == 0 {
            return Err(Error::Empty("audio track"));
        }
        let mut out = Vec::with_capacity(len * self.dim);
        let start = center as isize - (len / 2) as isize;
        for k in 0..len {
            let t = (start + k as isize).clamp(0, self.frames as isize - 1) as usize;
            out.extend(self.row(t).iter().map(|&v| f64::from(v)));
        }
        Ok(out)
    }
}

/// Fraction of the image covered by open eyes.
pub fn eye_feature(eye_area: f64, image_area: f64) -> Result<f64> {
    if !(image_area > 0.0) {
        return Err(Error::Config("image area must be positive".into()));
    }
    Ok((eye_area / image_area).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmootherShape {
    pub input_dim: usize,
    pub channels: usize,
    pub output_dim: usize,
    pub window: usize,
}

impl SmootherShape {
    pub fn new(input_dim: usize) -> Self {
        Self { input_dim, channels: DEFAULT_CHANNELS, output_dim: DEFAULT_OUTPUT_DIM, window: DEFAULT_WINDOW }
    }

    fn conv_in(&self, layer: usize) -> usize {
        if layer == 0 { self.input_dim } else { self.channels }
    }
}

/// Parameter blocks of the smoother, as `(offset, len)` into the flat buffer.
#[derive(Debug, Clone, Copy)]
struct Layout {
    conv: [(usize, usize); CONV_LAYERS],
    conv_b: [(usize, usize); CONV_LAYERS],
    /// Query, key, value, output.
    proj: [(usize, usize); 4],
    proj_b: [(usize, usize); 4],
    total: usize,
}

impl Layout {
    fn new(s: &SmootherShape) -> Self {
        let mut off = 0;
        let mut take = |n: usize| {
            let r = (off, n);
            off += n;
            r
        };
        let c = s.channels;
        let conv0 = take(c * s.conv_in(0) * KERNEL);
        let conv0_b = take(c);
        let conv1 = take(c * s.conv_in(1) * KERNEL);
        let conv1_b = take(c);
        let (q, qb) = (take(c * c), take(c));
        let (k, kb) = (take(c * c), take(c));
        let (v, vb) = (take(c * c), take(c));
        let (o, ob) = (take(s.output_dim * c), take(s.output_dim));
        Layout { conv: [conv0, conv1], conv_b: [conv0_b, conv1_b], proj: [q, k, v, o], proj_b: [qb, kb, vb, ob], total: off }
    }
}

/// Learned weights of the temporal smoother.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherWeights {
    shape: SmootherShape,
    pub params: Vec<f64>,
}

/// Intermediate values of one [`SmootherWeights::forward_recorded`] call.
#[derive(Debug, Clone)]
pub struct SmootherTape {
    x: Vec<f64>,
    /// Pre-activation of each conv layer, `window × channels`.
    pre: [Vec<f64>; CONV_LAYERS],
    /// Post-activation of each conv layer.
    post: [Vec<f64>; CONV_LAYERS],
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    z: Vec<f64>,
}

fn leaky(v: f64) -> f64 {
    if v > 0.0 { v } else { LEAKY_SLOPE * v }
}

impl SmootherWeights {
    pub fn zeros(shape: SmootherShape) -> Result<Self> {
        if shape.input_dim == 0 || shape.channels == 0 || shape.output_dim == 0 || shape.window == 0 {
            return Err(Error::Config("smoother dimensions must be positive".into()));
        }
        Ok(Self { shape, params: vec![0.0; Layout::new(&shape).total] })
    }

    /// Every block uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng>(shape: SmootherShape, rng: &mut R) -> Result<Self> {
        let mut w = Self::zeros(shape)?;
        let lay = Layout::new(&shape);
        let c = shape.channels;
        let fans = [shape.input_dim * KERNEL, c * KERNEL];
        let mut fill = |(off, n): (usize, usize), fan: usize, params: &mut [f64]| {
            let b = 1.0 / math::sqrt(fan as f64);
            for v in &mut params[off..off + n] {
                *v = rng.random_range(-b..b);
            }
        };
        for l in 0..CONV_LAYERS {
            fill(lay.conv[l], fans[l], &mut w.params);
            fill(lay.conv_b[l], fans[l], &mut w.params);
        }
        for p in 0..4 {
            fill(lay.proj[p], c, &mut w.params);
            fill(lay.proj_b[p], c, &mut w.params);
        }
        Ok(w)
    }

    pub fn shape(&self) -> &SmootherShape {
        &self.shape
    }

    pub fn output_dim(&self) -> usize {
        self.shape.output_dim
    }

    /// Range of the query and key projection weights and biases.
    pub fn query_key_ranges(&self) -> [core::ops::Range<usize>; 4] {
        let l = Layout::new(&self.shape);
        let r = |(o, n): (usize, usize)| o..o + n;
        [r(l.proj[0]), r(l.proj_b[0]), r(l.proj[1]), r(l.proj_b[1])]
    }

    /// `f_a` for the window centered at `center`.
    pub fn smooth_window(&self, track: &AudioFeatureTrack, center: usize) -> Result<Vec<f64>> {
        Ok(self.forward_recorded(&self.gather(track, center)?)?.0)
    }

    pub fn gather(&self, track: &AudioFeatureTrack, center: usize) -> Result<Vec<f64>> {
        check_dim("audio feature dimension", self.shape.input_dim, track.dim())?;
        track.window(center, self.shape.window)
    }

    /// Forward over a gathered `window × input_dim` block.
    pub fn forward_recorded(&self, x: &[f64]) -> Result<(Vec<f64>, SmootherTape)> {
        let s = &self.shape;
        check_dim("smoother window", s.window * s.input_dim, x.len())?;
        let lay = Layout::new(s);
        let (w, c) = (s.window, s.channels);
        let p = &self.params;

        let mut pre: [Vec<f64>; CONV_LAYERS] = Default::default();
        let mut post: [Vec<f64>; CONV_LAYERS] = Default::default();
        let mut h = x.to_vec();
        for l in 0..CONV_LAYERS {
            let cin = s.conv_in(l);
            let (wo, _) = lay.conv[l];
            let (bo, _) = lay.conv_b[l];
            let mut a = vec![0.0; w * c];
            for t in 0..w {
                for o in 0..c {
                    let mut acc = p[bo + o];
                    for k in 0..KERNEL {
                        let src = t as isize + k as isize - (KERNEL / 2) as isize;
                        if src < 0 || src >= w as isize {
                            continue;
                        }
                        let row = &h[src as usize * cin..(src as usize + 1) * cin];
                        let wrow = wo + (o * cin) * KERNEL;
                        for i in 0..cin {
                            acc += p[wrow + i * KERNEL + k] * row[i];
                        }
                    }
                    a[t * c + o] = acc;
                }
            }
            let out: Vec<f64> = a.iter().map(|&v| leaky(v)).collect();
            pre[l] = a;
            post[l] = out.clone();
            h = out;
        }

        let project = |idx: usize, input: &[f64], out_dim: usize| -> Vec<f64> {
            let (wo, _) = lay.proj[idx];
            let (bo, _) = lay.proj_b[idx];
            let mut r = vec![0.0; w * out_dim];
            for t in 0..w {
                for o in 0..out_dim {
                    let mut acc = p[bo + o];
                    for i in 0..c {
                        acc += p[wo + o * c + i] * input[t * c + i];
                    }
                    r[t * out_dim + o] = acc;
                }
            }
            r
        };
        let q = project(0, &h, c);
        let k = project(1, &h, c);
        let v = project(2, &h, c);
        let scale = 1.0 / math::sqrt(c as f64);
        let mut attn = vec![0.0; w * w];
        for i in 0..w {
            let row = &mut attn[i * w..(i + 1) * w];
            for j in 0..w {
                row[j] = scale * (0..c).map(|m| q[i * c + m] * k[j * c + m]).sum::<f64>();
            }
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in row.iter_mut() {
                *e = math::exp(*e - max);
                sum += *e;
            }
            for e in row.iter_mut() {
                *e /= sum;
            }
        }
        let mut z = vec![0.0; w * c];
        for i in 0..w {
            for j in 0..w {
                let a = attn[i * w + j];
                for m in 0..c {
                    z[i * c + m] += a * v[j * c + m];
                }
            }
        }
        let o = project(3, &z, s.output_dim);
        let mut f = vec![0.0; s.output_dim];
        for t in 0..w {
            for d in 0..s.output_dim {
                f[d] += o[t * s.output_dim + d];
            }
        }
        for v in &mut f {
            *v /= w as f64;
        }
        Ok((f, SmootherTape { x: x.to_vec(), pre, post, q, k, v, attn, z }))
    }

    /// Accumulates dL/d params given dL/d `f_a`.
    pub fn backward(&self, tape: &SmootherTape, d_out: &[f64], d_params: &mut [f64]) -> Result<()> {
        let s = &self.shape;
        check_dim("smoother output gradient", s.output_dim, d_out.len())?;
        check_dim("smoother parameter gradient", self.params.len(), d_params.len())?;
        let lay = Layout::new(s);
        let (w, c, da) = (s.window, s.channels, s.output_dim);
        let p = &self.params;

        // Mean-pool, then output projection.
        let d_o: Vec<f64> = d_out.iter().map(|g| g / w as f64).collect();
        let (wo, _) = lay.proj[3];
        let (bo, _) = lay.proj_b[3];
        let mut d_z = vec![0.0; w * c];
        for t in 0..w {
            for o in 0..da {
                let g = d_o[o];
                d_params[bo + o] += g;
                for i in 0..c {
                    d_params[wo + o * c + i] += g * tape.z[t * c + i];
                    d_z[t * c + i] += g * p[wo + o * c + i];
                }
            }
        }

        // z = A v.
        let mut d_attn = vec![0.0; w * w];
        let mut d_v = vec![0.0; w * c];
        for i in 0..w {
            for j in 0..w {
                let a = tape.attn[i * w + j];
                let mut acc = 0.0;
                for m in 0..c {
                    acc += d_z[i * c + m] * tape.v[j * c + m];
                    d_v[j * c + m] += a * d_z[i * c + m];
                }
                d_attn[i * w + j] = acc;
            }
        }
        // Softmax rows, then scaled scores.
        let scale = 1.0 / math::sqrt(c as f64);
        let mut d_q = vec![0.0; w * c];
        let mut d_k = vec![0.0; w * c];
        for i in 0..w {
            let row = &tape.attn[i * w..(i + 1) * w];
            let dot: f64 = (0..w).map(|j| row[j] * d_attn[i * w + j]).sum();
            for j in 0..w {
                let d_score = row[j] * (d_attn[i * w + j] - dot) * scale;
                if d_score == 0.0 {
                    continue;
                }
                for m in 0..c {
                    d_q[i * c + m] += d_score * tape.k[j * c + m];
                    d_k[j * c + m] += d_score * tape.q[i * c + m];
                }
            }
        }

        let h = &tape.post[CONV_LAYERS - 1];
        let mut d_h = vec![0.0; w * c];
        for (idx, d) in [(0, &d_q), (1, &d_k), (2, &d_v)] {
            let (wo, _) = lay.proj[idx];
            let (bo, _) = lay.proj_b[idx];
            for t in 0..w {
                for o in 0..c {
                    let g = d[t * c + o];
                    if g == 0.0 {
                        continue;
                    }
                    d_params[bo + o] += g;
                    for i in 0..c {
                        d_params[wo + o * c + i] += g * h[t * c + i];
                        d_h[t * c + i] += g * p[wo + o * c + i];
                    }
                }
            }
        }

        for l in (0..CONV_LAYERS).rev() {
            let cin = s.conv_in(l);
            let input = if l == 0 { &tape.x } else { &tape.post[l - 1] };
            let (wo, _) = lay.conv[l];
            let (bo, _) = lay.conv_b[l];
            let mut d_in = vec![0.0; w * cin];
            for t in 0..w {
                for o in 0..c {
                    let g = d_h[t * c + o] * if tape.pre[l][t * c + o] > 0.0 { 1.0 } else { LEAKY_SLOPE };
                    if g == 0.0 {
                        continue;
                    }
                    d_params[bo + o] += g;
                    for k in 0..KERNEL {
                        let src = t as isize + k as isize - (KERNEL / 2) as isize;
                        if src < 0 || src >= w as isize {
                            continue;
                        }
                        let src = src as usize;
                        let wrow = wo + (o * cin) * KERNEL;
                        for i in 0..cin {
                            d_params[wrow + i * KERNEL + k] += g * input[src * cin + i];
                            d_in[src * cin + i] += g * p[wrow + i * KERNEL + k];
                        }
                    }
                }
            }
            d_h = d_in;
        }
        Ok(())
    }

    /// Attention weights of the last recorded call, `window × window`.
    pub fn attention(tape: &SmootherTape) -> &[f64] {
        &tape.attn
    }
}
