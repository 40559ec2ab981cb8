//! User-supplied convolutional feature extractor for the perceptual term.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::loss::ImageDims;

/// Stride-1, zero-padded ("same") 2D convolution followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Odd kernel side.
    pub kernel: usize,
    /// `out × in × kernel × kernel`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNet {
    layers: Vec<ConvLayer>,
}

impl FeatureNet {
    pub fn new(layers: Vec<ConvLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Empty("feature net layers"));
        }
        let mut channels = 3;
        for l in &layers {
            if l.in_channels != channels || l.kernel % 2 == 0 || l.out_channels == 0 {
                return Err(Error::Config(alloc::format!(
                    "feature net layer expects {channels} input channels and an odd kernel, got {} and {}",
                    l.in_channels, l.kernel
                )));
            }
            check_dim("feature net weights", l.out_channels * l.in_channels * l.kernel * l.kernel, l.weights.len())?;
            check_dim("feature net bias", l.out_channels, l.bias.len())?;
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite("feature net weights"));
            }
            channels = l.out_channels;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    /// Activations after every layer, input first.
    fn features(&self, img: &[f64], w: usize, h: usize) -> Vec<Vec<f64>> {
        let mut acts = vec![img.to_vec()];
        for l in &self.layers {
            let input = acts.last().expect("non-empty");
            let r = (l.kernel / 2) as isize;
            let mut out = vec![0.0; w * h * l.out_channels];
            for y in 0..h {
                for x in 0..w {
                    for o in 0..l.out_channels {
                        let mut acc = l.bias[o];
                        for ky in 0..l.kernel {
                            let sy = y as isize + ky as isize - r;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..l.kernel {
                                let sx = x as isize + kx as isize - r;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let src = (sy as usize * w + sx as usize) * l.in_channels;
                                for i in 0..l.in_channels {
                                    acc += l.weights[((o * l.in_channels + i) * l.kernel + ky) * l.kernel + kx] * input[src + i];
                                }
                            }
                        }
                        out[(y * w + x) * l.out_channels + o] = acc.max(0.0);
                    }
                }
            }
            acts.push(out);
        }
        acts
    }

    /// Mean squared distance between final feature maps, and its gradient
    /// w.r.t. `rendered`.
    pub fn distance(&self, rendered: &[f64], target: &[f64], dims: ImageDims) -> Result<(f64, Vec<f64>)> {
        check_dim("rendered image", dims.len(), rendered.len())?;
        check_dim("target image", dims.len(), target.len())?;
        if dims.channels != 3 {
            return Err(Error::Dimension { what: "feature net image channels", expected: 3, actual: dims.channels });
        }
        let (w, h) = (dims.width, dims.height);
        let fr = self.features(rendered, w, h);
        let ft = self.features(target, w, h);
        let last_r = fr.last().expect("non-empty");
        let last_t = ft.last().expect("non-empty");
        let n = last_r.len() as f64;
        let mut value = 0.0;
        let mut g: Vec<f64> = last_r
            .iter()
            .zip(last_t)
            .map(|(a, b)| {
                value += (a - b) * (a - b);
                2.0 * (a - b) / n
            })
            .collect();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let out = &fr[li + 1];
            let r = (l.kernel / 2) as isize;
            let mut d_in = vec![0.0; w * h * l.in_channels];
            for y in 0..h {
                for x in 0..w {
                    for o in 0..l.out_channels {
                        let k = (y * w + x) * l.out_channels + o;
                        if out[k] <= 0.0 || g[k] == 0.0 {
                            continue;
                        }
                        for ky in 0..l.kernel {
                            let sy = y as isize + ky as isize - r;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..l.kernel {
                                let sx = x as isize + kx as isize - r;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let src = (sy as usize * w + sx as usize) * l.in_channels;
                                for i in 0..l.in_channels {
                                    d_in[src + i] += g[k] * l.weights[((o * l.in_channels + i) * l.kernel + ky) * l.kernel + kx];
                                }
                            }
                        }
                    }
                }
            }
            g = d_in;
        }
        Ok((value / n, g))
    }
}
