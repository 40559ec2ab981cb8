//! Image losses with their gradients.
//!
//! Images are row-major `height × width × channels` buffers. Every loss
//! returns its value together with dL/d(rendered).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::perceptual::FeatureNet;

/// Levels of the gradient-proxy perceptual loss.
pub const PROXY_SCALES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageDims {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

impl ImageDims {
    pub fn rgb(width: usize, height: usize) -> Self {
        Self { width, height, channels: 3 }
    }

    pub fn len(&self) -> usize {
        self.width * self.height * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean absolute error over the pixels where `region` is set (all when `None`).
pub fn loss_color(rendered: &[f64], target: &[f64], dims: ImageDims, region: Option<&[bool]>) -> Result<(f64, Vec<f64>)> {
    check_dim("rendered image", dims.len(), rendered.len())?;
    check_dim("target image", dims.len(), target.len())?;
    let pixels = dims.width * dims.height;
    if let Some(r) = region {
        check_dim("region mask", pixels, r.len())?;
    }
    let inside = |p: usize| region.is_none_or(|r| r[p]);
    let count = (0..pixels).filter(|&p| inside(p)).count() * dims.channels;
    if count == 0 {
        return Err(Error::Empty("color loss region"));
    }
    let mut grad = vec![0.0; rendered.len()];
    let mut sum = 0.0;
    for p in (0..pixels).filter(|&p| inside(p)) {
        for c in 0..dims.channels {
            let k = p * dims.channels + c;
            let d = rendered[k] - target[k];
            sum += d.abs();
            grad[k] = sign(d) / count as f64;
        }
    }
    Ok((sum / count as f64, grad))
}

/// Mean absolute error between accumulated opacity and the target mask.
pub fn loss_mask(alpha: &[f64], mask: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_dim("mask", alpha.len(), mask.len())?;
    if alpha.is_empty() {
        return Err(Error::Empty("mask loss"));
    }
    let n = alpha.len() as f64;
    let mut sum = 0.0;
    let grad = alpha
        .iter()
        .zip(mask)
        .map(|(a, m)| {
            sum += (a - m).abs();
            sign(a - m) / n
        })
        .collect();
    Ok((sum / n, grad))
}

/// 2×2 average pooling (odd trailing row/column dropped).
fn pool(img: &[f64], d: ImageDims) -> (Vec<f64>, ImageDims) {
    let nd = ImageDims { width: d.width / 2, height: d.height / 2, channels: d.channels };
    let mut out = vec![0.0; nd.len()];
    for y in 0..nd.height {
        for x in 0..nd.width {
            for c in 0..d.channels {
                let at = |yy: usize, xx: usize| img[(yy * d.width + xx) * d.channels + c];
                out[(y * nd.width + x) * d.channels + c] = 0.25 * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
            }
        }
    }
    (out, nd)
}

fn pool_backward(g: &[f64], nd: ImageDims, d: ImageDims) -> Vec<f64> {
    let mut out = vec![0.0; d.len()];
    for y in 0..nd.height {
        for x in 0..nd.width {
            for c in 0..d.channels {
                let v = 0.25 * g[(y * nd.width + x) * d.channels + c];
                for (yy, xx) in [(2 * y, 2 * x), (2 * y, 2 * x + 1), (2 * y + 1, 2 * x), (2 * y + 1, 2 * x + 1)] {
                    out[(yy * d.width + xx) * d.channels + c] += v;
                }
            }
        }
    }
    out
}

/// Mean |∇r − ∇t| over horizontal and vertical forward differences of `diff = r − t`,
/// plus its gradient w.r.t. `diff`.
fn gradient_l1(diff: &[f64], d: ImageDims) -> (f64, Vec<f64>) {
    let (w, h, ch) = (d.width, d.height, d.channels);
    let n = (h * w.saturating_sub(1) + h.saturating_sub(1) * w) * ch;
    let mut grad = vec![0.0; diff.len()];
    if n == 0 {
        return (0.0, grad);
    }
    let mut sum = 0.0;
    let inv = 1.0 / n as f64;
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let k = (y * w + x) * ch + c;
                if x + 1 < w {
                    let kk = k + ch;
                    let v = diff[kk] - diff[k];
                    sum += v.abs();
                    grad[kk] += sign(v) * inv;
                    grad[k] -= sign(v) * inv;
                }
                if y + 1 < h {
                    let kk = k + w * ch;
                    let v = diff[kk] - diff[k];
                    sum += v.abs();
                    grad[kk] += sign(v) * inv;
                    grad[k] -= sign(v) * inv;
                }
            }
        }
    }
    (sum * inv, grad)
}

/// Multi-scale image-gradient L1: each of [`PROXY_SCALES`] levels (full
/// resolution, then repeated 2×2 average pooling) contributes equally.
pub fn perceptual_proxy(rendered: &[f64], target: &[f64], dims: ImageDims) -> Result<(f64, Vec<f64>)> {
    check_dim("rendered image", dims.len(), rendered.len())?;
    check_dim("target image", dims.len(), target.len())?;
    let mut levels = vec![(rendered.iter().zip(target).map(|(a, b)| a - b).collect::<Vec<f64>>(), dims)];
    for _ in 1..PROXY_SCALES {
        let (img, d) = levels.last().expect("non-empty");
        let next = pool(img, *d);
        levels.push(next);
    }
    let mut total = 0.0;
    let mut upstream: Option<Vec<f64>> = None;
    for l in (0..PROXY_SCALES).rev() {
        let (img, d) = &levels[l];
        let (v, mut g) = gradient_l1(img, *d);
        total += v / PROXY_SCALES as f64;
        for e in g.iter_mut() {
            *e /= PROXY_SCALES as f64;
        }
        if let Some(up) = upstream.take() {
            let back = pool_backward(&up, levels[l + 1].1, *d);
            for (a, b) in g.iter_mut().zip(back) {
                *a += b;
            }
        }
        upstream = Some(g);
    }
    Ok((total, upstream.expect("at least one level")))
}

/// Bounding box of the in-image landmarks grown by `halfwidth`, clamped, as
/// inclusive pixel ranges `(x0, x1, y0, y1)`.
pub fn lip_patch(landmarks: &[[f64; 2]], halfwidth: usize, width: usize, height: usize) -> Result<(usize, usize, usize, usize)> {
    let inside: Vec<(usize, usize)> = landmarks
        .iter()
        .filter(|p| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < width as f64 && p[1] < height as f64)
        .map(|p| (p[0] as usize, p[1] as usize))
        .collect();
    if inside.is_empty() {
        return Err(Error::Empty("lip landmarks inside the image"));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for (x, y) in inside {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    Ok((x0.saturating_sub(halfwidth), (x1 + halfwidth).min(width - 1), y0.saturating_sub(halfwidth), (y1 + halfwidth).min(height - 1)))
}

/// L1 over the lip patch.
pub fn loss_lips(rendered: &[f64], target: &[f64], dims: ImageDims, landmarks: &[[f64; 2]], halfwidth: usize) -> Result<(f64, Vec<f64>)> {
    let (x0, x1, y0, y1) = lip_patch(landmarks, halfwidth, dims.width, dims.height)?;
    let mut region = vec![false; dims.width * dims.height];
    for y in y0..=y1 {
        for x in x0..=x1 {
            region[y * dims.width + x] = true;
        }
    }
    loss_color(rendered, target, dims, Some(&region))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum PerceptualMode {
    Off,
    #[default]
    Proxy,
    External(FeatureNet),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    pub lambda_mask: f64,
    pub lambda_perceptual: f64,
    pub lambda_lips: f64,
    pub perceptual: PerceptualMode,
    pub lip_halfwidth: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_mask: 0.1, lambda_perceptual: 0.05, lambda_lips: 0.2, perceptual: PerceptualMode::Proxy, lip_halfwidth: 8 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda_mask, self.lambda_perceptual, self.lambda_lips].iter().all(|l| *l >= 0.0 && l.is_finite()) {
            Ok(())
        } else {
            Err(Error::Config("loss weights must be finite and nonnegative".into()))
        }
    }
}

/// Ground truth for one frame.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub rgb: &'a [f64],
    /// Soft or binary foreground mask, one value per pixel.
    pub mask: Option<&'a [f64]>,
    pub lips: &'a [[f64; 2]],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossTerms {
    pub color: f64,
    pub mask: f64,
    pub perceptual: f64,
    pub lips: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct LossEval {
    pub terms: LossTerms,
    pub d_rgb: Vec<f64>,
    pub d_alpha: Vec<f64>,
}

/// `L_color + λ1 L_mask + λ2 L_perceptual + λ3 L_lips`. Terms with a zero
/// weight, a missing mask or no landmarks are skipped entirely.
pub fn total_loss(cfg: &LossConfig, rgb: &[f64], alpha: &[f64], target: &Target<'_>, dims: ImageDims) -> Result<LossEval> {
    cfg.validate()?;
    check_dim("alpha", dims.width * dims.height, alpha.len())?;
    let (color, mut d_rgb) = loss_color(rgb, target.rgb, dims, None)?;
    let mut terms = LossTerms { color, total: color, ..LossTerms::default() };
    let mut d_alpha = vec![0.0; alpha.len()];
    let add = |dst: &mut Vec<f64>, g: Vec<f64>, w: f64| {
        for (a, b) in dst.iter_mut().zip(g) {
            *a += w * b;
        }
    };
    if cfg.lambda_mask > 0.0 {
        if let Some(mask) = target.mask {
            let (v, g) = loss_mask(alpha, mask)?;
            terms.mask = v;
            terms.total += cfg.lambda_mask * v;
            add(&mut d_alpha, g, cfg.lambda_mask);
        }
    }
    if cfg.lambda_perceptual > 0.0 {
        let r = match &cfg.perceptual {
            PerceptualMode::Off => None,
            PerceptualMode::Proxy => Some(perceptual_proxy(rgb, target.rgb, dims)?),
            PerceptualMode::External(net) => Some(net.distance(rgb, target.rgb, dims)?),
        };
        if let Some((v, g)) = r {
            terms.perceptual = v;
            terms.total += cfg.lambda_perceptual * v;
            add(&mut d_rgb, g, cfg.lambda_perceptual);
        }
    }
    if cfg.lambda_lips > 0.0 && !target.lips.is_empty() {
        let (v, g) = loss_lips(rgb, target.rgb, dims, target.lips, cfg.lip_halfwidth)?;
        terms.lips = v;
        terms.total += cfg.lambda_lips * v;
        add(&mut d_rgb, g, cfg.lambda_lips);
    }
    Ok(LossEval { terms, d_rgb, d_alpha })
}
