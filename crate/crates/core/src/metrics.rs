//! Evaluation metrics.

use crate::error::{check_dim, Error, Result};
use crate::math;

/// Reported when the mean squared error is below `1e-10`.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio for images in `[0, 1]`.
pub fn psnr(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("psnr image", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::Empty("psnr image"));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(psnr_from_mse(mse))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 { PSNR_CAP } else { (10.0 * math::log10(1.0 / mse)).min(PSNR_CAP) }
}

/// Mean L2 distance between paired landmarks, in pixels.
pub fn lmd(pred: &[[f64; 2]], gt: &[[f64; 2]]) -> Result<f64> {
    check_dim("landmark count", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(Error::Empty("landmarks"));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| math::sqrt((p[0] - g[0]) * (p[0] - g[0]) + (p[1] - g[1]) * (p[1] - g[1]))).sum();
    Ok(sum / gt.len() as f64)
}

/// Pearson correlation; zero when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim("pearson series", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::Empty("pearson needs two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / math::sqrt(sxx * syy))
}
