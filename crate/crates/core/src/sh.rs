//! Real spherical harmonics up to degree 3, in the ordering used by the
//! reference 3D Gaussian splatting code.

use crate::error::{Error, Result};
use crate::math::Vec3;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Number of coefficients per channel for `degree`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values and their gradients w.r.t. the (unit) direction.
/// Only the first `coeff_count(degree)` entries are filled.
pub fn basis_with_grad(dir: &Vec3, degree: usize) -> ([f64; 16], [Vec3; 16]) {
    let mut y = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    let [x, yy, z] = *dir;
    y[0] = SH_C0;
    if degree >= 1 {
        y[1] = -SH_C1 * yy;
        y[2] = SH_C1 * z;
        y[3] = -SH_C1 * x;
        g[1] = [0.0, -SH_C1, 0.0];
        g[2] = [0.0, 0.0, SH_C1];
        g[3] = [-SH_C1, 0.0, 0.0];
    }
    if degree >= 2 {
        let (xx, y2, zz) = (x * x, yy * yy, z * z);
        let c = SH_C2;
        y[4] = c[0] * x * yy;
        y[5] = c[1] * yy * z;
        y[6] = c[2] * (2.0 * zz - xx - y2);
        y[7] = c[3] * x * z;
        y[8] = c[4] * (xx - y2);
        g[4] = [c[0] * yy, c[0] * x, 0.0];
        g[5] = [0.0, c[1] * z, c[1] * yy];
        g[6] = [-2.0 * c[2] * x, -2.0 * c[2] * yy, 4.0 * c[2] * z];
        g[7] = [c[3] * z, 0.0, c[3] * x];
        g[8] = [2.0 * c[4] * x, -2.0 * c[4] * yy, 0.0];
    }
    if degree >= 3 {
        let (xx, y2, zz) = (x * x, yy * yy, z * z);
        let k = SH_C3;
        y[9] = k[0] * yy * (3.0 * xx - y2);
        y[10] = k[1] * x * yy * z;
        y[11] = k[2] * yy * (4.0 * zz - xx - y2);
        y[12] = k[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
        y[13] = k[4] * x * (4.0 * zz - xx - y2);
        y[14] = k[5] * z * (xx - y2);
        y[15] = k[6] * x * (xx - 3.0 * y2);
        g[9] = [6.0 * k[0] * x * yy, k[0] * (3.0 * xx - 3.0 * y2), 0.0];
        g[10] = [k[1] * yy * z, k[1] * x * z, k[1] * x * yy];
        g[11] = [-2.0 * k[2] * x * yy, k[2] * (4.0 * zz - xx - 3.0 * y2), 8.0 * k[2] * yy * z];
        g[12] = [-6.0 * k[3] * x * z, -6.0 * k[3] * yy * z, k[3] * (6.0 * zz - 3.0 * xx - 3.0 * y2)];
        g[13] = [k[4] * (4.0 * zz - 3.0 * xx - y2), -2.0 * k[4] * x * yy, 8.0 * k[4] * x * z];
        g[14] = [2.0 * k[5] * x * z, -2.0 * k[5] * yy * z, k[5] * (xx - y2)];
        g[15] = [k[6] * (3.0 * xx - 3.0 * y2), -6.0 * k[6] * x * yy, 0.0];
    }
    (y, g)
}

/// RGB color from SH coefficients: basis contraction, +0.5 shift, clamp to [0, 1].
///
/// `sh` holds `coeff_count(coeff_degree)` coefficients × 3 channels; only the
/// first `coeff_count(degree)` are used.
pub fn eval_sh_color(sh: &[f64], coeff_degree: usize, view_dir: &Vec3, degree: usize) -> Result<Vec3> {
    if degree > coeff_degree || coeff_degree > 3 {
        return Err(Error::ShDegree { requested: degree, available: coeff_degree.min(3) });
    }
    crate::error::check_dim("sh coefficients", coeff_count(coeff_degree) * 3, sh.len())?;
    Ok(eval_unclamped(sh, view_dir, degree).map(|v| v.clamp(0.0, 1.0)))
}

/// Shifted color before clamping. `sh` must hold at least `coeff_count(degree) * 3` values.
pub(crate) fn eval_unclamped(sh: &[f64], view_dir: &Vec3, degree: usize) -> Vec3 {
    let (basis, _) = basis_with_grad(view_dir, degree);
    let mut rgb = [0.5; 3];
    for k in 0..coeff_count(degree) {
        for c in 0..3 {
            rgb[c] += basis[k] * sh[k * 3 + c];
        }
    }
    rgb
}

/// Backward of the clamped color. Accumulates dL/dsh into `d_sh` and returns
/// dL/d(view_dir).
pub(crate) fn eval_backward(sh: &[f64], view_dir: &Vec3, degree: usize, d_color: &Vec3, d_sh: &mut [f64]) -> Vec3 {
    let (basis, grad) = basis_with_grad(view_dir, degree);
    let raw = eval_unclamped(sh, view_dir, degree);
    let mut upstream = [0.0; 3];
    for c in 0..3 {
        // Gradient only flows where the clamp is inactive.
        if raw[c] > 0.0 && raw[c] < 1.0 {
            upstream[c] = d_color[c];
        }
    }
    let mut d_dir = [0.0; 3];
    for k in 0..coeff_count(degree) {
        let mut s = 0.0;
        for c in 0..3 {
            d_sh[k * 3 + c] += basis[k] * upstream[c];
            s += sh[k * 3 + c] * upstream[c];
        }
        for a in 0..3 {
            d_dir[a] += grad[k][a] * s;
        }
    }
    d_dir
}
