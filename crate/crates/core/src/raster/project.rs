//! World-to-screen projection of Gaussians (EWA splatting) and its backward.

use crate::error::{Error, Result};
use crate::gaussian::{self, Activated, GaussianCloud};
use crate::math::{self, Mat2, Mat23, Mat3, Vec2, Vec3};
use crate::raster::camera::{Camera, Intrinsics};
use crate::sh;

/// Low-pass dilation added to the projected covariance, in px².
pub const LOW_PASS: f64 = 0.3;

/// Screen-space extent of a splat in standard deviations.
pub const EXTENT_SIGMA: f64 = 3.0;

/// Jacobian of the pinhole projection `(fx x/z + cx, fy y/z + cy)` at `mean_cam`.
pub fn projection_jacobian(mean_cam: &Vec3, intrinsics: &Intrinsics, near: f64) -> Result<Mat23> {
    let [x, y, z] = *mean_cam;
    if !(z >= near) {
        return Err(Error::Culled { depth: z, near });
    }
    let (fx, fy) = (intrinsics.fx, intrinsics.fy);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    Ok([[fx * iz, 0.0, -fx * x * iz2], [0.0, fy * iz, -fy * y * iz2]])
}

/// Σ' = J W Σ Wᵀ Jᵀ + λ I.
pub fn project_covariance(cov3d: &Mat3, view_rot: &Mat3, jacobian: &Mat23) -> Mat2 {
    let m = math::mat3_mul(&math::mat3_mul(view_rot, cov3d), &math::mat3_transpose(view_rot));
    let mut out = math::sandwich23(jacobian, &m);
    // Symmetrize against rounding.
    let off = 0.5 * (out[0][1] + out[1][0]);
    out[0][1] = off;
    out[1][0] = off;
    out[0][0] += LOW_PASS;
    out[1][1] += LOW_PASS;
    out
}

/// A Gaussian after projection into a particular camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    pub index: usize,
    pub mean2d: Vec2,
    pub cov2d: Mat2,
    /// Inverse of `cov2d`.
    pub conic: Mat2,
    pub depth: f64,
    pub color: Vec3,
    pub opacity: f64,
    /// Half-widths of the axis-aligned 3σ bounding box, in pixels.
    pub extent: Vec2,
}

/// Intermediate values the backward pass reuses.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ProjectionCache {
    pub mean_cam: Vec3,
    pub jacobian: Mat23,
    pub cov_cam: Mat3,
    pub view_dir: Vec3,
    pub view_dist: f64,
    pub act: Activated,
}

/// Projects Gaussian `i`. `None` when it is behind the near plane or its
/// screen covariance is degenerate.
pub(crate) fn project_one(cloud: &GaussianCloud, i: usize, camera: &Camera) -> Option<(ProjectedGaussian, ProjectionCache)> {
    let mean = cloud.means[i];
    let mean_cam = camera.world_to_camera(&mean);
    let jacobian = projection_jacobian(&mean_cam, &camera.intrinsics, camera.near).ok()?;
    let act = cloud.activated(i);
    let cov3d = gaussian::build_covariance(&act.scale, &act.rotation);
    let w = &camera.view_rotation;
    let cov_cam = math::mat3_mul(&math::mat3_mul(w, &cov3d), &math::mat3_transpose(w));
    let cov2d = project_covariance(&cov3d, w, &jacobian);
    let conic = math::mat2_inverse(&cov2d)?;
    if !(cov2d[0][0] > 0.0 && cov2d[1][1] > 0.0 && conic[0][0] > 0.0) {
        return None;
    }
    let offset = math::sub3(&mean, &camera.center());
    let view_dist = math::norm3(&offset);
    let view_dir = if view_dist > 0.0 { math::scale3(&offset, 1.0 / view_dist) } else { [0.0, 0.0, 1.0] };
    let degree = cloud.sh_degree();
    let raw = sh::eval_unclamped(cloud.sh_of(i), &view_dir, degree);
    let color = raw.map(|v| v.clamp(0.0, 1.0));
    let projected = ProjectedGaussian {
        index: i,
        mean2d: camera.project(&mean_cam),
        cov2d,
        conic,
        depth: mean_cam[2],
        color,
        opacity: act.opacity,
        extent: [EXTENT_SIGMA * math::sqrt(cov2d[0][0]), EXTENT_SIGMA * math::sqrt(cov2d[1][1])],
    };
    if !projected.mean2d.iter().chain(projected.extent.iter()).all(|v| v.is_finite()) {
        return None;
    }
    Some((projected, ProjectionCache { mean_cam, jacobian, cov_cam, view_dir, view_dist, act }))
}

/// Screen-space gradients gathered for one Gaussian by the compositing backward.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ScreenGrad {
    pub mean2d: Vec2,
    /// dL/dconic as (00, 01, 11), with the off-diagonal counted once per entry.
    pub conic: [f64; 3],
    pub color: Vec3,
    pub opacity: f64,
}

impl ScreenGrad {
    pub fn add(&mut self, other: &ScreenGrad) {
        self.mean2d[0] += other.mean2d[0];
        self.mean2d[1] += other.mean2d[1];
        for k in 0..3 {
            self.conic[k] += other.conic[k];
            self.color[k] += other.color[k];
        }
        self.opacity += other.opacity;
    }
}

/// Per-Gaussian parameter gradients produced from a [`ScreenGrad`].
pub(crate) struct ParamGrad {
    pub mean: Vec3,
    pub scale_raw: Vec3,
    pub rotation: [f64; 4],
    pub opacity_raw: f64,
}

/// Chains screen-space gradients back to the raw parameters of Gaussian `i`.
/// SH gradients are accumulated into `d_sh`.
pub(crate) fn project_backward(
    cloud: &GaussianCloud,
    i: usize,
    camera: &Camera,
    p: &ProjectedGaussian,
    cache: &ProjectionCache,
    g: &ScreenGrad,
    d_sh: &mut [f64],
) -> ParamGrad {
    let act = &cache.act;
    let d_opacity_raw = g.opacity * act.opacity * (1.0 - act.opacity);

    // Color → SH coefficients and view direction → mean.
    let d_dir = sh::eval_backward(cloud.sh_of(i), &cache.view_dir, cloud.sh_degree(), &g.color, d_sh);
    let u = cache.view_dir;
    let proj = math::dot3(&u, &d_dir);
    let mut d_mean = [0.0; 3];
    if cache.view_dist > 0.0 {
        for k in 0..3 {
            d_mean[k] += (d_dir[k] - u[k] * proj) / cache.view_dist;
        }
    }

    // conic = Σ'⁻¹  ⇒  dΣ' = -A G A.
    let a = &p.conic;
    let gc = [[g.conic[0], g.conic[1]], [g.conic[1], g.conic[2]]];
    let ag = math::mat2_mul(a, &gc);
    let aga = math::mat2_mul(&ag, a);
    let d_cov2d = [[-aga[0][0], -aga[0][1]], [-aga[1][0], -aga[1][1]]];

    // Σ' = J M Jᵀ + λI with M = W Σ Wᵀ.
    let j = &cache.jacobian;
    let m = &cache.cov_cam;
    let d_m = math::sandwich23_t(j, &d_cov2d);
    let mut jm = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            jm[r][c] = j[r][0] * m[0][c] + j[r][1] * m[1][c] + j[r][2] * m[2][c];
        }
    }
    let mut d_j = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            d_j[r][c] = (d_cov2d[r][0] + d_cov2d[0][r]) * jm[0][c] + (d_cov2d[r][1] + d_cov2d[1][r]) * jm[1][c];
        }
    }
    let w = &camera.view_rotation;
    let wt = math::mat3_transpose(w);
    let d_cov3d = math::mat3_mul(&math::mat3_mul(&wt, &d_m), w);
    let (d_scale, d_unit_q) = gaussian::build_covariance_backward(&act.scale, &act.rotation, &d_cov3d);
    let d_scale_raw = [d_scale[0] * act.scale[0], d_scale[1] * act.scale[1], d_scale[2] * act.scale[2]];
    let d_rotation = math::quat_normalize_backward(&cloud.rotations[i], &d_unit_q);

    // Camera-space mean: through mean2d (Jacobian J) and through J itself.
    let [x, y, z] = cache.mean_cam;
    let (fx, fy) = (camera.intrinsics.fx, camera.intrinsics.fy);
    let iz2 = 1.0 / (z * z);
    let iz3 = iz2 / z;
    let mut d_t = [
        j[0][0] * g.mean2d[0] + j[1][0] * g.mean2d[1],
        j[0][1] * g.mean2d[0] + j[1][1] * g.mean2d[1],
        j[0][2] * g.mean2d[0] + j[1][2] * g.mean2d[1],
    ];
    d_t[0] += d_j[0][2] * (-fx * iz2);
    d_t[1] += d_j[1][2] * (-fy * iz2);
    d_t[2] += d_j[0][0] * (-fx * iz2) + d_j[0][2] * (2.0 * fx * x * iz3) + d_j[1][1] * (-fy * iz2) + d_j[1][2] * (2.0 * fy * y * iz3);
    let d_world = math::mat3_vec(&wt, &d_t);
    for k in 0..3 {
        d_mean[k] += d_world[k];
    }

    ParamGrad { mean: d_mean, scale_raw: d_scale_raw, rotation: d_rotation, opacity_raw: d_opacity_raw }
}
