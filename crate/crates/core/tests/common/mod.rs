#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talksplat_core::gaussian::{build_covariance, Gaussian, GaussianCloud};
use talksplat_core::math;
use talksplat_core::raster::{project_covariance, projection_jacobian, Camera, Intrinsics, Pose, ALPHA_MAX, ALPHA_MIN, EXTENT_SIGMA, TRANSMITTANCE_MIN};
use talksplat_core::sh;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(width: usize, height: usize) -> Camera {
    let pose = Pose::look_at(&[0.3, -0.2, -3.0], &[0.0, 0.0, 0.0], &[0.0, -1.0, 0.0]);
    Camera::from_pose(&pose, Intrinsics::from_fov(width, height, 0.9), width, height)
}

/// Random Gaussians around the origin, visible from [`camera`].
pub fn random_cloud(rng: &mut ChaCha8Rng, n: usize, sh_degree: usize, spread: f64, scale: (f64, f64)) -> GaussianCloud {
    let mut cloud = GaussianCloud::new(sh_degree).unwrap();
    let k = sh::coeff_count(sh_degree) * 3;
    for _ in 0..n {
        let mean = [rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread)];
        let scale_raw = [
            rng.random_range(scale.0..scale.1).ln(),
            rng.random_range(scale.0..scale.1).ln(),
            rng.random_range(scale.0..scale.1).ln(),
        ];
        let rotation = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let sh: Vec<f64> = (0..k).map(|j| if j < 3 { rng.random_range(-1.2..1.2) } else { rng.random_range(-0.3..0.3) }).collect();
        let opacity_raw = rng.random_range(-1.5..1.5);
        cloud.push(Gaussian { mean, scale_raw, rotation, sh, opacity_raw }).unwrap();
    }
    cloud
}

/// Untiled renderer: every pixel walks all Gaussians in global depth order.
pub fn reference_render(cloud: &GaussianCloud, cam: &Camera, bg: &[f64; 3]) -> (Vec<f64>, Vec<f64>) {
    struct Splat {
        depth: f64,
        index: usize,
        mean2d: [f64; 2],
        conic: [[f64; 2]; 2],
        color: [f64; 3],
        opacity: f64,
    }
    let mut splats = Vec::new();
    for i in 0..cloud.len() {
        let t = cam.world_to_camera(&cloud.means[i]);
        let Ok(j) = projection_jacobian(&t, &cam.intrinsics, cam.near) else { continue };
        let a = cloud.activated(i);
        let cov = project_covariance(&build_covariance(&a.scale, &a.rotation), &cam.view_rotation, &j);
        let conic = math::mat2_inverse(&cov).unwrap();
        let dir = math::sub3(&cloud.means[i], &cam.center());
        let dir = math::scale3(&dir, 1.0 / math::norm3(&dir));
        let color = sh::eval_sh_color(cloud.sh_of(i), cloud.sh_degree(), &dir, cloud.sh_degree()).unwrap();
        splats.push(Splat { depth: t[2], index: i, mean2d: cam.project(&t), conic, color, opacity: a.opacity });
    }
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let (w, h) = (cam.width, cam.height);
    let mut rgb = vec![0.0; w * h * 3];
    let mut alpha = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let px = [x as f64 + 0.5, y as f64 + 0.5];
            let mut t = 1.0;
            let mut c = [0.0; 3];
            for s in &splats {
                let d = [px[0] - s.mean2d[0], px[1] - s.mean2d[1]];
                let q = s.conic[0][0] * d[0] * d[0] + 2.0 * s.conic[0][1] * d[0] * d[1] + s.conic[1][1] * d[1] * d[1];
                if q > EXTENT_SIGMA * EXTENT_SIGMA {
                    continue;
                }
                let a = (s.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                if a < ALPHA_MIN {
                    continue;
                }
                if t * (1.0 - a) < TRANSMITTANCE_MIN {
                    break;
                }
                for k in 0..3 {
                    c[k] += s.color[k] * a * t;
                }
                t *= 1.0 - a;
            }
            let p = y * w + x;
            for k in 0..3 {
                rgb[p * 3 + k] = c[k] + t * bg[k];
            }
            alpha[p] = 1.0 - t;
        }
    }
    (rgb, alpha)
}

/// Relative error with a floor on the denominator.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` at `x` along one coordinate.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
