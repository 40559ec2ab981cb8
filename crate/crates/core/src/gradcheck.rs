//! Finite-difference verification of every analytic gradient.
//!
//! A small audio-driven scene is rendered end to end (smoother, hash
//! encoder, MLP, rasterizer) and a random linear functional of the image is
//! differentiated. Each sampled coordinate is compared against a central
//! difference. Coordinates where the image function is not differentiable
//! (a contributor or clamp changes within the step, or the one-sided slopes
//! disagree) are skipped and counted.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;

use crate::audio::{AudioFeatureTrack, SmootherShape, SmootherWeights};
use crate::deform::{DeformField, HIDDEN};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::gaussian::{Gaussian, GaussianCloud};
use crate::math;
use crate::model::{Condition, DeformableModel};
use crate::raster::{Camera, Intrinsics, Pose};
use crate::rng::{self, label};
use crate::sh;

pub const CLASSES: [&str; 8] = ["mean", "scale", "rotation", "sh", "opacity", "tables", "mlp", "smoother"];

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub step: f64,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub threshold: f64,
    /// Sampled coordinates per large parameter class.
    pub samples: usize,
    /// Test hook: perturb the analytic gradient of this class.
    pub corrupt: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { seed: 0, gaussians: 5, width: 32, height: 32, step: 1e-5, floor: 1e-5, threshold: 1e-3, samples: 48, corrupt: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class: &'static str,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl ClassReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.threshold
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

struct Scene {
    model: DeformableModel,
    track: AudioFeatureTrack,
    camera: Camera,
    background: [f64; 3],
    w_rgb: Vec<f64>,
    w_alpha: Vec<f64>,
}

const AUDIO_DIM: usize = 4;
const FRAME: usize = 5;
const EYE: f64 = 0.3;

fn build_scene(cfg: &GradCheckConfig) -> Result<Scene> {
    let mut r = rng::fork(cfg.seed, label::GRADCHECK);
    let mut cloud = GaussianCloud::new(1)?;
    let k = sh::coeff_count(1) * 3;
    for _ in 0..cfg.gaussians {
        let mean = [r.random_range(-0.5..0.5), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5)];
        let scale_raw = [0; 3].map(|_| math::ln(r.random_range(0.12..0.35)));
        let rotation = [0; 4].map(|_| r.random_range(-1.0..1.0));
        let sh = (0..k).map(|j| if j < 3 { r.random_range(-1.0..1.0) } else { r.random_range(-0.3..0.3) }).collect();
        cloud.push(Gaussian { mean, scale_raw, rotation, sh, opacity_raw: r.random_range(-1.0..1.0) })?;
    }
    let enc = EncoderConfig { bounds_min: [-1.5; 3], bounds_max: [1.5; 3], ..EncoderConfig::default() };
    let smoother = SmootherWeights::new(SmootherShape { window: 8, ..SmootherShape::new(AUDIO_DIM) }, &mut r)?;
    let mut field = DeformField::new(Some(enc), smoother.output_dim() + 1, &HIDDEN, &mut r)?;
    // Nonzero tables and output layer so every parameter receives gradient.
    if let Some(e) = field.encoder.as_mut() {
        for v in e.tables.iter_mut() {
            *v = r.random_range(-0.5..0.5);
        }
    }
    let n = field.mlp.params.len();
    let last = 10 * (HIDDEN[1] + 1);
    for v in &mut field.mlp.params[n - last..] {
        *v = r.random_range(-0.02..0.02);
    }
    let data = (0..16 * AUDIO_DIM).map(|_| r.random_range(-1.0f32..1.0)).collect();
    let track = AudioFeatureTrack::new(16, AUDIO_DIM, data, "gradcheck")?;
    let pose = Pose::look_at(&[0.2, -0.1, -3.0], &[0.0; 3], &[0.0, -1.0, 0.0]);
    let camera = Camera::from_pose(&pose, Intrinsics::from_fov(cfg.width, cfg.height, 0.8), cfg.width, cfg.height);
    let px = cfg.width * cfg.height;
    Ok(Scene {
        model: DeformableModel { cloud, field: Some(field), smoother: Some(smoother) },
        track,
        camera,
        background: [0.2, 0.4, 0.1],
        w_rgb: (0..px * 3).map(|_| r.random_range(-1.0..1.0)).collect(),
        w_alpha: (0..px).map(|_| r.random_range(-1.0..1.0)).collect(),
    })
}

impl Scene {
    fn cond(&self) -> Condition<'_> {
        Condition::Audio { track: &self.track, frame: FRAME, eye: EYE }
    }

    fn eval(&self) -> Result<(f64, u64)> {
        let f = self.model.forward(&self.cond(), &self.camera, &self.background, true)?;
        let out = &f.output;
        let v = out.rgb.iter().zip(&self.w_rgb).map(|(a, b)| a * b).sum::<f64>() + out.alpha.iter().zip(&self.w_alpha).map(|(a, b)| a * b).sum::<f64>();
        Ok((v, out.contributor_signature().unwrap_or(0)))
    }
}

/// Mutable view of one parameter class as a flat slice.
fn class_slice<'a>(m: &'a mut DeformableModel, class: &str) -> &'a mut [f64] {
    let field = m.field.as_mut().expect("scene has a field");
    match class {
        "mean" => m.cloud.means.as_flattened_mut(),
        "scale" => m.cloud.scales_raw.as_flattened_mut(),
        "rotation" => m.cloud.rotations.as_flattened_mut(),
        "sh" => &mut m.cloud.sh,
        "opacity" => &mut m.cloud.opacities_raw,
        "tables" => &mut field.encoder.as_mut().expect("scene has an encoder").tables,
        "mlp" => &mut field.mlp.params,
        "smoother" => &mut m.smoother.as_mut().expect("scene has a smoother").params,
        _ => unreachable!("unknown class {class}"),
    }
}

/// Runs every suite and returns one report per class in [`CLASSES`] order.
pub fn run(cfg: &GradCheckConfig) -> Result<Vec<ClassReport>> {
    let mut scene = build_scene(cfg)?;
    let fwd = scene.model.forward(&scene.cond(), &scene.camera, &scene.background, true)?;
    let grads = scene.model.backward(&fwd, &scene.w_rgb, Some(&scene.w_alpha))?;
    let (_, base_sig) = scene.eval()?;
    let mut pick = rng::fork(cfg.seed, "gradcheck-coords");

    let mut reports = Vec::new();
    for class in CLASSES {
        let analytic: &[f64] = match class {
            "mean" => grads.cloud.means.as_flattened(),
            "scale" => grads.cloud.scales_raw.as_flattened(),
            "rotation" => grads.cloud.rotations.as_flattened(),
            "sh" => &grads.cloud.sh,
            "opacity" => &grads.cloud.opacities_raw,
            "tables" => &grads.tables,
            "mlp" => &grads.mlp,
            _ => &grads.smoother,
        };
        let coords = choose_coords(analytic, cfg.samples, &mut pick);
        let corrupt = cfg.corrupt.as_deref() == Some(class);
        let mut report = ClassReport { class, checked: 0, skipped: 0, max_rel_err: 0.0, threshold: cfg.threshold };
        for i in coords {
            let x0 = class_slice(&mut scene.model, class)[i];
            let at = |x: f64, s: &mut Scene| -> Result<(f64, u64)> {
                class_slice(&mut s.model, class)[i] = x;
                s.eval()
            };
            let (fp, sp) = at(x0 + cfg.step, &mut scene)?;
            let (fm, sm) = at(x0 - cfg.step, &mut scene)?;
            let (f0, _) = at(x0, &mut scene)?;
            if sp != base_sig || sm != base_sig {
                report.skipped += 1;
                continue;
            }
            let forward = (fp - f0) / cfg.step;
            let backward = (f0 - fm) / cfg.step;
            if relative_error(forward, backward, cfg.floor) > cfg.threshold {
                // Kink within the step (ReLU, hash cell boundary): the central
                // difference is not a derivative here.
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let mut a = analytic[i];
            if corrupt {
                a = a * 1.1 + 1e-3;
            }
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(relative_error(a, numeric, cfg.floor));
        }
        reports.push(report);
    }
    Ok(reports)
}

/// Every coordinate for small classes; otherwise the largest gradients plus
/// a uniform sample.
fn choose_coords<R: Rng>(analytic: &[f64], samples: usize, r: &mut R) -> Vec<usize> {
    if analytic.len() <= samples {
        return (0..analytic.len()).collect();
    }
    let mut by_mag: Vec<usize> = (0..analytic.len()).collect();
    by_mag.sort_by(|&a, &b| analytic[b].abs().total_cmp(&analytic[a].abs()).then(a.cmp(&b)));
    let mut out: Vec<usize> = by_mag[..samples / 2].to_vec();
    let nonzero: Vec<usize> = by_mag.into_iter().skip(samples / 2).filter(|&i| analytic[i] != 0.0).collect();
    let rest = samples - out.len();
    if nonzero.len() <= rest {
        out.extend(nonzero);
    } else {
        out.extend(sample(r, nonzero.len(), rest).into_iter().map(|k| nonzero[k]));
    }
    out.sort_unstable();
    out
}
