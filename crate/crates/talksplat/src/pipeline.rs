//! Rendering, inference, evaluation and benchmarking on top of trained
//! checkpoints.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};
use talksplat_core::audio::AudioFeatureTrack;
use talksplat_core::loss::{perceptual_proxy, ImageDims};
use talksplat_core::math;
use talksplat_core::metrics::{lmd, psnr};
use talksplat_core::model::Condition;
use talksplat_core::raster::{render_forward, Camera, Intrinsics, Pose, RenderOptions};
use talksplat_core::rng;
use talksplat_core::{Gaussian, GaussianCloud};

use crate::checkpoint::{Checkpoint, ConditionKind};
use crate::dataset::{Dataset, PoseRecord, Region, Split};
use crate::error::{Error, Result};
use crate::image_io;
use crate::train::{render_frame, write_text};

/// Header of the evaluation CSV. The last row repeats it with `mean` in the
/// frame column.
pub const EVAL_HEADER: [&str; 4] = ["frame", "psnr", "perceptual_proxy", "lmd"];

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn check_matches(ck: &Checkpoint, ds: &Dataset) -> Result<()> {
    let m = &ds.manifest;
    if ck.meta.region != m.region || (ck.meta.width, ck.meta.height) != (m.width, m.height) {
        return Err(Error::Config(format!(
            "checkpoint ({:?}, {}x{}) does not match dataset ({:?}, {}x{})",
            ck.meta.region, ck.meta.width, ck.meta.height, m.region, m.width, m.height
        )));
    }
    if let Some(s) = &ck.meta.smoother {
        if s.input_dim != ds.audio.dim() {
            return Err(Error::Config(format!("checkpoint expects {}-dimensional audio features, dataset track has {}", s.input_dim, ds.audio.dim())));
        }
    }
    Ok(())
}

/// Renders dataset frames through the checkpoint's own conditioning and
/// writes `out/%05d.png`.
pub fn render_dataset(ck: &Checkpoint, ds: &Dataset, split: Option<Split>, out: &Path) -> Result<Vec<PathBuf>> {
    check_matches(ck, ds)?;
    create_dir(out)?;
    let m = &ds.manifest;
    ds.indices(split)
        .into_iter()
        .map(|i| {
            let fwd = render_frame(&ck.model, ck.meta.condition, ds, i, false)?;
            let path = out.join(format!("{i:05}.png"));
            image_io::write_rgb(&path, &image_io::to_rgb8(&fwd.output.rgb, m.width, m.height))?;
            Ok(path)
        })
        .collect()
}

/// Driving head poses (and optionally eye features) for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseTrack {
    pub poses: Vec<PoseRecord>,
    /// One value per pose; a missing list means [`DEFAULT_EYE`] throughout.
    #[serde(default)]
    pub eye: Option<Vec<f64>>,
}

/// Eye feature used when the driving track has none.
pub const DEFAULT_EYE: f64 = 0.25;

impl PoseTrack {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let f = &ds.manifest.frames;
        Self { poses: f.iter().map(|r| r.pose).collect(), eye: Some(f.iter().map(|r| r.eye).collect()) }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_text(path, &serde_json::to_string_pretty(self).expect("pose track serializes"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InferReport {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub gaussians: usize,
    pub seconds: f64,
    /// Zero when no frames were rendered.
    pub fps: f64,
}

/// Inputs of [`infer`].
pub struct InferInput<'a> {
    pub head: &'a Checkpoint,
    pub torso: Option<&'a Checkpoint>,
    pub audio: &'a AudioFeatureTrack,
    /// Defaults to the head checkpoint's fixed view for every frame.
    pub poses: Option<&'a PoseTrack>,
}

fn camera_of(ck: &Checkpoint, pose: &Pose) -> Camera {
    Camera::from_pose(pose, ck.meta.intrinsics.into(), ck.meta.width, ck.meta.height)
}

fn condition_for<'a>(ck: &Checkpoint, audio: &'a AudioFeatureTrack, t: usize, eye: f64, pose: &'a Pose) -> Condition<'a> {
    match ck.meta.condition {
        ConditionKind::Static => Condition::Static,
        ConditionKind::Audio => Condition::Audio { track: audio, frame: t, eye },
        ConditionKind::Pose => Condition::Pose(pose),
    }
}

fn check_infer(input: &InferInput<'_>) -> Result<()> {
    let h = &input.head.meta;
    if h.region != Region::Head {
        return Err(Error::Config(format!("--checkpoint must be a head model, got {:?}", h.region)));
    }
    if let Some(s) = &h.smoother {
        if s.input_dim != input.audio.dim() {
            return Err(Error::Config(format!("head checkpoint expects {}-dimensional audio features, track has {}", s.input_dim, input.audio.dim())));
        }
    }
    if let Some(t) = input.torso {
        if t.meta.region != Region::Torso || (t.meta.width, t.meta.height) != (h.width, h.height) {
            return Err(Error::Config(format!("torso checkpoint ({:?}, {}x{}) does not pair with the head ({}x{})", t.meta.region, t.meta.width, t.meta.height, h.width, h.height)));
        }
    }
    if let Some(p) = input.poses {
        if p.poses.len() != input.audio.frames() {
            return Err(Error::Config(format!("pose track has {} frames, audio track has {}", p.poses.len(), input.audio.frames())));
        }
        if p.eye.as_ref().is_some_and(|e| e.len() != p.poses.len()) {
            return Err(Error::Config("pose track: eye list length differs from pose count".into()));
        }
        for (i, r) in p.poses.iter().enumerate() {
            Pose::from(*r).validate(crate::dataset::POSE_TOLERANCE).map_err(|e| Error::Config(format!("pose track frame {i}: {e}")))?;
        }
    }
    Ok(())
}

/// One composited frame: head over torso over background. Without a torso
/// the head is rendered straight onto the background.
pub fn composite_frame(input: &InferInput<'_>, t: usize) -> Result<Vec<f64>> {
    let head = input.head;
    let pose: Pose = match input.poses {
        Some(p) => p.poses[t].into(),
        None => head.meta.torso_view.into(),
    };
    let eye = input.poses.and_then(|p| p.eye.as_ref()).map_or(DEFAULT_EYE, |e| e[t]);
    let bg = head.meta.background;
    let head_cond = condition_for(head, input.audio, t, eye, &pose);
    let Some(torso) = input.torso else {
        return Ok(head.model.forward(&head_cond, &camera_of(head, &pose), &bg, false)?.output.rgb);
    };
    let h = head.model.forward(&head_cond, &camera_of(head, &pose), &[0.0; 3], false)?.output;
    let torso_cond = condition_for(torso, input.audio, t, eye, &pose);
    let tv: Pose = torso.meta.torso_view.into();
    let b = torso.model.forward(&torso_cond, &camera_of(torso, &tv), &[0.0; 3], false)?.output;
    let mut rgb = h.rgb;
    for (p, (ah, at)) in h.alpha.iter().zip(&b.alpha).enumerate() {
        for c in 0..3 {
            let under = b.rgb[p * 3 + c] + (1.0 - at) * bg[c];
            rgb[p * 3 + c] += (1.0 - ah) * under;
        }
    }
    Ok(rgb)
}

/// Deform, render, composite and encode every frame of the driving track.
pub fn infer(input: &InferInput<'_>, out: &Path) -> Result<InferReport> {
    check_infer(input)?;
    create_dir(out)?;
    let (w, h) = (input.head.meta.width, input.head.meta.height);
    let frames = input.audio.frames();
    if frames == 0 {
        log::warn!("driving track has zero frames; nothing rendered");
    }
    let start = Instant::now();
    for t in 0..frames {
        let rgb = composite_frame(input, t)?;
        image_io::write_rgb(&out.join(format!("{t:05}.png")), &image_io::to_rgb8(&rgb, w, h))?;
    }
    let seconds = start.elapsed().as_secs_f64();
    let gaussians = input.head.model.cloud.len() + input.torso.map_or(0, |t| t.model.cloud.len());
    let report = InferReport { frames, width: w, height: h, gaussians, seconds, fps: if frames > 0 { frames as f64 / seconds.max(1e-12) } else { 0.0 } };
    log::info!("inferred {frames} frames in {seconds:.3} s ({:.2} FPS)", report.fps);
    write_text(&out.join("summary.json"), &serde_json::to_string_pretty(&report).expect("report serializes"))?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub frame: usize,
    pub psnr: f64,
    pub perceptual_proxy: f64,
    /// `NaN` when no landmarks were supplied or the frame has none.
    pub lmd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Means over all rows (LMD over rows that have one).
    pub mean: EvalRow,
}

/// Predicted mouth landmarks per dataset frame, `[frame][landmark]`, read
/// from JSON. Pairs with the manifest's ground-truth landmarks.
pub type LandmarkTrack = Vec<Vec<[f64; 2]>>;

pub fn load_landmarks(path: &Path) -> Result<LandmarkTrack> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

/// Per-frame PSNR, perceptual-proxy value and landmark distance on `split`.
/// LMD needs `predicted` landmarks and is `NaN` without them.
pub fn evaluate(ck: &Checkpoint, ds: &Dataset, split: Option<Split>, predicted: Option<&LandmarkTrack>) -> Result<EvalReport> {
    check_matches(ck, ds)?;
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(Error::Config(format!("dataset {} has no frames in split {split:?}", ds.root.display())));
    }
    if let Some(p) = predicted {
        if p.len() != ds.len() {
            return Err(Error::Config(format!("landmark track has {} frames, dataset has {}", p.len(), ds.len())));
        }
        if let Some(i) = idx.iter().copied().find(|&i| p[i].len() != ds.manifest.frames[i].lips.len()) {
            return Err(Error::Config(format!("frame {i}: {} predicted landmarks, {} in the manifest", p[i].len(), ds.manifest.frames[i].lips.len())));
        }
    }
    let (w, h) = (ds.manifest.width, ds.manifest.height);
    let dims = ImageDims::rgb(w, h);
    let mut rows = Vec::with_capacity(idx.len());
    for i in idx {
        let out = render_frame(&ck.model, ck.meta.condition, ds, i, false)?.output;
        let gt = ds.load_frame(i)?;
        let lips = &ds.manifest.frames[i].lips;
        let lmd_v = match predicted {
            Some(p) if !lips.is_empty() => lmd(&p[i], lips)?,
            _ => f64::NAN,
        };
        rows.push(EvalRow { frame: i, psnr: psnr(&out.rgb, &gt.rgb)?, perceptual_proxy: perceptual_proxy(&out.rgb, &gt.rgb, dims)?.0, lmd: lmd_v });
    }
    let n = rows.len() as f64;
    let with_lmd: Vec<f64> = rows.iter().map(|r| r.lmd).filter(|v| !v.is_nan()).collect();
    let mean = EvalRow {
        frame: usize::MAX,
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        perceptual_proxy: rows.iter().map(|r| r.perceptual_proxy).sum::<f64>() / n,
        lmd: if with_lmd.is_empty() { f64::NAN } else { with_lmd.iter().sum::<f64>() / with_lmd.len() as f64 },
    };
    Ok(EvalReport { rows, mean })
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(EVAL_HEADER).expect("in-memory write");
        let fmt = |r: &EvalRow, frame: String| [frame, r.psnr.to_string(), r.perceptual_proxy.to_string(), r.lmd.to_string()];
        for r in &self.rows {
            w.write_record(fmt(r, r.frame.to_string())).expect("in-memory write");
        }
        w.write_record(fmt(&self.mean, "mean".into())).expect("in-memory write");
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ASCII CSV")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchReport {
    pub gaussians: usize,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
}

/// A random scene of `n` small Gaussians filling the view of a camera at
/// distance 4.
pub fn bench_scene(n: usize, seed: u64) -> Result<GaussianCloud> {
    let mut r = rng::fork(seed, "bench");
    let mut cloud = GaussianCloud::new(0)?;
    for _ in 0..n {
        cloud.push(Gaussian {
            mean: [0; 3].map(|_| r.random_range(-1.0..1.0)),
            scale_raw: [0; 3].map(|_| r.random_range(0.01f64..0.05).ln()),
            rotation: math::quat_normalize(&[0; 4].map(|_| r.random_range(-1.0..1.0))),
            sh: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
            opacity_raw: math::logit(r.random_range(0.2..0.9)),
        })?;
    }
    Ok(cloud)
}

/// Forward-render throughput of the rasterizer alone.
pub fn bench(gaussians: usize, width: usize, height: usize, frames: usize, seed: u64) -> Result<BenchReport> {
    if frames == 0 || width == 0 || height == 0 {
        return Err(Error::Config("bench needs positive frames, width and height".into()));
    }
    let cloud = bench_scene(gaussians, seed)?;
    let intr = Intrinsics::from_fov(width, height, 0.6);
    let opts = RenderOptions { record: false, ..RenderOptions::default() };
    let start = Instant::now();
    for f in 0..frames {
        let a = 0.3 * f as f64 / frames as f64;
        let pose = Pose::look_at(&[4.0 * a.sin(), 0.0, -4.0 * a.cos()], &[0.0; 3], &[0.0, -1.0, 0.0]);
        render_forward(&cloud, &Camera::from_pose(&pose, intr, width, height), &[0.0; 3], &opts)?;
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(BenchReport { gaussians, width, height, frames, seconds, fps: frames as f64 / seconds.max(1e-12) })
}
