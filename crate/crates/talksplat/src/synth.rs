//! Synthetic deforming scenes with exact ground truth.
//!
//! A handful of anisotropic Gaussian blobs sit near the origin. At frame `t`
//! every moving blob is shifted by `amplitude · signal(t) · direction`, and
//! the scene is rendered with this crate's own rasterizer from a camera on
//! an orbit. The driving signal is written as a one-dimensional audio
//! feature track, so a trained model sees exactly the quantity that moved
//! the blobs.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use talksplat_core::audio::AudioFeatureTrack;
use talksplat_core::math::{self, Vec3};
use talksplat_core::raster::{render_forward, Camera, Intrinsics, Pose, RenderOptions};
use talksplat_core::rng::{self, label};
use talksplat_core::sh::SH_C0;
use talksplat_core::{Gaussian, GaussianCloud};

use crate::dataset::{FrameRecord, Manifest, PoseRecord, Region, Split, MANIFEST_VERSION};
use crate::error::{Error, Result};
use crate::{gsaf, image_io};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Waveform {
    Zero,
    /// `sin(2π t / period + phase)`, `t` in frames.
    Sinusoid { period: f64, phase: f64 },
}

impl Waveform {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            Waveform::Zero => 0.0,
            Waveform::Sinusoid { period, phase } => (2.0 * std::f64::consts::PI * t as f64 / period + phase).sin(),
        }
    }
}

/// Camera path: angle `start + sweep · t / frames` around the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Orbit {
    pub radius: f64,
    pub elevation: f64,
    pub start: f64,
    pub sweep: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub blobs: usize,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view in radians.
    pub fov: f64,
    pub orbit: Orbit,
    pub signal: Waveform,
    pub amplitude: f64,
    /// Shared unit displacement direction.
    pub direction: Vec3,
    /// The first `moving_blobs` blobs follow the signal.
    pub moving_blobs: usize,
    /// Blob means are drawn from `[-spread, spread]³`.
    pub spread: f64,
    pub blob_scale: (f64, f64),
    pub background: Vec3,
    pub eye: f64,
    /// Every `test_every`-th frame is held out (0 = none).
    pub test_every: usize,
    pub region: Region,
}

impl SyntheticSpec {
    /// Rigid scene seen from a full orbit.
    pub fn static_scene() -> Self {
        Self {
            blobs: 8,
            frames: 20,
            width: 128,
            height: 128,
            fov: 0.7,
            orbit: Orbit { radius: 3.5, elevation: 0.3, start: 0.0, sweep: 2.0 * std::f64::consts::PI },
            signal: Waveform::Zero,
            amplitude: 0.0,
            direction: [0.0, 1.0, 0.0],
            moving_blobs: 0,
            spread: 0.55,
            blob_scale: (0.08, 0.22),
            background: [0.0; 3],
            eye: 0.25,
            test_every: 5,
            region: Region::Head,
        }
    }

    /// Blobs bobbing with a sinusoid while the camera sways in front.
    pub fn driven_scene() -> Self {
        Self {
            frames: 60,
            orbit: Orbit { radius: 3.5, elevation: 0.2, start: -0.35, sweep: 0.7 },
            signal: Waveform::Sinusoid { period: 12.0, phase: 0.0 },
            amplitude: 0.15,
            moving_blobs: 4,
            ..Self::static_scene()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.blobs > 0
            && self.frames >= 2
            && self.width > 0
            && self.height > 0
            && self.fov > 0.0
            && self.fov < std::f64::consts::PI
            && self.orbit.radius > 0.0
            && self.amplitude.is_finite()
            && self.moving_blobs <= self.blobs
            && self.spread >= 0.0
            && 0.0 < self.blob_scale.0
            && self.blob_scale.0 <= self.blob_scale.1
            && (0.0..=1.0).contains(&self.eye)
            && self.background.iter().all(|v| (0.0..=1.0).contains(v))
            && (math::norm3(&self.direction) - 1.0).abs() < 1e-9;
        if let Waveform::Sinusoid { period, phase } = self.signal {
            if !(period > 0.0 && phase.is_finite()) {
                return Err(Error::Config("synthetic signal needs a positive period".into()));
            }
        }
        if ok { Ok(()) } else { Err(Error::Config("invalid synthetic scene spec".into())) }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.width, self.height, self.fov)
    }

    /// Camera placement for frame `t`.
    pub fn pose(&self, t: usize) -> Pose {
        let o = &self.orbit;
        let a = o.start + o.sweep * t as f64 / self.frames as f64;
        let eye = [o.radius * o.elevation.cos() * a.sin(), -o.radius * o.elevation.sin(), -o.radius * o.elevation.cos() * a.cos()];
        Pose::look_at(&eye, &[0.0; 3], &[0.0, -1.0, 0.0])
    }

    /// The fixed frontal view.
    pub fn front_view(&self) -> Pose {
        Pose::look_at(&[0.0, 0.0, -self.orbit.radius], &[0.0; 3], &[0.0, -1.0, 0.0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobTruth {
    pub mean: Vec3,
    pub scale: Vec3,
    pub rotation: [f64; 4],
    pub color: Vec3,
    pub opacity: f64,
    pub moving: bool,
}

/// Ground truth emitted next to the dataset as `synthetic.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub blobs: Vec<BlobTruth>,
    pub signal: Vec<f64>,
    /// `[frame][blob]` displacement.
    pub displacements: Vec<Vec<Vec3>>,
}

impl SyntheticTruth {
    /// The canonical (undisplaced) scene as a degree-0 cloud.
    pub fn cloud(&self) -> GaussianCloud {
        let mut c = GaussianCloud::new(0).expect("degree 0");
        for b in &self.blobs {
            c.push(Gaussian {
                mean: b.mean,
                scale_raw: b.scale.map(f64::ln),
                rotation: b.rotation,
                sh: b.color.iter().map(|v| (v - 0.5) / SH_C0).collect(),
                opacity_raw: math::logit(b.opacity),
            })
            .expect("matching SH stride");
        }
        c
    }

    pub fn cloud_at(&self, t: usize) -> GaussianCloud {
        let mut c = self.cloud();
        for (m, d) in c.means.iter_mut().zip(&self.displacements[t]) {
            *m = math::add3(m, d);
        }
        c
    }

    pub fn camera(&self, t: usize) -> Camera {
        let s = &self.spec;
        let pose = match s.region {
            Region::Head => s.pose(t),
            Region::Torso => s.front_view(),
        };
        Camera::from_pose(&pose, s.intrinsics(), s.width, s.height)
    }
}

fn sample_blobs<R: Rng>(spec: &SyntheticSpec, r: &mut R) -> Vec<BlobTruth> {
    (0..spec.blobs)
        .map(|b| {
            let mean = [0; 3].map(|_| r.random_range(-spec.spread..=spec.spread));
            let scale = [0; 3].map(|_| r.random_range(spec.blob_scale.0..=spec.blob_scale.1));
            let rotation = math::quat_normalize(&[0; 4].map(|_| r.random_range(-1.0..1.0)));
            let color = [0; 3].map(|_| r.random_range(0.15..0.95));
            BlobTruth { mean, scale, rotation, color, opacity: 0.95, moving: b < spec.moving_blobs }
        })
        .collect()
}

/// Ground truth without touching the disk.
pub fn synthesize(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticTruth> {
    spec.validate()?;
    let mut r = rng::fork(seed, label::SYNTHETIC);
    let blobs = sample_blobs(spec, &mut r);
    let signal: Vec<f64> = (0..spec.frames).map(|t| spec.signal.at(t)).collect();
    let displacements = signal
        .iter()
        .map(|s| blobs.iter().map(|b| if b.moving { math::scale3(&spec.direction, spec.amplitude * s) } else { [0.0; 3] }).collect())
        .collect();
    Ok(SyntheticTruth { spec: spec.clone(), seed, blobs, signal, displacements })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes a dataset in the standard layout plus `synthetic.json`.
pub fn gen_synthetic(spec: &SyntheticSpec, seed: u64, root: &Path) -> Result<SyntheticTruth> {
    let truth = synthesize(spec, seed)?;
    create_dir(&root.join("frames"))?;
    create_dir(&root.join("masks"))?;
    let mut frames = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let cam = truth.camera(t);
        let out = render_forward(&truth.cloud_at(t), &cam, &spec.background, &RenderOptions::default())?;
        let image = format!("frames/{t:05}.png");
        let mask = format!("masks/{t:05}.png");
        image_io::write_rgb(&root.join(&image), &image_io::to_rgb8(&out.rgb, spec.width, spec.height))?;
        let m: Vec<u8> = out.alpha.iter().map(|a| if *a > 0.5 { 255 } else { 0 }).collect();
        image_io::write_mask(&root.join(&mask), &m, spec.width, spec.height)?;

        // Lip landmarks: the first blob's center and its four axis extremes.
        let b = &truth.blobs[0];
        let center = math::add3(&b.mean, &truth.displacements[t][0]);
        let r = b.scale.iter().cloned().fold(0.0, f64::max);
        let mut lips = Vec::new();
        for off in [[0.0, 0.0, 0.0], [r, 0.0, 0.0], [-r, 0.0, 0.0], [0.0, r, 0.0], [0.0, -r, 0.0]] {
            let pc = cam.world_to_camera(&math::add3(&center, &off));
            if pc[2] > cam.near {
                lips.push(cam.project(&pc));
            }
        }
        let split = if spec.test_every > 0 && t % spec.test_every == spec.test_every - 1 { Split::Test } else { Split::Train };
        frames.push(FrameRecord { image, mask, pose: spec.pose(t).into(), eye: spec.eye, lips, split });
    }
    let track = AudioFeatureTrack::new(spec.frames, 1, truth.signal.iter().map(|v| *v as f32).collect(), "synthetic")?;
    gsaf::write(&root.join("audio.gsaf"), &track)?;
    let manifest = Manifest {
        version: MANIFEST_VERSION,
        region: spec.region,
        fps: 25.0,
        width: spec.width,
        height: spec.height,
        intrinsics: spec.intrinsics().into(),
        background: spec.background,
        audio: "audio.gsaf".into(),
        torso_view: PoseRecord::from(spec.front_view()),
        frames,
    };
    manifest.write(root)?;
    let path = root.join("synthetic.json");
    fs::write(&path, serde_json::to_string_pretty(&truth).expect("truth serializes")).map_err(|e| Error::io(&path, e))?;
    Ok(truth)
}

pub fn load_truth(root: &Path) -> Result<SyntheticTruth> {
    let path = root.join("synthetic.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}
