//! Dataset layout and validation.
//!
//! ```text
//! root/
//!   manifest.json
//!   audio.gsaf
//!   frames/00000.png ...
//!   masks/00000.png ...
//! ```
//!
//! Each frame's `pose` places the camera in canonical head space (camera to
//! head). Rendering uses its inverse as the view transform: a head that
//! turns left by θ is stored as a camera orbiting right by θ around the
//! fixed canonical head. Torso datasets render every frame from the fixed
//! `torso_view` and feed the head pose to the deformation field instead.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use talksplat_core::audio::AudioFeatureTrack;
use talksplat_core::raster::{Camera, Intrinsics, Pose};

use crate::error::{Error, Result};
use crate::{gsaf, image_io};

pub const MANIFEST: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;
/// Quaternion norm tolerance for a pose to count as a rigid transform.
pub const POSE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    #[default]
    Head,
    Torso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    /// `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl From<Pose> for PoseRecord {
    fn from(p: Pose) -> Self {
        Self { rotation: p.rotation, translation: p.translation }
    }
}

impl From<PoseRecord> for Pose {
    fn from(p: PoseRecord) -> Self {
        Pose { rotation: p.rotation, translation: p.translation }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicsRecord {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl From<Intrinsics> for IntrinsicsRecord {
    fn from(k: Intrinsics) -> Self {
        Self { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy }
    }
}

impl From<IntrinsicsRecord> for Intrinsics {
    fn from(k: IntrinsicsRecord) -> Self {
        Intrinsics { fx: k.fx, fy: k.fy, cx: k.cx, cy: k.cy }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub image: String,
    pub mask: String,
    pub pose: PoseRecord,
    /// Eye feature `f_e`.
    pub eye: f64,
    /// Lip landmarks in pixels.
    pub lips: Vec<[f64; 2]>,
    #[serde(default)]
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub region: Region,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: IntrinsicsRecord,
    /// Color behind everything, linear RGB in `[0, 1]`.
    #[serde(default)]
    pub background: [f64; 3],
    /// Audio feature file relative to the root.
    pub audio: String,
    /// Fixed torso camera placement.
    pub torso_view: PoseRecord,
    pub frames: Vec<FrameRecord>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn write(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST);
        fs::write(&path, self.to_json()).map_err(|e| Error::io(&path, e))
    }

    pub fn camera(&self, pose: &PoseRecord) -> Camera {
        Camera::from_pose(&(*pose).into(), self.intrinsics.into(), self.width, self.height)
    }
}

/// Ground truth for one frame, decoded.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub rgb: Vec<f64>,
    pub mask: Vec<f64>,
}

/// A validated dataset. Frames are decoded on demand.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub audio: AudioFeatureTrack,
}

fn check_pose(p: &PoseRecord) -> std::result::Result<(), String> {
    Pose::from(*p).validate(POSE_TOLERANCE).map_err(|e| e.to_string())
}

impl Dataset {
    /// Loads and validates `root/manifest.json`, reporting every violation.
    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::from_json(&text, &path)?;
        let mut problems = Vec::new();
        let m = &manifest;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Version { path, what: "manifest", found: m.version, supported: MANIFEST_VERSION });
        }
        if !(m.fps > 0.0) {
            problems.push(format!("fps: must be positive, got {}", m.fps));
        }
        if m.width == 0 || m.height == 0 {
            problems.push(format!("width/height: must be positive, got {}x{}", m.width, m.height));
        }
        let k = m.intrinsics;
        if ![k.fx, k.fy, k.cx, k.cy].iter().all(|v| v.is_finite()) || k.fx <= 0.0 || k.fy <= 0.0 {
            problems.push("intrinsics: focal lengths must be positive and all values finite".into());
        }
        if !m.background.iter().all(|v| (0.0..=1.0).contains(v)) {
            problems.push("background: channels must lie in [0, 1]".into());
        }
        if let Err(e) = check_pose(&m.torso_view) {
            problems.push(format!("torso_view: {e}"));
        }
        if m.frames.is_empty() {
            problems.push("frames: no frames".into());
        }
        let audio = match gsaf::read(&root.join(&m.audio)) {
            Ok(track) => {
                if track.frames() != m.frames.len() {
                    problems.push(format!("audio: track has {} frames but the manifest lists {} frames", track.frames(), m.frames.len()));
                }
                Some(track)
            }
            Err(e) => {
                problems.push(format!("audio: {e}"));
                None
            }
        };
        for (i, f) in m.frames.iter().enumerate() {
            for (field, rel) in [("image", &f.image), ("mask", &f.mask)] {
                match image_io::dimensions(&root.join(rel)) {
                    Ok((w, h)) if (w, h) != (m.width, m.height) => {
                        problems.push(format!("frames[{i}].{field}: {rel} is {w}x{h}, expected {}x{}", m.width, m.height))
                    }
                    Ok(_) => {}
                    Err(e) => problems.push(format!("frames[{i}].{field}: {e}")),
                }
            }
            if let Err(e) = check_pose(&f.pose) {
                problems.push(format!("frames[{i}].pose: {e}"));
            }
            if !(0.0..=1.0).contains(&f.eye) {
                problems.push(format!("frames[{i}].eye: {} outside [0, 1]", f.eye));
            }
            if !f.lips.iter().flatten().all(|v| v.is_finite()) {
                problems.push(format!("frames[{i}].lips: non-finite landmark"));
            }
        }
        match audio {
            Some(audio) if problems.is_empty() => Ok(Self { root: root.to_path_buf(), manifest, audio }),
            _ => Err(Error::Dataset { root: root.to_path_buf(), problems }),
        }
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.frames.is_empty()
    }

    /// Frame indices in `split`, or all frames for `None`.
    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.len()).filter(|&i| split.is_none_or(|s| self.manifest.frames[i].split == s)).collect()
    }

    pub fn load_frame(&self, i: usize) -> Result<Frame> {
        let f = &self.manifest.frames[i];
        let rgb = image_io::read_rgb(&self.root.join(&f.image))?.to_f64();
        let (mask, _, _) = image_io::read_mask(&self.root.join(&f.mask))?;
        Ok(Frame { rgb, mask })
    }

    pub fn pose(&self, i: usize) -> Pose {
        self.manifest.frames[i].pose.into()
    }

    /// Camera for frame `i`: the inverse head pose, or the fixed view for
    /// torso datasets.
    pub fn camera(&self, i: usize) -> Camera {
        match self.manifest.region {
            Region::Head => self.manifest.camera(&self.manifest.frames[i].pose),
            Region::Torso => self.manifest.camera(&self.manifest.torso_view),
        }
    }
}
