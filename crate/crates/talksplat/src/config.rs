//! Training configuration (TOML). Every key is optional; missing keys take
//! the defaults below. Resolution order is defaults, then the file, then
//! command-line flags, and the resolved result is echoed by every run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use talksplat_core::audio::{DEFAULT_CHANNELS, DEFAULT_OUTPUT_DIM, DEFAULT_WINDOW};
use talksplat_core::densify::DensifyConfig;
use talksplat_core::encoder::EncoderConfig;
use talksplat_core::loss::{LossConfig, PerceptualMode};
use talksplat_core::perceptual::{ConvLayer, FeatureNet};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub static_iterations: usize,
    pub deform_iterations: usize,
    /// Start the deformation stage from a fresh random cloud instead of a
    /// static-stage checkpoint.
    pub skip_static_init: bool,
    pub log_every: usize,
    /// Also write `checkpoint_<iteration>.gsck` this often (0 = final only).
    pub checkpoint_every: usize,
    pub init: InitSettings,
    pub lr: LearningRates,
    pub loss: LossSettings,
    pub densify: DensifySettings,
    pub model: ModelSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSettings {
    pub gaussians: usize,
    /// Side of the origin-centered cube the initial means are drawn from.
    pub cube_side: f64,
    pub sh_degree: usize,
    pub opacity: f64,
    /// Initial scale as a fraction of the mean spacing `side / n^(1/3)`.
    pub scale_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    /// Multiplied by the scene extent (the initialization cube side).
    pub position: f64,
    pub scale: f64,
    pub rotation: f64,
    pub sh: f64,
    pub opacity: f64,
    pub hash: f64,
    pub mlp: f64,
    pub smoother: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PerceptualKind {
    Off,
    #[default]
    Proxy,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossSettings {
    pub lambda_mask: f64,
    pub lambda_perceptual: f64,
    pub lambda_lips: f64,
    pub perceptual: PerceptualKind,
    /// JSON feature extractor for `perceptual = "external"`.
    pub feature_net: Option<PathBuf>,
    pub lip_halfwidth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensifySettings {
    pub enabled: bool,
    pub interval: usize,
    pub start: usize,
    pub stop: usize,
    pub grad_threshold: f64,
    /// Scale threshold as a fraction of the scene extent.
    pub scale_fraction: f64,
    pub opacity_threshold: f64,
    pub split_factor: f64,
    pub max_gaussians: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    /// `false` feeds raw coordinates to the deformation MLP.
    pub hash_grid: bool,
    pub levels: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub max_resolution: usize,
    /// Encoder bounds are `±bounds` on every axis.
    pub bounds: f64,
    pub audio_window: usize,
    pub audio_channels: usize,
    pub audio_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            static_iterations: 10_000,
            deform_iterations: 100_000,
            skip_static_init: false,
            log_every: 100,
            checkpoint_every: 0,
            init: InitSettings::default(),
            lr: LearningRates::default(),
            loss: LossSettings::default(),
            densify: DensifySettings::default(),
            model: ModelSettings::default(),
        }
    }
}

impl Default for InitSettings {
    fn default() -> Self {
        Self { gaussians: 10_000, cube_side: 2.0, sh_degree: 3, opacity: 0.1, scale_fraction: 0.5 }
    }
}

impl Default for LearningRates {
    fn default() -> Self {
        Self { position: 1.6e-4, scale: 5e-3, rotation: 1e-3, sh: 2.5e-3, opacity: 5e-2, hash: 5e-3, mlp: 1.6e-5, smoother: 1.6e-5 }
    }
}

impl Default for LossSettings {
    fn default() -> Self {
        let d = LossConfig::default();
        Self {
            lambda_mask: d.lambda_mask,
            lambda_perceptual: d.lambda_perceptual,
            lambda_lips: d.lambda_lips,
            perceptual: PerceptualKind::Proxy,
            feature_net: None,
            lip_halfwidth: d.lip_halfwidth,
        }
    }
}

impl Default for DensifySettings {
    fn default() -> Self {
        let d = DensifyConfig::for_extent(1.0);
        Self {
            enabled: true,
            interval: 100,
            start: 500,
            stop: 15_000,
            grad_threshold: d.grad_threshold,
            scale_fraction: d.scale_threshold,
            opacity_threshold: d.opacity_threshold,
            split_factor: d.split_factor,
            max_gaussians: d.max_gaussians,
        }
    }
}

impl Default for ModelSettings {
    fn default() -> Self {
        let e = EncoderConfig::default();
        Self {
            hash_grid: true,
            levels: e.levels,
            log2_table_size: e.log2_table_size,
            base_resolution: e.base_resolution,
            max_resolution: e.max_resolution,
            bounds: e.bounds_max[0],
            audio_window: DEFAULT_WINDOW,
            audio_channels: DEFAULT_CHANNELS,
            audio_dim: DEFAULT_OUTPUT_DIM,
        }
    }
}

#[derive(Deserialize)]
struct FeatureNetFile {
    layers: Vec<ConvLayerFile>,
}

#[derive(Deserialize)]
struct ConvLayerFile {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Reads a feature extractor: `{"layers": [{"in_channels", "out_channels",
/// "kernel", "weights", "bias"}, ...]}` with weights `out × in × k × k`.
pub fn load_feature_net(path: &Path) -> Result<FeatureNet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: FeatureNetFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    let layers = file
        .layers
        .into_iter()
        .map(|l| ConvLayer { in_channels: l.in_channels, out_channels: l.out_channels, kernel: l.kernel, weights: l.weights, bias: l.bias })
        .collect();
    FeatureNet::new(layers).map_err(|e| Error::format(path, e.to_string()))
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::format(path, m),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let lr = &self.lr;
        let rates = [lr.position, lr.scale, lr.rotation, lr.sh, lr.opacity, lr.hash, lr.mlp, lr.smoother];
        if !rates.iter().all(|r| r.is_finite() && *r >= 0.0) {
            return Err(Error::Config("learning rates must be finite and nonnegative".into()));
        }
        if self.init.gaussians == 0 || !(self.init.cube_side > 0.0) || !(0.0 < self.init.opacity && self.init.opacity < 1.0) || !(self.init.scale_fraction > 0.0) {
            return Err(Error::Config("init: need gaussians > 0, cube_side > 0, opacity in (0, 1), scale_fraction > 0".into()));
        }
        if self.init.sh_degree > talksplat_core::gaussian::MAX_SH_DEGREE {
            return Err(Error::Config(format!("init.sh_degree {} exceeds 3", self.init.sh_degree)));
        }
        if self.densify.enabled && self.densify.interval == 0 {
            return Err(Error::Config("densify.interval must be positive".into()));
        }
        self.densify_config().validate()?;
        self.loss_config_without_net().validate()?;
        if self.loss.perceptual == PerceptualKind::External && self.loss.feature_net.is_none() {
            return Err(Error::Config("perceptual = \"external\" requires loss.feature_net".into()));
        }
        if !(self.model.bounds > 0.0) || self.model.audio_window == 0 || self.model.audio_channels == 0 || self.model.audio_dim == 0 {
            return Err(Error::Config("model: bounds and smoother sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn extent(&self) -> f64 {
        self.init.cube_side
    }

    pub fn densify_config(&self) -> DensifyConfig {
        let d = &self.densify;
        DensifyConfig {
            grad_threshold: d.grad_threshold,
            scale_threshold: d.scale_fraction * self.extent(),
            opacity_threshold: d.opacity_threshold,
            split_factor: d.split_factor,
            max_gaussians: d.max_gaussians,
        }
    }

    fn loss_config_without_net(&self) -> LossConfig {
        let l = &self.loss;
        LossConfig {
            lambda_mask: l.lambda_mask,
            lambda_perceptual: l.lambda_perceptual,
            lambda_lips: l.lambda_lips,
            perceptual: PerceptualMode::Proxy,
            lip_halfwidth: l.lip_halfwidth,
        }
    }

    /// Loss settings, loading the feature extractor in external mode.
    pub fn loss_config(&self) -> Result<LossConfig> {
        let perceptual = match self.loss.perceptual {
            PerceptualKind::Off => PerceptualMode::Off,
            PerceptualKind::Proxy => PerceptualMode::Proxy,
            PerceptualKind::External => {
                let path = self.loss.feature_net.as_ref().ok_or_else(|| Error::Config("external perceptual mode without loss.feature_net".into()))?;
                PerceptualMode::External(load_feature_net(path)?)
            }
        };
        Ok(LossConfig { perceptual, ..self.loss_config_without_net() })
    }

    pub fn encoder_config(&self) -> Option<EncoderConfig> {
        let m = &self.model;
        m.hash_grid.then(|| EncoderConfig {
            levels: m.levels,
            log2_table_size: m.log2_table_size,
            base_resolution: m.base_resolution,
            max_resolution: m.max_resolution,
            bounds_min: [-m.bounds; 3],
            bounds_max: [m.bounds; 3],
            ..EncoderConfig::default()
        })
    }
}
