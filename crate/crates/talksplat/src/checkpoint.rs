//! Checkpoint files.
//!
//! Little-endian. Header: magic `GSCK`, `u32` version (1), `u32` float width
//! in bytes (8 or 4), `u32` section count. Each section: `u16` name length,
//! UTF-8 name, `u8` kind (0 floats, 1 UTF-8 text), `u32` rank, `u64` per
//! dimension, then the payload. The `meta` text section is JSON describing
//! the model structure; every other section is a float array.
//!
//! Width 8 round-trips bit-identically. Width 4 halves the file at the cost
//! of rounding every value to `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use talksplat_core::audio::{SmootherShape, SmootherWeights};
use talksplat_core::deform::DeformField;
use talksplat_core::encoder::{EncoderConfig, TriPlaneHashEncoder};
use talksplat_core::mlp::Mlp;
use talksplat_core::model::DeformableModel;
use talksplat_core::optim::{Adam, AdamGroup};
use talksplat_core::GaussianCloud;

use crate::dataset::{IntrinsicsRecord, PoseRecord, Region};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GSCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    /// No deformation field.
    #[default]
    Static,
    Audio,
    Pose,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderRecord {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub max_resolution: usize,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

impl From<&EncoderConfig> for EncoderRecord {
    fn from(c: &EncoderConfig) -> Self {
        Self {
            levels: c.levels,
            features_per_level: c.features_per_level,
            log2_table_size: c.log2_table_size,
            base_resolution: c.base_resolution,
            max_resolution: c.max_resolution,
            bounds_min: c.bounds_min,
            bounds_max: c.bounds_max,
        }
    }
}

impl From<EncoderRecord> for EncoderConfig {
    fn from(c: EncoderRecord) -> Self {
        EncoderConfig {
            levels: c.levels,
            features_per_level: c.features_per_level,
            log2_table_size: c.log2_table_size,
            base_resolution: c.base_resolution,
            max_resolution: c.max_resolution,
            bounds_min: c.bounds_min,
            bounds_max: c.bounds_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmootherRecord {
    pub input_dim: usize,
    pub channels: usize,
    pub output_dim: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerRecord {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    /// Group names and learning rates, in registration order.
    pub groups: Vec<(String, f64)>,
}

/// Everything needed to rebuild and render a trained region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub region: Region,
    pub condition: ConditionKind,
    pub iteration: usize,
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: IntrinsicsRecord,
    pub background: [f64; 3],
    pub torso_view: PoseRecord,
    pub sh_degree: usize,
    pub encoder: Option<EncoderRecord>,
    pub mlp_dims: Option<Vec<usize>>,
    pub smoother: Option<SmootherRecord>,
    pub optimizer: Option<OptimizerRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: DeformableModel,
    pub optimizer: Option<Adam>,
}

/// Float width used when writing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    fn width(self) -> u32 {
        match self {
            Precision::F64 => 8,
            Precision::F32 => 4,
        }
    }
}

struct Section {
    name: String,
    shape: Vec<u64>,
    body: Body,
}

enum Body {
    Floats(Vec<f64>),
    Text(String),
}

fn floats(name: &str, shape: &[usize], data: Vec<f64>) -> Section {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    Section { name: name.into(), shape: shape.iter().map(|&d| d as u64).collect(), body: Body::Floats(data) }
}

impl Checkpoint {
    pub fn new(mut meta: CheckpointMeta, model: DeformableModel, optimizer: Option<Adam>) -> Self {
        sync_meta(&mut meta, &model, optimizer.as_ref());
        Self { meta, model, optimizer }
    }

    fn sections(&self) -> Vec<Section> {
        // Structural metadata always follows the arrays actually written.
        let mut meta = self.meta.clone();
        sync_meta(&mut meta, &self.model, self.optimizer.as_ref());
        let c = &self.model.cloud;
        let n = c.len();
        let mut out = vec![
            Section { name: "meta".into(), shape: vec![], body: Body::Text(serde_json::to_string(&meta).expect("meta serializes")) },
            floats("cloud.means", &[n, 3], c.means.as_flattened().to_vec()),
            floats("cloud.scales_raw", &[n, 3], c.scales_raw.as_flattened().to_vec()),
            floats("cloud.rotations", &[n, 4], c.rotations.as_flattened().to_vec()),
            floats("cloud.sh", &[n, c.sh_stride()], c.sh.clone()),
            floats("cloud.opacities_raw", &[n], c.opacities_raw.clone()),
        ];
        if let Some(f) = &self.model.field {
            if let Some(e) = &f.encoder {
                out.push(floats("field.tables", &[e.tables.len()], e.tables.clone()));
            }
            out.push(floats("field.mlp", &[f.mlp.params.len()], f.mlp.params.clone()));
        }
        if let Some(s) = &self.model.smoother {
            out.push(floats("smoother", &[s.params.len()], s.params.clone()));
        }
        if let Some(a) = &self.optimizer {
            for (i, g) in a.groups.iter().enumerate() {
                out.push(floats(&format!("adam.{i}.m"), &[g.m.len()], g.m.clone()));
                out.push(floats(&format!("adam.{i}.v"), &[g.v.len()], g.v.clone()));
            }
        }
        out
    }

    pub fn encode(&self, precision: Precision) -> Vec<u8> {
        let sections = self.sections();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&precision.width().to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for s in sections {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            match &s.body {
                Body::Floats(data) => {
                    out.push(0);
                    out.extend_from_slice(&(s.shape.len() as u32).to_le_bytes());
                    for d in &s.shape {
                        out.extend_from_slice(&d.to_le_bytes());
                    }
                    for v in data {
                        match precision {
                            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                            Precision::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
                        }
                    }
                }
                Body::Text(text) => {
                    out.push(1);
                    out.extend_from_slice(&1u32.to_le_bytes());
                    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
                    out.extend_from_slice(text.as_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "bad magic, expected GSCK"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Version { path: path.to_path_buf(), what: "GSCK", found: version, supported: VERSION });
        }
        let width = r.u32()?;
        if width != 4 && width != 8 {
            return Err(Error::format(path, format!("float width {width} is neither 4 nor 8")));
        }
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| Error::format(path, "section name is not UTF-8"))?.to_string();
            let kind = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()?);
            }
            let len = shape.iter().try_fold(1u64, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format(path, "section shape overflows"))? as usize;
            let body = match kind {
                0 => {
                    let raw = r.take(len.checked_mul(width as usize).ok_or_else(|| Error::format(path, "section too large"))?)?;
                    let data = if width == 8 {
                        raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect()
                    } else {
                        raw.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect()
                    };
                    Body::Floats(data)
                }
                1 => Body::Text(std::str::from_utf8(r.take(len)?).map_err(|_| Error::format(path, "text section is not UTF-8"))?.to_string()),
                k => return Err(Error::format(path, format!("section {name}: unknown kind {k}"))),
            };
            sections.push(Section { name, shape, body });
        }
        if r.pos != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        assemble(sections, path)
    }

    pub fn save(&self, path: &Path, precision: Precision) -> Result<()> {
        fs::write(path, self.encode(precision)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, format!("truncated at byte {}: need {n} more", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Fills the structural fields of `meta` from the model and optimizer.
fn sync_meta(meta: &mut CheckpointMeta, model: &DeformableModel, optimizer: Option<&Adam>) {
    meta.sh_degree = model.cloud.sh_degree();
    meta.encoder = model.field.as_ref().and_then(|f| f.encoder.as_ref()).map(|e| e.config().into());
    meta.mlp_dims = model.field.as_ref().map(|f| f.mlp.dims().to_vec());
    meta.smoother = model.smoother.as_ref().map(|s| {
        let sh = s.shape();
        SmootherRecord { input_dim: sh.input_dim, channels: sh.channels, output_dim: sh.output_dim, window: sh.window }
    });
    meta.optimizer = optimizer.map(|a| OptimizerRecord {
        beta1: a.beta1,
        beta2: a.beta2,
        eps: a.eps,
        step: a.step,
        groups: a.groups.iter().map(|g| (g.name.clone(), g.lr)).collect(),
    });
}

fn assemble(sections: Vec<Section>, path: &Path) -> Result<Checkpoint> {
    let mut meta: Option<CheckpointMeta> = None;
    let mut arrays = std::collections::BTreeMap::new();
    for s in sections {
        match s.body {
            Body::Text(t) if s.name == "meta" => {
                meta = Some(serde_json::from_str(&t).map_err(|e| Error::format(path, format!("meta: {e}")))?);
            }
            Body::Floats(d) => {
                arrays.insert(s.name, (s.shape, d));
            }
            Body::Text(_) => return Err(Error::format(path, format!("unexpected text section {}", s.name))),
        }
    }
    let meta = meta.ok_or_else(|| Error::format(path, "missing meta section"))?;
    let mut take = |name: &str, width: usize| -> Result<Vec<f64>> {
        let (shape, data) = arrays.remove(name).ok_or_else(|| Error::format(path, format!("missing section {name}")))?;
        let inner = shape.get(1).copied().unwrap_or(1) as usize;
        if width != 0 && inner != width {
            return Err(Error::format(path, format!("section {name}: row width {inner}, expected {width}")));
        }
        Ok(data)
    };
    let to3 = |v: Vec<f64>| v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect::<Vec<_>>();
    let mut cloud = GaussianCloud::new(meta.sh_degree)?;
    let stride = cloud.sh_stride();
    cloud.means = to3(take("cloud.means", 3)?);
    cloud.scales_raw = to3(take("cloud.scales_raw", 3)?);
    cloud.rotations = take("cloud.rotations", 4)?.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    cloud.sh = take("cloud.sh", stride)?;
    cloud.opacities_raw = take("cloud.opacities_raw", 0)?;
    let n = cloud.means.len();
    if cloud.scales_raw.len() != n || cloud.rotations.len() != n || cloud.opacities_raw.len() != n || cloud.sh.len() != n * stride {
        return Err(Error::format(path, "cloud sections disagree on the Gaussian count"));
    }
    cloud.validate()?;

    let field = match &meta.mlp_dims {
        Some(dims) => {
            let encoder = match meta.encoder {
                Some(rec) => {
                    let mut e = TriPlaneHashEncoder::zeros(rec.into())?;
                    let tables = take("field.tables", 0)?;
                    if tables.len() != e.tables.len() {
                        return Err(Error::format(path, format!("field.tables has {} values, encoder needs {}", tables.len(), e.tables.len())));
                    }
                    e.tables = tables;
                    Some(e)
                }
                None => None,
            };
            let mut mlp = Mlp::zeros(dims)?;
            let params = take("field.mlp", 0)?;
            if params.len() != mlp.params.len() {
                return Err(Error::format(path, format!("field.mlp has {} values, dims need {}", params.len(), mlp.params.len())));
            }
            mlp.params = params;
            Some(DeformField::from_parts(encoder, mlp)?)
        }
        None => None,
    };
    let smoother = match meta.smoother {
        Some(s) => {
            let mut w = SmootherWeights::zeros(SmootherShape { input_dim: s.input_dim, channels: s.channels, output_dim: s.output_dim, window: s.window })?;
            let params = take("smoother", 0)?;
            if params.len() != w.params.len() {
                return Err(Error::format(path, format!("smoother has {} values, shape needs {}", params.len(), w.params.len())));
            }
            w.params = params;
            Some(w)
        }
        None => None,
    };
    let optimizer = match &meta.optimizer {
        Some(o) => {
            let mut a = Adam::new(o.beta1, o.beta2, o.eps);
            a.step = o.step;
            for (i, (name, lr)) in o.groups.iter().enumerate() {
                let m = take(&format!("adam.{i}.m"), 0)?;
                let v = take(&format!("adam.{i}.v"), 0)?;
                if m.len() != v.len() {
                    return Err(Error::format(path, format!("adam group {name}: moment lengths differ")));
                }
                a.groups.push(AdamGroup { name: name.clone(), lr: *lr, m, v });
            }
            Some(a)
        }
        None => None,
    };
    if let Some(extra) = arrays.keys().next() {
        return Err(Error::format(path, format!("unexpected section {extra}")));
    }
    Ok(Checkpoint { meta, model: DeformableModel { cloud, field, smoother }, optimizer })
}
