//! Multi-resolution hash tri-plane encoder.
//!
//! A 3D point is projected onto the xy, yz and xz planes. Each plane holds
//! `levels` 2D grids whose resolutions grow geometrically; features are
//! bilinearly interpolated per level and concatenated plane-major, then
//! level-major. Coarse levels whose vertex count fits in the table are
//! indexed densely, finer ones through a spatial hash.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{self, Vec3};

/// Per-axis hash multipliers for 2D vertex coordinates.
pub const HASH_PRIMES: [u32; 2] = [1, 2_654_435_761];

/// Coordinates kept by each plane: xy, yz, xz.
pub const PLANE_AXES: [[usize; 2]; 3] = [[0, 1], [1, 2], [0, 2]];

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub max_resolution: usize,
    pub bounds_min: Vec3,
    pub bounds_max: Vec3,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            levels: 14,
            features_per_level: 1,
            log2_table_size: 15,
            base_resolution: 64,
            max_resolution: 512,
            bounds_min: [-1.0; 3],
            bounds_max: [1.0; 3],
        }
    }
}

impl EncoderConfig {
    /// Geometric growth factor between consecutive levels.
    pub fn growth_factor(&self) -> f64 {
        if self.levels <= 1 {
            return 1.0;
        }
        math::powf(self.max_resolution as f64 / self.base_resolution as f64, 1.0 / (self.levels as f64 - 1.0))
    }

    pub fn resolutions(&self) -> Vec<usize> {
        let b = self.growth_factor();
        (0..self.levels)
            .map(|l| libm::round(self.base_resolution as f64 * math::powf(b, l as f64)) as usize)
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        3 * self.levels * self.features_per_level
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Level {
    resolution: usize,
    /// Entries (vertices) in this level's table.
    size: usize,
    dense: bool,
}

/// Corner lookups of one plane-level, kept for the backward pass.
#[derive(Debug, Clone, Copy, Default)]
struct CornerSet {
    /// Offsets into the flat table array (feature 0).
    index: [usize; 4],
    weight: [f64; 4],
    /// d weight / d u along the plane's two axes.
    dweight: [[f64; 4]; 2],
}

/// Lookups made by one [`TriPlaneHashEncoder::encode_recorded`] call.
#[derive(Debug, Clone)]
pub struct EncodeRecord {
    corners: Vec<CornerSet>,
    /// d u / d position per axis; zero where the position was clamped.
    du_dx: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriPlaneHashEncoder {
    config: EncoderConfig,
    levels: Vec<Level>,
    /// Flat offsets of (plane, level) blocks into `tables`.
    offsets: Vec<usize>,
    /// All learned features, `Σ size × F` per plane.
    pub tables: Vec<f64>,
}

/// Dense row-major or hashed index of a 2D vertex at `level`.
pub fn hash_index(cell: [u32; 2], resolution: usize, table_size: usize) -> usize {
    let side = resolution + 1;
    if side * side <= table_size {
        cell[1] as usize * side + cell[0] as usize
    } else {
        let h = cell[0].wrapping_mul(HASH_PRIMES[0]) ^ cell[1].wrapping_mul(HASH_PRIMES[1]);
        h as usize & (table_size - 1)
    }
}

impl TriPlaneHashEncoder {
    /// Encoder with all tables zeroed.
    pub fn zeros(config: EncoderConfig) -> Result<Self> {
        if config.levels == 0 || config.features_per_level == 0 {
            return Err(Error::Config("encoder needs at least one level and one feature".into()));
        }
        if config.log2_table_size > 30 {
            return Err(Error::Config("hash table size above 2^30".into()));
        }
        if !(0..3).all(|a| config.bounds_max[a] > config.bounds_min[a]) {
            return Err(Error::Config("encoder bounds must have positive extent".into()));
        }
        let res = config.resolutions();
        if res[0] == 0 || res.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(alloc::format!("resolutions must be positive and strictly increasing: {res:?}")));
        }
        let table_size = 1usize << config.log2_table_size;
        let levels: Vec<Level> = res
            .iter()
            .map(|&r| {
                let vertices = (r + 1) * (r + 1);
                Level { resolution: r, size: vertices.min(table_size), dense: vertices <= table_size }
            })
            .collect();
        let f = config.features_per_level;
        let mut offsets = Vec::with_capacity(3 * levels.len());
        let mut total = 0;
        for _ in 0..3 {
            for lv in &levels {
                offsets.push(total);
                total += lv.size * f;
            }
        }
        Ok(Self { config, levels, offsets, tables: vec![0.0; total] })
    }

    /// Encoder with tables drawn uniformly from `[-1e-4, 1e-4]`.
    pub fn new<R: Rng>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let mut enc = Self::zeros(config)?;
        for v in enc.tables.iter_mut() {
            *v = rng.random_range(-1e-4..1e-4);
        }
        Ok(enc)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    pub fn resolutions(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.resolution).collect()
    }

    pub fn level_is_dense(&self, level: usize) -> bool {
        self.levels[level].dense
    }

    /// Flat offset of the (plane, level) block in [`Self::tables`].
    pub fn block_offset(&self, plane: usize, level: usize) -> usize {
        self.offsets[plane * self.levels.len() + level]
    }

    /// Position mapped to the unit cube, and whether any axis was clamped.
    fn normalize(&self, p: &Vec3) -> Result<(Vec3, [bool; 3])> {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("encoder position"));
        }
        let mut u = [0.0; 3];
        let mut clamped = [false; 3];
        for a in 0..3 {
            let lo = self.config.bounds_min[a];
            let hi = self.config.bounds_max[a];
            let t = (p[a] - lo) / (hi - lo);
            clamped[a] = !(0.0..=1.0).contains(&t);
            u[a] = t.clamp(0.0, 1.0);
        }
        Ok((u, clamped))
    }

    /// Writes `output_dim()` features for `p` into `out`. Returns whether
    /// the position had to be clamped into the bounds.
    pub fn encode_into(&self, p: &Vec3, out: &mut [f64]) -> Result<bool> {
        let (_, clamped) = self.encode_impl(p, out, None)?;
        Ok(clamped)
    }

    pub fn encode(&self, p: &Vec3) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.output_dim()];
        self.encode_into(p, &mut out)?;
        Ok(out)
    }

    /// Like [`Self::encode_into`] but also returns the lookups needed by
    /// [`Self::encode_backward`].
    pub fn encode_recorded(&self, p: &Vec3, out: &mut [f64]) -> Result<(EncodeRecord, bool)> {
        let mut rec = EncodeRecord { corners: Vec::with_capacity(3 * self.levels.len()), du_dx: [0.0; 3] };
        let (du_dx, clamped) = self.encode_impl(p, out, Some(&mut rec.corners))?;
        rec.du_dx = du_dx;
        Ok((rec, clamped))
    }

    fn encode_impl(&self, p: &Vec3, out: &mut [f64], mut record: Option<&mut Vec<CornerSet>>) -> Result<(Vec3, bool)> {
        crate::error::check_dim("encoder output", self.output_dim(), out.len())?;
        let (u, clamped) = self.normalize(p)?;
        let f = self.config.features_per_level;
        let table_size = 1usize << self.config.log2_table_size;
        let nl = self.levels.len();
        for (plane, axes) in PLANE_AXES.iter().enumerate() {
            for (l, lv) in self.levels.iter().enumerate() {
                let res = lv.resolution as f64;
                let mut cell = [0u32; 2];
                let mut frac = [0.0; 2];
                for k in 0..2 {
                    let pos = u[axes[k]] * res;
                    let c = (math::floor(pos) as usize).min(lv.resolution - 1);
                    cell[k] = c as u32;
                    frac[k] = pos - c as f64;
                }
                let corners = [[0u32, 0u32], [1, 0], [0, 1], [1, 1]];
                let (fx, fy) = (frac[0], frac[1]);
                let weight = [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy];
                let base = self.offsets[plane * nl + l];
                let mut set = CornerSet { weight, ..CornerSet::default() };
                for (c, off) in corners.iter().enumerate() {
                    let idx = hash_index([cell[0] + off[0], cell[1] + off[1]], lv.resolution, table_size);
                    set.index[c] = base + idx * f;
                }
                let o = (plane * nl + l) * f;
                for j in 0..f {
                    let mut v = 0.0;
                    for c in 0..4 {
                        v += weight[c] * self.tables[set.index[c] + j];
                    }
                    out[o + j] = v;
                }
                if let Some(rec) = record.as_deref_mut() {
                    set.dweight = [
                        [-(1.0 - fy) * res, (1.0 - fy) * res, -fy * res, fy * res],
                        [-(1.0 - fx) * res, -fx * res, (1.0 - fx) * res, fx * res],
                    ];
                    rec.push(set);
                }
            }
        }
        let mut du_dx = [0.0; 3];
        for a in 0..3 {
            if !clamped[a] {
                du_dx[a] = 1.0 / (self.config.bounds_max[a] - self.config.bounds_min[a]);
            }
        }
        Ok((du_dx, clamped.iter().any(|&c| c)))
    }

    /// Scatters `upstream` (dL/d features) into table gradients via `sink(index, value)`
    /// in a fixed order and returns dL/d position.
    pub fn encode_backward_with(&self, record: &EncodeRecord, upstream: &[f64], mut sink: impl FnMut(usize, f64)) -> Result<Vec3> {
        crate::error::check_dim("encoder upstream gradient", self.output_dim(), upstream.len())?;
        let f = self.config.features_per_level;
        let mut d_u = [0.0; 3];
        for (block, set) in record.corners.iter().enumerate() {
            let plane = block / self.levels.len();
            let axes = PLANE_AXES[plane];
            for j in 0..f {
                let g = upstream[block * f + j];
                if g == 0.0 {
                    continue;
                }
                let mut dv = [0.0; 2];
                for c in 0..4 {
                    sink(set.index[c] + j, g * set.weight[c]);
                    let t = self.tables[set.index[c] + j];
                    dv[0] += set.dweight[0][c] * t;
                    dv[1] += set.dweight[1][c] * t;
                }
                d_u[axes[0]] += g * dv[0];
                d_u[axes[1]] += g * dv[1];
            }
        }
        Ok([d_u[0] * record.du_dx[0], d_u[1] * record.du_dx[1], d_u[2] * record.du_dx[2]])
    }

    /// Dense-buffer form of [`Self::encode_backward_with`].
    pub fn encode_backward(&self, record: &EncodeRecord, upstream: &[f64], table_grad: &mut [f64]) -> Result<Vec3> {
        crate::error::check_dim("table gradient", self.tables.len(), table_grad.len())?;
        self.encode_backward_with(record, upstream, |i, v| table_grad[i] += v)
    }
}
