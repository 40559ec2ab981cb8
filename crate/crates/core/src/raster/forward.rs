use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gaussian::GaussianCloud;
use crate::math::{self, Vec2, Vec3};
use crate::par;
use crate::raster::camera::Camera;
use crate::raster::project::{self, ProjectedGaussian, ProjectionCache, EXTENT_SIGMA};
use crate::raster::tiles::{self, TileGrid, TILE_SIZE};

/// Contributors below this opacity are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Upper cap on a single contributor's opacity.
pub const ALPHA_MAX: f64 = 0.99;
/// A pixel stops compositing once transmittance would fall below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;

/// Per-pixel opacity of one splat.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    pub alpha: f64,
    /// `exp(-½ dᵀ A d)`.
    pub falloff: f64,
    pub offset: Vec2,
    pub capped: bool,
}

#[inline]
pub(crate) fn contribution(p: &ProjectedGaussian, pixel: &Vec2) -> Option<Contribution> {
    let d = [pixel[0] - p.mean2d[0], pixel[1] - p.mean2d[1]];
    let a = &p.conic;
    let q = a[0][0] * d[0] * d[0] + 2.0 * a[0][1] * d[0] * d[1] + a[1][1] * d[1] * d[1];
    if !(q <= EXTENT_SIGMA * EXTENT_SIGMA) {
        return None;
    }
    let falloff = math::exp(-0.5 * q);
    let alpha = p.opacity * falloff;
    if alpha < ALPHA_MIN {
        return None;
    }
    let capped = alpha > ALPHA_MAX;
    Some(Contribution { alpha: if capped { ALPHA_MAX } else { alpha }, falloff, offset: d, capped })
}

/// State saved by a recording forward pass.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pub(crate) camera: Camera,
    pub(crate) background: Vec3,
    pub(crate) cloud_len: usize,
    pub(crate) projected: Vec<ProjectedGaussian>,
    pub(crate) caches: Vec<ProjectionCache>,
    pub(crate) grid: TileGrid,
    pub(crate) tiles: Vec<Vec<usize>>,
    /// Per pixel: number of tile-list entries visited before compositing stopped.
    pub(crate) n_contrib: Vec<u32>,
    pub(crate) final_transmittance: Vec<f64>,
}

impl RenderAux {
    pub fn contributor_counts(&self) -> &[u32] {
        &self.n_contrib
    }

    pub fn final_transmittance(&self) -> &[f64] {
        &self.final_transmittance
    }

    pub fn projected(&self) -> &[ProjectedGaussian] {
        &self.projected
    }
}

/// Composited image plus accumulated opacity.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `height × width × 3`, row-major.
    pub rgb: Vec<f64>,
    /// `height × width`.
    pub alpha: Vec<f64>,
    /// Per Gaussian: composited into at least one pixel.
    pub contributed: Vec<bool>,
    pub aux: Option<RenderAux>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub tile_size: usize,
    /// Keep the state needed by [`crate::raster::render_backward`].
    pub record: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { tile_size: TILE_SIZE, record: true }
    }
}

struct TileResult {
    rgb: Vec<f64>,
    alpha: Vec<f64>,
    n_contrib: Vec<u32>,
    final_t: Vec<f64>,
    used: Vec<bool>,
}

/// Projects every Gaussian; returns the visible ones with their caches.
pub(crate) fn project_cloud(cloud: &GaussianCloud, camera: &Camera) -> (Vec<ProjectedGaussian>, Vec<ProjectionCache>) {
    let all = par::map_range(cloud.len(), |i| project::project_one(cloud, i, camera));
    all.into_iter().flatten().unzip()
}

/// Depth-ordered front-to-back alpha compositing over `background`.
pub fn render_forward(cloud: &GaussianCloud, camera: &Camera, background: &Vec3, options: &RenderOptions) -> Result<RenderOutput> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    cloud.validate()?;
    camera.validate()?;
    let (w, h) = (camera.width, camera.height);
    let (projected, caches) = project_cloud(cloud, camera);
    let grid = TileGrid::new(options.tile_size, w, h);
    let tile_lists = tiles::bin_tiles(&projected, options.tile_size, w, h);

    let results = par::map_range(grid.len(), |t| render_tile(&grid, t, &tile_lists[t], &projected, background));

    let mut rgb = vec![0.0; w * h * 3];
    let mut alpha = vec![0.0; w * h];
    let mut n_contrib = vec![0u32; w * h];
    let mut final_t = vec![1.0; w * h];
    let mut contributed = vec![false; cloud.len()];
    for (t, res) in results.into_iter().enumerate() {
        let (x0, x1, y0, y1) = grid.pixel_bounds(t);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let local = (y - y0) * tw + (x - x0);
                let pix = y * w + x;
                rgb[pix * 3..pix * 3 + 3].copy_from_slice(&res.rgb[local * 3..local * 3 + 3]);
                alpha[pix] = res.alpha[local];
                n_contrib[pix] = res.n_contrib[local];
                final_t[pix] = res.final_t[local];
            }
        }
        for (slot, &pos) in tile_lists[t].iter().enumerate() {
            if res.used[slot] {
                contributed[projected[pos].index] = true;
            }
        }
    }

    let aux = options.record.then(|| RenderAux {
        camera: *camera,
        background: *background,
        cloud_len: cloud.len(),
        projected,
        caches,
        grid,
        tiles: tile_lists,
        n_contrib,
        final_transmittance: final_t,
    });
    Ok(RenderOutput { width: w, height: h, rgb, alpha, contributed, aux })
}

fn render_tile(grid: &TileGrid, t: usize, list: &[usize], projected: &[ProjectedGaussian], background: &Vec3) -> TileResult {
    let (x0, x1, y0, y1) = grid.pixel_bounds(t);
    let n = (x1 - x0) * (y1 - y0);
    let mut out = TileResult {
        rgb: vec![0.0; n * 3],
        alpha: vec![0.0; n],
        n_contrib: vec![0; n],
        final_t: vec![1.0; n],
        used: vec![false; list.len()],
    };
    let mut local = 0;
    for y in y0..y1 {
        for x in x0..x1 {
            let pixel = [x as f64 + 0.5, y as f64 + 0.5];
            let mut t_acc = 1.0;
            let mut color = [0.0; 3];
            let mut last = 0;
            for (slot, &pos) in list.iter().enumerate() {
                let p = &projected[pos];
                let Some(c) = contribution(p, &pixel) else { continue };
                let next_t = t_acc * (1.0 - c.alpha);
                if next_t < TRANSMITTANCE_MIN {
                    break;
                }
                let weight = c.alpha * t_acc;
                for k in 0..3 {
                    color[k] += p.color[k] * weight;
                }
                t_acc = next_t;
                last = slot + 1;
                out.used[slot] = true;
            }
            for k in 0..3 {
                out.rgb[local * 3 + k] = color[k] + t_acc * background[k];
            }
            out.alpha[local] = 1.0 - t_acc;
            out.n_contrib[local] = last as u32;
            out.final_t[local] = t_acc;
            local += 1;
        }
    }
    out
}

impl RenderOutput {
    /// Hash over which splats composite into which pixels, which are capped,
    /// and which colors are clamped. Two renders with equal signatures lie in
    /// the same differentiable piece of the image function.
    pub fn contributor_signature(&self) -> Option<u64> {
        let aux = self.aux.as_ref()?;
        let mut h = Fnv::default();
        for p in &aux.projected {
            h.write(p.index as u64);
            for c in p.color {
                h.write(u64::from(c == 0.0 || c == 1.0));
            }
        }
        for t in 0..aux.grid.len() {
            let (x0, x1, y0, y1) = aux.grid.pixel_bounds(t);
            let list = &aux.tiles[t];
            for y in y0..y1 {
                for x in x0..x1 {
                    let pix = y * self.width + x;
                    let pixel = [x as f64 + 0.5, y as f64 + 0.5];
                    h.write(pix as u64);
                    for &pos in &list[..aux.n_contrib[pix] as usize] {
                        if let Some(c) = contribution(&aux.projected[pos], &pixel) {
                            h.write(((aux.projected[pos].index as u64) << 1) | u64::from(c.capped));
                        }
                    }
                }
            }
        }
        Some(h.0)
    }
}

struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
