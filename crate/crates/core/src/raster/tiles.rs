use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::raster::project::ProjectedGaussian;

pub const TILE_SIZE: usize = 16;

/// Image partition into square tiles; edge tiles may be partial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
}

impl TileGrid {
    pub fn new(tile_size: usize, width: usize, height: usize) -> Self {
        assert!(tile_size > 0, "tile size must be positive");
        Self { tile_size, tiles_x: width.div_ceil(tile_size), tiles_y: height.div_ceil(tile_size), width, height }
    }

    pub fn len(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel bounds `(x0, x1, y0, y1)` of tile `t`, half-open.
    pub fn pixel_bounds(&self, t: usize) -> (usize, usize, usize, usize) {
        let tx = t % self.tiles_x;
        let ty = t / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        (x0, (x0 + self.tile_size).min(self.width), y0, (y0 + self.tile_size).min(self.height))
    }
}

/// Inclusive range of pixel indices whose centers `i + 0.5` lie in
/// `[center - half, center + half]`, clipped to `[0, len)`.
pub fn pixel_span(center: f64, half: f64, len: usize) -> Option<(usize, usize)> {
    let lo = math::ceil(center - half - 0.5);
    let hi = math::floor(center + half - 0.5);
    if !(lo.is_finite() && hi.is_finite()) || hi < 0.0 || lo > (len as f64 - 1.0) || lo > hi {
        return None;
    }
    Some((lo.max(0.0) as usize, (hi as usize).min(len - 1)))
}

/// Positions into `projected`, globally ordered by ascending depth with the
/// Gaussian index as tie-breaker.
pub fn depth_order(projected: &[ProjectedGaussian]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..projected.len()).collect();
    order.sort_by(|&a, &b| {
        projected[a].depth.total_cmp(&projected[b].depth).then(projected[a].index.cmp(&projected[b].index))
    });
    order
}

/// Per-tile lists of positions into `projected`. A splat is listed in every
/// tile containing a pixel center inside its 3σ bounding box; each list is
/// depth sorted.
pub fn bin_tiles(projected: &[ProjectedGaussian], tile_size: usize, width: usize, height: usize) -> Vec<Vec<usize>> {
    let grid = TileGrid::new(tile_size, width, height);
    let mut tiles = vec![Vec::new(); grid.len()];
    if width == 0 || height == 0 {
        return tiles;
    }
    for pos in depth_order(projected) {
        let p = &projected[pos];
        let Some((x0, x1)) = pixel_span(p.mean2d[0], p.extent[0], width) else { continue };
        let Some((y0, y1)) = pixel_span(p.mean2d[1], p.extent[1], height) else { continue };
        for ty in y0 / tile_size..=y1 / tile_size {
            for tx in x0 / tile_size..=x1 / tile_size {
                tiles[ty * grid.tiles_x + tx].push(pos);
            }
        }
    }
    tiles
}
