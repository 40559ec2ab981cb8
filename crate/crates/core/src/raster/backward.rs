use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::math;
use crate::par;
use crate::raster::forward::{contribution, RenderOutput};
use crate::raster::project::{self, ScreenGrad};

/// Gradients of a scalar loss w.r.t. every raw Gaussian parameter.
#[derive(Debug, Clone)]
pub struct RenderGrads {
    /// Same layout as the input cloud; each field holds dL/d(field).
    pub params: GaussianCloud,
    /// Per Gaussian `‖dL/d mean2d‖` measured in NDC units (zero when not visible).
    pub screen_grad_norm: Vec<f64>,
    /// Per Gaussian: composited into at least one pixel.
    pub visible: Vec<bool>,
}

/// Backward of [`crate::raster::render_forward`].
///
/// `d_rgb` is dL/d(rgb) with the image layout; `d_alpha`, when given, is
/// dL/d(alpha). `cloud` must be the cloud that produced `output`.
pub fn render_backward(cloud: &GaussianCloud, output: &RenderOutput, d_rgb: &[f64], d_alpha: Option<&[f64]>) -> Result<RenderGrads> {
    let aux = output.aux.as_ref().ok_or(Error::MissingAux)?;
    check_dim("cloud size", aux.cloud_len, cloud.len())?;
    let (w, h) = (output.width, output.height);
    check_dim("rgb gradient", w * h * 3, d_rgb.len())?;
    if let Some(da) = d_alpha {
        check_dim("alpha gradient", w * h, da.len())?;
    }

    let grid = aux.grid;
    let per_tile = par::map_range(grid.len(), |t| {
        let list = &aux.tiles[t];
        let mut acc = vec![ScreenGrad::default(); list.len()];
        let mut included: Vec<usize> = Vec::new();
        let (x0, x1, y0, y1) = grid.pixel_bounds(t);
        for y in y0..y1 {
            for x in x0..x1 {
                let pix = y * w + x;
                let g_rgb = [d_rgb[pix * 3], d_rgb[pix * 3 + 1], d_rgb[pix * 3 + 2]];
                let g_a = d_alpha.map_or(0.0, |da| da[pix]);
                if g_rgb == [0.0; 3] && g_a == 0.0 {
                    continue;
                }
                let pixel = [x as f64 + 0.5, y as f64 + 0.5];
                let n = aux.n_contrib[pix] as usize;
                included.clear();
                for slot in 0..n {
                    if contribution(&aux.projected[list[slot]], &pixel).is_some() {
                        included.push(slot);
                    }
                }
                let t_final = aux.final_transmittance[pix];
                let mut t = t_final;
                let mut behind = [t_final * aux.background[0], t_final * aux.background[1], t_final * aux.background[2]];
                for &slot in included.iter().rev() {
                    let p = &aux.projected[list[slot]];
                    let c = contribution(p, &pixel).expect("recomputed contributor");
                    let one_minus = 1.0 - c.alpha;
                    let t_k = t / one_minus;
                    let mut d_alpha_k = g_a * t_final / one_minus;
                    let g = &mut acc[slot];
                    for k in 0..3 {
                        d_alpha_k += g_rgb[k] * (p.color[k] * t_k - behind[k] / one_minus);
                        g.color[k] += g_rgb[k] * c.alpha * t_k;
                        behind[k] += p.color[k] * c.alpha * t_k;
                    }
                    t = t_k;
                    if c.capped {
                        continue;
                    }
                    g.opacity += d_alpha_k * c.falloff;
                    // alpha = o·exp(p), p = -½ dᵀ A d, d = pixel - mean2d.
                    let d_power = d_alpha_k * c.alpha;
                    let a = &p.conic;
                    let d = c.offset;
                    g.mean2d[0] += d_power * (a[0][0] * d[0] + a[0][1] * d[1]);
                    g.mean2d[1] += d_power * (a[1][0] * d[0] + a[1][1] * d[1]);
                    g.conic[0] += -0.5 * d_power * d[0] * d[0];
                    g.conic[1] += -0.5 * d_power * d[0] * d[1];
                    g.conic[2] += -0.5 * d_power * d[1] * d[1];
                }
            }
        }
        acc
    });

    // Merge in fixed tile order.
    let mut screen = vec![ScreenGrad::default(); aux.projected.len()];
    for (t, acc) in per_tile.iter().enumerate() {
        for (slot, &pos) in aux.tiles[t].iter().enumerate() {
            screen[pos].add(&acc[slot]);
        }
    }

    let stride = cloud.sh_stride();
    let camera = &aux.camera;
    let per_gaussian = par::map_range(aux.projected.len(), |pos| {
        let p = &aux.projected[pos];
        let mut d_sh = vec![0.0; stride];
        let pg = project::project_backward(cloud, p.index, camera, p, &aux.caches[pos], &screen[pos], &mut d_sh);
        (pg, d_sh)
    });

    let mut params = cloud.zeros_like();
    let mut screen_grad_norm = vec![0.0; cloud.len()];
    let (half_w, half_h) = (0.5 * w as f64, 0.5 * h as f64);
    for (pos, (pg, d_sh)) in per_gaussian.into_iter().enumerate() {
        let i = aux.projected[pos].index;
        params.means[i] = pg.mean;
        params.scales_raw[i] = pg.scale_raw;
        params.rotations[i] = pg.rotation;
        params.opacities_raw[i] = pg.opacity_raw;
        params.sh_of_mut(i).copy_from_slice(&d_sh);
        let gx = screen[pos].mean2d[0] * half_w;
        let gy = screen[pos].mean2d[1] * half_h;
        screen_grad_norm[i] = math::sqrt(gx * gx + gy * gy);
    }
    Ok(RenderGrads { params, screen_grad_norm, visible: output.contributed.clone() })
}
