//! Adaptive density control: prune transparent Gaussians, clone small ones
//! and split large ones where the view-space positional gradient is high.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::math::{self, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyConfig {
    /// Mean NDC positional-gradient norm above which a Gaussian is refined.
    pub grad_threshold: f64,
    /// Absolute activated-scale threshold separating clone from split.
    pub scale_threshold: f64,
    pub opacity_threshold: f64,
    /// Children of a split get `scale / split_factor`.
    pub split_factor: f64,
    pub max_gaussians: usize,
}

impl DensifyConfig {
    /// Defaults with the scale threshold at 1% of `scene_extent`.
    pub fn for_extent(scene_extent: f64) -> Self {
        Self { grad_threshold: 2e-4, scale_threshold: 0.01 * scene_extent, opacity_threshold: 0.005, split_factor: 1.6, max_gaussians: 100_000 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grad_threshold >= 0.0 && self.scale_threshold > 0.0 && (0.0..1.0).contains(&self.opacity_threshold) && self.split_factor > 1.0;
        if ok { Ok(()) } else { Err(Error::Config("invalid density-control thresholds".into())) }
    }
}

/// Gradient statistics gathered between densify events.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DensifyStats {
    pub grad_accum: Vec<f64>,
    /// Summed world-space mean gradients; their direction offsets clones.
    pub pos_grad_accum: Vec<Vec3>,
    pub count: Vec<u32>,
}

impl DensifyStats {
    pub fn new(n: usize) -> Self {
        Self { grad_accum: vec![0.0; n], pos_grad_accum: vec![[0.0; 3]; n], count: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    /// Adds one render's statistics for the Gaussians in `visible`.
    pub fn accumulate(&mut self, screen_grad_norm: &[f64], pos_grad: &[Vec3], visible: &[bool]) -> Result<()> {
        let n = self.len();
        check_dim("screen gradient norms", n, screen_grad_norm.len())?;
        check_dim("position gradients", n, pos_grad.len())?;
        check_dim("visibility mask", n, visible.len())?;
        for i in 0..n {
            if visible[i] {
                self.grad_accum[i] += screen_grad_norm[i];
                for k in 0..3 {
                    self.pos_grad_accum[i][k] += pos_grad[i][k];
                }
                self.count[i] += 1;
            }
        }
        Ok(())
    }

    pub fn mean_grad(&self, i: usize) -> f64 {
        if self.count[i] == 0 { 0.0 } else { self.grad_accum[i] / f64::from(self.count[i]) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Keep,
    Prune,
    Clone,
    Split,
}

/// Rule applied to Gaussian `i`, ignoring the size cap.
pub fn decide(cloud: &GaussianCloud, stats: &DensifyStats, cfg: &DensifyConfig, i: usize) -> Decision {
    let a = cloud.activated(i);
    if a.opacity < cfg.opacity_threshold {
        return Decision::Prune;
    }
    if stats.mean_grad(i) < cfg.grad_threshold {
        return Decision::Keep;
    }
    let max_scale = a.scale.iter().cloned().fold(f64::MIN, f64::max);
    if max_scale < cfg.scale_threshold { Decision::Clone } else { Decision::Split }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensifyOutcome {
    pub cloud: GaussianCloud,
    /// Per row of the new cloud: the old row it continues, or `None` for a
    /// fresh Gaussian whose optimizer state starts at zero.
    pub row_map: Vec<Option<usize>>,
    pub pruned: usize,
    pub cloned: usize,
    pub split: usize,
    /// Refinements skipped because of the size cap.
    pub capped: usize,
}

/// One densify event. Surviving Gaussians keep their order; clones and split
/// children are appended in source order. Without any recorded statistics
/// the cloud is returned unchanged.
pub fn densify_and_prune<R: Rng>(cloud: &GaussianCloud, stats: &DensifyStats, cfg: &DensifyConfig, rng: &mut R) -> Result<DensifyOutcome> {
    cfg.validate()?;
    check_dim("densify statistics", cloud.len(), stats.len())?;
    if stats.count.iter().all(|&c| c == 0) {
        return Ok(DensifyOutcome { cloud: cloud.clone(), row_map: (0..cloud.len()).map(Some).collect(), pruned: 0, cloned: 0, split: 0, capped: 0 });
    }
    let decisions: Vec<Decision> = (0..cloud.len()).map(|i| decide(cloud, stats, cfg, i)).collect();
    let pruned = decisions.iter().filter(|d| **d == Decision::Prune).count();

    // Apply the cap in index order; each clone or split adds one Gaussian.
    let mut size = cloud.len() - pruned;
    let mut accepted = decisions.clone();
    let mut capped = 0;
    for d in accepted.iter_mut() {
        if matches!(d, Decision::Clone | Decision::Split) {
            if size < cfg.max_gaussians {
                size += 1;
            } else {
                *d = Decision::Keep;
                capped += 1;
            }
        }
    }

    let mut keep = Vec::new();
    for (i, d) in accepted.iter().enumerate() {
        if matches!(d, Decision::Keep | Decision::Clone) {
            keep.push(i);
        }
    }
    let mut out = cloud.select(&keep);
    let mut row_map: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
    let log_phi = math::ln(cfg.split_factor);
    let (mut cloned, mut split) = (0, 0);
    for (i, d) in accepted.iter().enumerate() {
        match d {
            Decision::Clone => {
                let mut g = cloud.get(i);
                let a = cloud.activated(i);
                let step = 0.5 * a.scale.iter().cloned().fold(f64::MIN, f64::max);
                let dir = stats.pos_grad_accum[i];
                let n = math::norm3(&dir);
                if n > 0.0 {
                    for k in 0..3 {
                        g.mean[k] -= step * dir[k] / n;
                    }
                }
                out.push(g)?;
                row_map.push(None);
                cloned += 1;
            }
            Decision::Split => {
                let a = cloud.activated(i);
                let r = math::quat_to_mat3(&a.rotation);
                for _ in 0..2 {
                    let mut g = cloud.get(i);
                    let z: [f64; 3] = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
                    let local = [a.scale[0] * z[0], a.scale[1] * z[1], a.scale[2] * z[2]];
                    let offset = math::mat3_vec(&r, &local);
                    for k in 0..3 {
                        g.mean[k] += offset[k];
                        g.scale_raw[k] -= log_phi;
                    }
                    out.push(g)?;
                    row_map.push(None);
                }
                split += 1;
            }
            _ => {}
        }
    }
    Ok(DensifyOutcome { cloud: out, row_map, pruned, cloned, split, capped })
}

/// Clamps every opacity to at most `max`. Not part of the default schedule.
pub fn reset_opacity(cloud: &mut GaussianCloud, max: f64) {
    let cap = math::logit(max);
    for o in &mut cloud.opacities_raw {
        if *o > cap {
            *o = cap;
        }
    }
}
