//! Adam with per-group learning rates.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamGroup {
    pub name: String,
    pub lr: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Completed steps.
    pub step: u64,
    pub groups: Vec<AdamGroup>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, step: 0, groups: Vec::new() }
    }

    /// Registers a group of `len` parameters and returns its index.
    pub fn add_group(&mut self, name: impl Into<String>, lr: f64, len: usize) -> usize {
        self.groups.push(AdamGroup { name: name.into(), lr, m: vec![0.0; len], v: vec![0.0; len] });
        self.groups.len() - 1
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Advances the shared step counter. Call once per optimization step,
    /// before the [`Self::update`] calls of that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Bias-corrected update of group `g`.
    pub fn update(&mut self, g: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if self.step == 0 {
            return Err(Error::Config("adam update before begin_step".into()));
        }
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let t = self.step as f64;
        let c1 = 1.0 - math::powf(b1, t);
        let c2 = 1.0 - math::powf(b2, t);
        let group = self.groups.get_mut(g).ok_or_else(|| Error::Config(alloc::format!("no optimizer group {g}")))?;
        check_dim("adam parameters", group.m.len(), params.len())?;
        check_dim("adam gradients", group.m.len(), grads.len())?;
        for i in 0..params.len() {
            let gi = grads[i];
            group.m[i] = b1 * group.m[i] + (1.0 - b1) * gi;
            group.v[i] = b2 * group.v[i] + (1.0 - b2) * gi * gi;
            let m_hat = group.m[i] / c1;
            let v_hat = group.v[i] / c2;
            params[i] -= group.lr * m_hat / (math::sqrt(v_hat) + eps);
        }
        Ok(())
    }

    /// Rebuilds the moments of group `g` after rows were added or removed.
    /// `row_map[new] = Some(old)` keeps a row's state; `None` starts at zero.
    pub fn remap_rows(&mut self, g: usize, row_map: &[Option<usize>], width: usize) -> Result<()> {
        let group = self.groups.get_mut(g).ok_or_else(|| Error::Config(alloc::format!("no optimizer group {g}")))?;
        let remap = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; row_map.len() * width];
            for (new, old) in row_map.iter().enumerate() {
                if let Some(old) = old {
                    out[new * width..(new + 1) * width].copy_from_slice(&src[old * width..(old + 1) * width]);
                }
            }
            out
        };
        if row_map.iter().flatten().any(|&o| (o + 1) * width > group.m.len()) {
            return Err(Error::Config("optimizer row map out of range".into()));
        }
        group.m = remap(&group.m);
        group.v = remap(&group.v);
        Ok(())
    }
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-15)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut a = Adam::default();
        let g = a.add_group("p", 0.1, 2);
        let mut p = [1.0, -2.0];
        a.begin_step();
        a.update(g, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [1.0, -2.0]);
        assert_eq!(a.step, 1);
    }

    #[test]
    fn remap_keeps_and_zeroes_rows() {
        let mut a = Adam::default();
        let g = a.add_group("p", 0.1, 4);
        a.groups[g].m = vec![1.0, 2.0, 3.0, 4.0];
        a.remap_rows(g, &[Some(1), None, Some(0)], 2).unwrap();
        assert_eq!(a.groups[g].m, vec![3.0, 4.0, 0.0, 0.0, 1.0, 2.0]);
    }
}
