//! One region model (head or torso): canonical cloud, optional deformation
//! field and optional audio smoother, rendered end to end.

use alloc::vec::Vec;

use crate::audio::{AudioFeatureTrack, SmootherTape, SmootherWeights};
use crate::deform::{self, DeformField, Deformed};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::math::Vec3;
use crate::raster::{render_backward, render_forward, Camera, Pose, RenderOptions, RenderOutput};

/// Driving signal for one frame.
#[derive(Debug, Clone, Copy)]
pub enum Condition<'a> {
    /// No deformation (static stage).
    Static,
    Audio { track: &'a AudioFeatureTrack, frame: usize, eye: f64 },
    Pose(&'a Pose),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeformableModel {
    pub cloud: GaussianCloud,
    pub field: Option<DeformField>,
    pub smoother: Option<SmootherWeights>,
}

/// Forward state of one frame.
#[derive(Debug, Clone)]
pub struct FrameForward {
    pub output: RenderOutput,
    pub deformed: Option<Deformed>,
    smoother_tape: Option<SmootherTape>,
}

impl FrameForward {
    /// The cloud that was rasterized.
    pub fn rendered_cloud<'a>(&'a self, model: &'a DeformableModel) -> &'a GaussianCloud {
        self.deformed.as_ref().map_or(&model.cloud, |d| &d.cloud)
    }

    pub fn mean_displacement(&self) -> Vec3 {
        self.deformed.as_ref().map_or([0.0; 3], |d| d.mean_displacement)
    }
}

#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub cloud: GaussianCloud,
    pub mlp: Vec<f64>,
    pub tables: Vec<f64>,
    pub smoother: Vec<f64>,
    /// NDC positional gradient norm per Gaussian, for density control.
    pub screen_grad_norm: Vec<f64>,
    pub visible: Vec<bool>,
}

impl DeformableModel {
    pub fn static_model(cloud: GaussianCloud) -> Self {
        Self { cloud, field: None, smoother: None }
    }

    /// Condition vector fed to the field, plus the smoother tape when audio
    /// drives it.
    fn condition(&self, cond: &Condition<'_>, record: bool) -> Result<Option<(Vec<f64>, Option<SmootherTape>)>> {
        match (cond, &self.field) {
            (Condition::Static, _) | (_, None) => Ok(None),
            (Condition::Pose(p), Some(_)) => Ok(Some((deform::pose_condition(p)?, None))),
            (Condition::Audio { track, frame, eye }, Some(_)) => {
                let smoother = self.smoother.as_ref().ok_or(Error::Config("audio condition without a smoother".into()))?;
                let window = smoother.gather(track, *frame)?;
                let (f_a, tape) = smoother.forward_recorded(&window)?;
                Ok(Some((deform::head_condition(&f_a, *eye), record.then_some(tape))))
            }
        }
    }

    /// Deformed cloud for `cond` without rendering.
    pub fn deform(&self, cond: &Condition<'_>) -> Result<GaussianCloud> {
        match (self.condition(cond, false)?, &self.field) {
            (Some((c, _)), Some(field)) => Ok(field.apply(&self.cloud, &c, false)?.cloud),
            _ => Ok(self.cloud.clone()),
        }
    }

    pub fn forward(&self, cond: &Condition<'_>, camera: &Camera, background: &Vec3, record: bool) -> Result<FrameForward> {
        let (deformed, smoother_tape) = match (self.condition(cond, record)?, &self.field) {
            (Some((c, tape)), Some(field)) => (Some(field.apply(&self.cloud, &c, record)?), tape),
            _ => (None, None),
        };
        let cloud = deformed.as_ref().map_or(&self.cloud, |d| &d.cloud);
        let output = render_forward(cloud, camera, background, &RenderOptions { record, ..RenderOptions::default() })?;
        Ok(FrameForward { output, deformed, smoother_tape })
    }

    /// Gradients of a loss with dL/d rgb = `d_rgb` and dL/d alpha = `d_alpha`.
    pub fn backward(&self, fwd: &FrameForward, d_rgb: &[f64], d_alpha: Option<&[f64]>) -> Result<ModelGrads> {
        let rendered = fwd.rendered_cloud(self);
        let rg = render_backward(rendered, &fwd.output, d_rgb, d_alpha)?;
        let mut grads = ModelGrads {
            cloud: rg.params,
            mlp: Vec::new(),
            tables: Vec::new(),
            smoother: Vec::new(),
            screen_grad_norm: rg.screen_grad_norm,
            visible: rg.visible,
        };
        if let (Some(field), Some(deformed)) = (&self.field, &fwd.deformed) {
            let dg = field.backward(&self.cloud, deformed, &grads.cloud)?;
            grads.cloud = dg.cloud;
            grads.mlp = dg.mlp;
            grads.tables = dg.tables;
            if let (Some(smoother), Some(tape)) = (&self.smoother, &fwd.smoother_tape) {
                let da = smoother.output_dim();
                check_dim("head condition", da + 1, dg.condition.len())?;
                grads.smoother = alloc::vec![0.0; smoother.params.len()];
                smoother.backward(tape, &dg.condition[..da], &mut grads.smoother)?;
            }
        }
        Ok(grads)
    }
}
