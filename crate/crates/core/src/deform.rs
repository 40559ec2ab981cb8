//! Condition-driven deformation of a canonical cloud.
//!
//! Each Gaussian's spatial feature (hash tri-plane encoding of its mean, or
//! the raw mean when the grid is disabled) is concatenated with a condition
//! vector and decoded by a small MLP into `(Δx, Δq, Δs)`. SH and opacity are
//! never deformed.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{EncodeRecord, EncoderConfig, TriPlaneHashEncoder};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::GaussianCloud;
use crate::math::{self, Quat};
use crate::mlp::{Mlp, MlpTape};
use crate::par;
use crate::raster::Pose;

/// Output split of the deformation MLP: Δx, Δq, Δs.
pub const DELTA_SPLIT: [usize; 3] = [3, 4, 3];
pub const DELTA_DIM: usize = 10;
/// Frequencies used to encode the pose condition.
pub const POSE_FREQUENCIES: usize = 6;
/// Default hidden widths of the decoder.
pub const HIDDEN: [usize; 2] = [64, 64];

/// Gaussians per reduction chunk. Fixed so gradient sums do not depend on
/// the thread count.
const CHUNK: usize = 64;

/// `(sin(2^i π p), cos(2^i π p))` for every component, then every frequency.
pub fn positional_encoding(p: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p.len() * 2 * frequencies);
    for &v in p {
        for i in 0..frequencies {
            let a = math::powf(2.0, i as f64) * core::f64::consts::PI * v;
            out.push(math::sin(a));
            out.push(math::cos(a));
        }
    }
    out
}

/// Torso condition `f_p`: encoded `(quaternion, translation)` of the head pose.
pub fn pose_condition(pose: &Pose) -> Result<Vec<f64>> {
    pose.validate(1e-6)?;
    Ok(positional_encoding(&pose.flatten(), POSE_FREQUENCIES))
}

/// Head condition: `f_a ⧺ f_e`.
pub fn head_condition(f_a: &[f64], f_e: f64) -> Vec<f64> {
    let mut c = f_a.to_vec();
    c.push(f_e);
    c
}

/// Hash encoder (optional) plus decoder MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformField {
    /// `None` feeds raw coordinates to the MLP.
    pub encoder: Option<TriPlaneHashEncoder>,
    pub mlp: Mlp,
    condition_dim: usize,
}

#[derive(Debug, Clone)]
struct GaussianTape {
    enc: Option<EncodeRecord>,
    mlp: MlpTape,
    /// `q + Δq` before renormalization.
    q_sum: Quat,
}

/// Forward state for [`DeformField::backward`].
#[derive(Debug, Clone)]
pub struct DeformTape {
    per_gaussian: Vec<GaussianTape>,
}

#[derive(Debug, Clone)]
pub struct Deformed {
    pub cloud: GaussianCloud,
    /// Mean `Δx` over all Gaussians.
    pub mean_displacement: [f64; 3],
    /// Gaussians whose position was clamped into the encoder bounds.
    pub clamped: usize,
    pub tape: Option<DeformTape>,
}

/// Gradients of a loss through one deformation.
#[derive(Debug, Clone)]
pub struct DeformGrads {
    /// dL/d canonical parameters (SH and opacity pass straight through).
    pub cloud: GaussianCloud,
    pub mlp: Vec<f64>,
    /// Empty when the field has no encoder.
    pub tables: Vec<f64>,
    pub condition: Vec<f64>,
}

impl DeformField {
    pub fn new<R: Rng>(encoder: Option<EncoderConfig>, condition_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let encoder = encoder.map(|cfg| TriPlaneHashEncoder::new(cfg, rng)).transpose()?;
        let spatial = encoder.as_ref().map_or(3, |e| e.output_dim());
        let mut dims = vec![spatial + condition_dim];
        dims.extend_from_slice(hidden);
        dims.push(DELTA_DIM);
        let mlp = Mlp::new(&dims, rng)?;
        Ok(Self { encoder, mlp, condition_dim })
    }

    /// Reassembles a field from stored parts.
    pub fn from_parts(encoder: Option<TriPlaneHashEncoder>, mlp: Mlp) -> Result<Self> {
        let spatial = encoder.as_ref().map_or(3, |e| e.output_dim());
        if mlp.output_dim() != DELTA_DIM || mlp.input_dim() < spatial {
            return Err(Error::Dimension { what: "deformation mlp", expected: spatial + DELTA_DIM, actual: mlp.input_dim() + mlp.output_dim() });
        }
        let condition_dim = mlp.input_dim() - spatial;
        Ok(Self { encoder, mlp, condition_dim })
    }

    pub fn condition_dim(&self) -> usize {
        self.condition_dim
    }

    pub fn spatial_dim(&self) -> usize {
        self.encoder.as_ref().map_or(3, |e| e.output_dim())
    }

    /// Raw `(Δx, Δq, Δs)` for one position and condition.
    pub fn delta(&self, mean: &[f64; 3], condition: &[f64]) -> Result<[f64; DELTA_DIM]> {
        let mut input = vec![0.0; self.mlp.input_dim()];
        self.fill_input(mean, condition, &mut input, false)?;
        let out = self.mlp.forward(&input)?;
        Ok(out.try_into().expect("output width checked at construction"))
    }

    fn fill_input(&self, mean: &[f64; 3], condition: &[f64], input: &mut [f64], record: bool) -> Result<(Option<EncodeRecord>, bool)> {
        let s = self.spatial_dim();
        input[s..].copy_from_slice(condition);
        match &self.encoder {
            Some(enc) if record => {
                let (rec, clamped) = enc.encode_recorded(mean, &mut input[..s])?;
                Ok((Some(rec), clamped))
            }
            Some(enc) => Ok((None, enc.encode_into(mean, &mut input[..s])?)),
            None => {
                if !mean.iter().all(|v| v.is_finite()) {
                    return Err(Error::NonFinite("deformation input position"));
                }
                input[..3].copy_from_slice(mean);
                Ok((None, false))
            }
        }
    }

    /// Deforms every Gaussian of `cloud` under `condition`. With `record`,
    /// keeps what [`Self::backward`] needs.
    pub fn apply(&self, cloud: &GaussianCloud, condition: &[f64], record: bool) -> Result<Deformed> {
        check_dim("deformation condition", self.condition_dim, condition.len())?;
        if !condition.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("deformation condition"));
        }
        let results = par::map_range(cloud.len(), |i| -> Result<_> {
            let mut input = vec![0.0; self.mlp.input_dim()];
            let (enc, clamped) = self.fill_input(&cloud.means[i], condition, &mut input, record)?;
            let (out, mlp_tape) = if record {
                self.mlp.forward_recorded(&input)?
            } else {
                (self.mlp.forward(&input)?, MlpTape::default())
            };
            let q = cloud.rotations[i];
            let q_sum = [q[0] + out[3], q[1] + out[4], q[2] + out[5], q[3] + out[6]];
            Ok((out, GaussianTape { enc, mlp: mlp_tape, q_sum }, clamped))
        });
        let mut deformed = cloud.clone();
        let mut tapes = Vec::with_capacity(if record { cloud.len() } else { 0 });
        let mut sum = [0.0; 3];
        let mut clamped = 0;
        for (i, r) in results.into_iter().enumerate() {
            let (d, tape, c) = r?;
            for k in 0..3 {
                deformed.means[i][k] += d[k];
                deformed.scales_raw[i][k] += d[7 + k];
                sum[k] += d[k];
            }
            deformed.rotations[i] = math::quat_normalize(&tape.q_sum);
            clamped += usize::from(c);
            if record {
                tapes.push(tape);
            }
        }
        let n = cloud.len().max(1) as f64;
        Ok(Deformed {
            cloud: deformed,
            mean_displacement: [sum[0] / n, sum[1] / n, sum[2] / n],
            clamped,
            tape: record.then_some(DeformTape { per_gaussian: tapes }),
        })
    }

    /// Chains `d_deformed` (gradients w.r.t. the deformed cloud) back to the
    /// canonical cloud, the field parameters and the condition.
    pub fn backward(&self, canonical: &GaussianCloud, deformed: &Deformed, d_deformed: &GaussianCloud) -> Result<DeformGrads> {
        let tape = deformed.tape.as_ref().ok_or(Error::MissingAux)?;
        check_dim("deformation tape", canonical.len(), tape.per_gaussian.len())?;
        check_dim("deformed gradient", canonical.len(), d_deformed.len())?;
        let n_tables = self.encoder.as_ref().map_or(0, |e| e.tables.len());
        let spatial = self.spatial_dim();
        let n_chunks = canonical.len().div_ceil(CHUNK);

        struct Partial {
            mlp: Vec<f64>,
            tables: Vec<(usize, f64)>,
            condition: Vec<f64>,
            d_mean: Vec<[f64; 3]>,
            d_q: Vec<Quat>,
        }

        let partials = par::map_range(n_chunks, |c| -> Result<Partial> {
            let range = c * CHUNK..((c + 1) * CHUNK).min(canonical.len());
            let mut p = Partial {
                mlp: vec![0.0; self.mlp.params.len()],
                tables: Vec::new(),
                condition: vec![0.0; self.condition_dim],
                d_mean: Vec::with_capacity(range.len()),
                d_q: Vec::with_capacity(range.len()),
            };
            for i in range {
                let gt = &tape.per_gaussian[i];
                let d_mean_out = d_deformed.means[i];
                let d_q_sum = math::quat_normalize_backward(&gt.q_sum, &d_deformed.rotations[i]);
                let ds = d_deformed.scales_raw[i];
                let d_out = [
                    d_mean_out[0], d_mean_out[1], d_mean_out[2],
                    d_q_sum[0], d_q_sum[1], d_q_sum[2], d_q_sum[3],
                    ds[0], ds[1], ds[2],
                ];
                let d_in = self.mlp.backward(&gt.mlp, &d_out, &mut p.mlp)?;
                for (acc, v) in p.condition.iter_mut().zip(&d_in[spatial..]) {
                    *acc += v;
                }
                let d_pos = match (&self.encoder, &gt.enc) {
                    (Some(enc), Some(rec)) => enc.encode_backward_with(rec, &d_in[..spatial], |k, v| p.tables.push((k, v)))?,
                    (Some(_), None) => return Err(Error::MissingAux),
                    (None, _) => [d_in[0], d_in[1], d_in[2]],
                };
                p.d_mean.push([d_mean_out[0] + d_pos[0], d_mean_out[1] + d_pos[1], d_mean_out[2] + d_pos[2]]);
                p.d_q.push(d_q_sum);
            }
            Ok(p)
        });

        let mut grads = DeformGrads {
            cloud: d_deformed.clone(),
            mlp: vec![0.0; self.mlp.params.len()],
            tables: vec![0.0; n_tables],
            condition: vec![0.0; self.condition_dim],
        };
        let mut i = 0;
        for p in partials {
            let p = p?;
            for (a, v) in grads.mlp.iter_mut().zip(&p.mlp) {
                *a += v;
            }
            for (k, v) in p.tables {
                grads.tables[k] += v;
            }
            for (a, v) in grads.condition.iter_mut().zip(&p.condition) {
                *a += v;
            }
            for (m, q) in p.d_mean.into_iter().zip(p.d_q) {
                grads.cloud.means[i] = m;
                grads.cloud.rotations[i] = q;
                i += 1;
            }
        }
        Ok(grads)
    }
}

/// Head deformation under audio feature `f_a` and eye feature `f_e`.
pub fn deform_head(cloud: &GaussianCloud, field: &DeformField, f_a: &[f64], f_e: f64) -> Result<GaussianCloud> {
    Ok(field.apply(cloud, &head_condition(f_a, f_e), false)?.cloud)
}

/// Torso deformation conditioned on the head pose. The result is rendered
/// from the fixed torso view, not from `pose`.
pub fn deform_torso(cloud: &GaussianCloud, field: &DeformField, pose: &Pose) -> Result<GaussianCloud> {
    Ok(field.apply(cloud, &pose_condition(pose)?, false)?.cloud)
}
