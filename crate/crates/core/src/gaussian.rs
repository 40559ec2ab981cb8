//! Gaussian primitives: storage, activations, covariance and density.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};
use crate::sh;

/// Regularization added to the diagonal of Σ before inversion (world units²).
pub const COVARIANCE_EPS: f64 = 1e-9;

/// Highest supported SH degree.
pub const MAX_SH_DEGREE: usize = 3;

/// A single Gaussian in raw (optimizable) parameterization.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec3,
    /// Log-space scale, activated by `exp`.
    pub scale_raw: Vec3,
    /// Quaternion `(w, x, y, z)`, normalized before use.
    pub rotation: Quat,
    /// `(degree + 1)²` coefficients × 3 channels, coefficient-major.
    pub sh: Vec<f64>,
    /// Logit of the opacity.
    pub opacity_raw: f64,
}

/// Activated view of a Gaussian's parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activated {
    pub scale: Vec3,
    pub rotation: Quat,
    pub opacity: f64,
}

pub fn activate(scale_raw: &Vec3, rotation: &Quat, opacity_raw: f64) -> Activated {
    Activated {
        scale: [math::exp(scale_raw[0]), math::exp(scale_raw[1]), math::exp(scale_raw[2])],
        rotation: math::quat_normalize(rotation),
        opacity: math::sigmoid(opacity_raw),
    }
}

impl Gaussian {
    pub fn activated(&self) -> Activated {
        activate(&self.scale_raw, &self.rotation, self.opacity_raw)
    }
}

/// Dense structure-of-arrays storage for a set of Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub means: Vec<Vec3>,
    pub scales_raw: Vec<Vec3>,
    pub rotations: Vec<Quat>,
    /// Per Gaussian `sh_coeff_count(sh_degree) * 3` values.
    pub sh: Vec<f64>,
    pub opacities_raw: Vec<f64>,
    sh_degree: usize,
}

impl GaussianCloud {
    pub fn new(sh_degree: usize) -> Result<Self> {
        if sh_degree > MAX_SH_DEGREE {
            return Err(Error::ShDegree { requested: sh_degree, available: MAX_SH_DEGREE });
        }
        Ok(Self {
            means: Vec::new(),
            scales_raw: Vec::new(),
            rotations: Vec::new(),
            sh: Vec::new(),
            opacities_raw: Vec::new(),
            sh_degree,
        })
    }

    pub fn sh_degree(&self) -> usize {
        self.sh_degree
    }

    /// Number of `f64` SH values stored per Gaussian.
    pub fn sh_stride(&self) -> usize {
        sh::coeff_count(self.sh_degree) * 3
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        crate::error::check_dim("gaussian sh coefficients", self.sh_stride(), g.sh.len())?;
        self.means.push(g.mean);
        self.scales_raw.push(g.scale_raw);
        self.rotations.push(g.rotation);
        self.sh.extend_from_slice(&g.sh);
        self.opacities_raw.push(g.opacity_raw);
        Ok(())
    }

    pub fn sh_of(&self, i: usize) -> &[f64] {
        let s = self.sh_stride();
        &self.sh[i * s..(i + 1) * s]
    }

    pub fn sh_of_mut(&mut self, i: usize) -> &mut [f64] {
        let s = self.sh_stride();
        &mut self.sh[i * s..(i + 1) * s]
    }

    pub fn get(&self, i: usize) -> Gaussian {
        Gaussian {
            mean: self.means[i],
            scale_raw: self.scales_raw[i],
            rotation: self.rotations[i],
            sh: self.sh_of(i).to_vec(),
            opacity_raw: self.opacities_raw[i],
        }
    }

    pub fn activated(&self, i: usize) -> Activated {
        activate(&self.scales_raw[i], &self.rotations[i], self.opacities_raw[i])
    }

    /// New cloud holding rows `indices` of `self`, in that order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.sh_degree).expect("degree already validated");
        for &i in indices {
            out.push(self.get(i)).expect("same stride");
        }
        out
    }

    /// Zeroed buffer with the same shape, used for gradients.
    pub fn zeros_like(&self) -> Self {
        Self {
            means: vec![[0.0; 3]; self.len()],
            scales_raw: vec![[0.0; 3]; self.len()],
            rotations: vec![[0.0; 4]; self.len()],
            sh: vec![0.0; self.sh.len()],
            opacities_raw: vec![0.0; self.len()],
            sh_degree: self.sh_degree,
        }
    }

    /// Checks the element-wise invariants a render call depends on.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        crate::error::check_dim("scales", n, self.scales_raw.len())?;
        crate::error::check_dim("rotations", n, self.rotations.len())?;
        crate::error::check_dim("opacities", n, self.opacities_raw.len())?;
        crate::error::check_dim("sh", n * self.sh_stride(), self.sh.len())?;
        let finite = self.means.iter().flatten().all(|v| v.is_finite())
            && self.scales_raw.iter().flatten().all(|v| v.is_finite())
            && self.rotations.iter().flatten().all(|v| v.is_finite())
            && self.sh.iter().all(|v| v.is_finite())
            && self.opacities_raw.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("gaussian cloud parameters"));
        }
        Ok(())
    }
}

/// Σ = R S Sᵀ Rᵀ for activated scale and unit rotation.
pub fn build_covariance(scale: &Vec3, rotation: &Quat) -> Mat3 {
    let r = math::quat_to_mat3(rotation);
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scale[j];
        }
    }
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = m[i][0] * m[j][0] + m[i][1] * m[j][1] + m[i][2] * m[j][2];
            sigma[i][j] = v;
            sigma[j][i] = v;
        }
    }
    sigma
}

/// Backpropagates dL/dΣ to (dL/dscale, dL/dq) for the activated scale and
/// unit quaternion passed to [`build_covariance`].
pub fn build_covariance_backward(scale: &Vec3, rotation: &Quat, d_sigma: &Mat3) -> (Vec3, Quat) {
    let r = math::quat_to_mat3(rotation);
    // Σ = M Mᵀ with M = R S, so dL/dM = (G + Gᵀ) M.
    let mut g = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            g[i][j] = d_sigma[i][j] + d_sigma[j][i];
        }
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = r[i][j] * scale[j];
        }
    }
    let d_m = math::mat3_mul(&g, &m);
    let mut d_scale = [0.0; 3];
    let mut d_r = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            d_scale[j] += d_m[i][j] * r[i][j];
            d_r[i][j] = d_m[i][j] * scale[j];
        }
    }
    (d_scale, math::quat_to_mat3_backward(rotation, &d_r))
}

fn regularized_inverse(covariance: &Mat3) -> Result<Mat3> {
    let mut reg = *covariance;
    for (i, row) in reg.iter_mut().enumerate() {
        row[i] += COVARIANCE_EPS;
    }
    // Leading minors must be positive for a PD matrix.
    let m1 = reg[0][0];
    let m2 = reg[0][0] * reg[1][1] - reg[0][1] * reg[1][0];
    let m3 = math::mat3_det(&reg);
    if !(m1 > 0.0 && m2 > 0.0 && m3 > 0.0) {
        return Err(Error::SingularCovariance);
    }
    math::mat3_inverse(&reg).ok_or(Error::SingularCovariance)
}

/// Unnormalized Gaussian value `exp(-½ (x-μ)ᵀ Σ⁻¹ (x-μ))`.
pub fn gaussian_density(x: &Vec3, mean: &Vec3, covariance: &Mat3) -> Result<f64> {
    let inv = regularized_inverse(covariance)?;
    let d = math::sub3(x, mean);
    let q = math::dot3(&d, &math::mat3_vec(&inv, &d));
    Ok(math::exp(-0.5 * q))
}

/// Density value together with its gradients w.r.t. `x` and Σ.
/// The gradient w.r.t. the mean is the negation of the one w.r.t. `x`.
pub fn gaussian_density_grad(x: &Vec3, mean: &Vec3, covariance: &Mat3) -> Result<(f64, Vec3, Mat3)> {
    let inv = regularized_inverse(covariance)?;
    let d = math::sub3(x, mean);
    let w = math::mat3_vec(&inv, &d);
    let value = math::exp(-0.5 * math::dot3(&d, &w));
    let d_x = math::scale3(&w, -value);
    let mut d_sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            d_sigma[i][j] = 0.5 * value * w[i] * w[j];
        }
    }
    Ok((value, d_x, d_sigma))
}
