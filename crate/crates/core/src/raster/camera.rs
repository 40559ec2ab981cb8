use crate::error::{Error, Result};
use crate::math::{self, Mat3, Quat, Vec3};

/// Pinhole intrinsics in pixels. Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Self {
        let fx = width as f64 / (2.0 * libm::tan(fov_x / 2.0));
        Self { fx, fy: fx, cx: width as f64 / 2.0, cy: height as f64 / 2.0 }
    }
}

/// Rigid transform `x ↦ R x + t` with `R` stored as a unit quaternion.
///
/// A head pose is stored as the camera's placement in canonical head space:
/// it maps camera coordinates to head coordinates. Rendering uses its inverse
/// as the world-to-camera view transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Quat,
    pub translation: Vec3,
}

impl Pose {
    pub const IDENTITY: Pose = Pose { rotation: [1.0, 0.0, 0.0, 0.0], translation: [0.0; 3] };

    /// Camera at `eye` looking at `target`, with image `y` pointing along `-up`.
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Self {
        let f = math::sub3(target, eye);
        let f = math::scale3(&f, 1.0 / math::norm3(&f));
        let r = cross(&f, up);
        let r = math::scale3(&r, 1.0 / math::norm3(&r));
        let d = cross(&f, &r);
        // Columns are camera x (right), y (down), z (forward) in world coordinates.
        let m = [[r[0], d[0], f[0]], [r[1], d[1], f[1]], [r[2], d[2], f[2]]];
        Pose { rotation: math::mat3_to_quat(&m), translation: *eye }
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        math::quat_to_mat3(&math::quat_normalize(&self.rotation))
    }

    /// Unit-norm check on the stored quaternion, equivalent to the rotation
    /// matrix being orthonormal.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let all_finite = self.rotation.iter().chain(self.translation.iter()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::NonFinite("pose"));
        }
        let n = math::quat_norm(&self.rotation);
        if (n - 1.0).abs() > tol {
            return Err(Error::Config(alloc::format!("pose rotation is not orthonormal (quaternion norm {n})")));
        }
        Ok(())
    }

    /// The 7 scalars used for pose conditioning: quaternion then translation.
    pub fn flatten(&self) -> [f64; 7] {
        let q = math::quat_normalize(&self.rotation);
        [q[0], q[1], q[2], q[3], self.translation[0], self.translation[1], self.translation[2]]
    }
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// World-to-camera transform plus image geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub view_rotation: Mat3,
    pub view_translation: Vec3,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

pub const DEFAULT_NEAR: f64 = 0.01;

impl Camera {
    /// Camera whose view transform is the inverse of `pose`.
    pub fn from_pose(pose: &Pose, intrinsics: Intrinsics, width: usize, height: usize) -> Self {
        let r = pose.rotation_matrix();
        let rt = math::mat3_transpose(&r);
        let t = math::mat3_vec(&rt, &pose.translation);
        Camera {
            intrinsics,
            view_rotation: rt,
            view_translation: [-t[0], -t[1], -t[2]],
            width,
            height,
            near: DEFAULT_NEAR,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.near > 0.0) {
            return Err(Error::Config(alloc::format!("near plane must be positive, got {}", self.near)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Empty("image dimensions"));
        }
        let r = &self.view_rotation;
        let rrt = math::mat3_mul(r, &math::mat3_transpose(r));
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                if (rrt[i][j] - expect).abs() > 1e-8 {
                    return Err(Error::Config("view rotation is not orthonormal".into()));
                }
            }
        }
        Ok(())
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        math::add3(&math::mat3_vec(&self.view_rotation, p), &self.view_translation)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        let rt = math::mat3_transpose(&self.view_rotation);
        let c = math::mat3_vec(&rt, &self.view_translation);
        [-c[0], -c[1], -c[2]]
    }

    pub fn project(&self, p_cam: &Vec3) -> [f64; 2] {
        let k = &self.intrinsics;
        [k.fx * p_cam[0] / p_cam[2] + k.cx, k.fy * p_cam[1] / p_cam[2] + k.cy]
    }
}
