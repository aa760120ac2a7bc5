use nalgebra::{Isometry3, Matrix3, Matrix4, Point3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera: intrinsics plus a rigid world-to-camera pose.
///
/// Pixel coordinates are continuous, with the center of pixel `(x, y)` at
/// `(x + 0.5, y + 0.5)`. The camera looks down its local `+z` axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    intrinsics: Matrix3<f64>,
    inv_intrinsics: Matrix3<f64>,
    pose: Isometry3<f64>,
    near: f64,
    far: f64,
    width: usize,
    height: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Camera {
    pub fn new(
        intrinsics: Matrix3<f64>,
        pose: Isometry3<f64>,
        near: f64,
        far: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let (fx, fy) = (intrinsics[(0, 0)], intrinsics[(1, 1)]);
        if !(fx > 0.0 && fy > 0.0) {
            return Err(Error::Config(format!("focal lengths must be positive, got fx={fx}, fy={fy}")));
        }
        if intrinsics[(1, 0)] != 0.0 || intrinsics[(2, 0)] != 0.0 || intrinsics[(2, 1)] != 0.0 || intrinsics[(2, 2)] != 1.0 {
            return Err(Error::Config("intrinsics must be upper triangular with K[2,2] = 1".into()));
        }
        if !(near > 0.0 && near < far) {
            return Err(Error::Config(format!("need 0 < near < far, got near={near}, far={far}")));
        }
        if width == 0 || height == 0 {
            return Err(Error::Config("image size must be non-zero".into()));
        }
        let inv_intrinsics = intrinsics
            .try_inverse()
            .ok_or_else(|| Error::Config("intrinsics not invertible".into()))?;
        Ok(Camera {
            intrinsics,
            inv_intrinsics,
            pose,
            near,
            far,
            width,
            height,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn pinhole(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        pose: Isometry3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let k = Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0);
        Camera::new(k, pose, near, far, width, height)
    }

    /// Builds a camera from a raw 4x4 projection whose top 3x4 block is
    /// `K [R | t]` up to scale, splitting it with an RQ decomposition.
    pub fn from_projection(p: &Matrix4<f64>, near: f64, far: f64, width: usize, height: usize) -> Result<Self> {
        let mut m: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
        let mut p4: Vector3<f64> = p.fixed_view::<3, 1>(0, 3).into_owned();
        if m.determinant() < 0.0 {
            m = -m;
            p4 = -p4;
        }
        if m.determinant().abs() < 1e-300 {
            return Err(Error::Config("projection matrix is singular".into()));
        }
        let (mut k, rot) = rq_decompose(&m);
        let scale = k[(2, 2)];
        k /= scale;
        let t = k.try_inverse().unwrap() * (p4 / scale);
        let rotation = Rotation3::from_matrix_unchecked(rot);
        let pose = Isometry3::from_parts(Translation3::from(t), UnitQuaternion::from_rotation_matrix(&rotation));
        Camera::new(k, pose, near, far, width, height)
    }

    /// The composed 4x4 projection `[K 0; 0 1] * pose`.
    pub fn projection_matrix(&self) -> Matrix4<f64> {
        let mut k4 = Matrix4::identity();
        k4.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.intrinsics);
        k4 * self.pose.to_homogeneous()
    }

    pub fn intrinsics(&self) -> &Matrix3<f64> {
        &self.intrinsics
    }

    pub fn pose(&self) -> &Isometry3<f64> {
        &self.pose
    }

    pub fn fx(&self) -> f64 {
        self.intrinsics[(0, 0)]
    }

    pub fn fy(&self) -> f64 {
        self.intrinsics[(1, 1)]
    }

    pub fn cx(&self) -> f64 {
        self.intrinsics[(0, 2)]
    }

    pub fn cy(&self) -> f64 {
        self.intrinsics[(1, 2)]
    }

    pub fn near(&self) -> f64 {
        self.near
    }

    pub fn far(&self) -> f64 {
        self.far
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// World-to-camera rotation block.
    pub fn rotation(&self) -> Matrix3<f64> {
        self.pose.rotation.to_rotation_matrix().into_inner()
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.inverse_transform_point(&Point3::origin()).coords
    }

    pub fn to_camera(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.pose.transform_point(&Point3::from(*point)).coords
    }

    /// Projects a world point to continuous pixel coordinates and camera-space depth.
    pub fn project(&self, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64)> {
        let pc = self.to_camera(point);
        if pc.z <= 0.0 {
            return Err(Error::BehindCamera { z: pc.z });
        }
        Ok((self.project_camera_space(&pc), pc.z))
    }

    pub(crate) fn project_camera_space(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        let h = self.intrinsics * (pc / pc.z);
        Vector2::new(h.x, h.y)
    }

    /// Ray through a continuous pixel coordinate. Out-of-bounds pixels are allowed.
    pub fn ray(&self, pixel: &Vector2<f64>) -> Ray {
        let dir_cam = self.inv_intrinsics * Vector3::new(pixel.x, pixel.y, 1.0);
        let direction = self.pose.rotation.inverse_transform_vector(&dir_cam).normalize();
        Ray {
            origin: self.center(),
            direction,
        }
    }

    /// Back-projects a pixel to the world point with camera-space depth `depth`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        let pc = self.inv_intrinsics * Vector3::new(pixel.x, pixel.y, 1.0) * depth;
        self.pose.inverse_transform_point(&Point3::from(pc)).coords
    }

    /// Camera-space z per unit length along `direction` (a world-space unit vector).
    pub fn depth_per_unit(&self, direction: &Vector3<f64>) -> f64 {
        (self.pose.rotation * direction).z
    }

    pub fn in_image(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// `m = r * q` with `r` upper triangular (positive diagonal) and `q` orthonormal.
pub fn rq_decompose(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let flip = Matrix3::new(0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
    let qr = (flip * m).transpose().qr();
    let (q_t, r_t) = (qr.q(), qr.r());
    let mut r = flip * r_t.transpose() * flip;
    let mut q = flip * q_t.transpose();
    for i in 0..3 {
        if r[(i, i)] < 0.0 {
            r.column_mut(i).neg_mut();
            q.row_mut(i).neg_mut();
        }
    }
    (r, q)
}
