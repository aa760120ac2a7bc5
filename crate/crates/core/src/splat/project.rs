use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use crate::scene::rotation;
use crate::scene::{Camera, GaussianKernel};

/// Screen-space dilation added to both diagonal entries of `cov2d` (px^2).
pub const LOW_PASS: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.99;
pub const MIN_ALPHA: f64 = 1.0 / 255.0;

/// A kernel projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub index: usize,
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    /// Inverse of `cov2d`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    pub opacity: f64,
    pub color: [f64; 3],
    /// Distance from the mean beyond which the contribution is below the skip threshold.
    pub radius: f64,
}

impl Splat2D {
    /// Clamped contribution at continuous pixel position `p`, before the skip test.
    #[inline]
    pub fn alpha_at(&self, p: &Vector2<f64>) -> (f64, f64) {
        let d = p - self.mean2d;
        let q = self.conic[(0, 0)] * d.x * d.x + 2.0 * self.conic[(0, 1)] * d.x * d.y + self.conic[(1, 1)] * d.y * d.y;
        let g = (-0.5 * q).exp();
        ((self.opacity * g).min(MAX_ALPHA), g)
    }
}

/// Everything the backward pass needs to chain screen-space gradients to the kernel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Projection {
    pub splat: Splat2D,
    pub t_cam: Vector3<f64>,
    /// `d(pixel)/d(t_cam)`.
    pub jac: Matrix2x3<f64>,
    pub world_to_cam: Matrix3<f64>,
    pub rot: Matrix3<f64>,
}

pub(crate) fn project_full(index: usize, kernel: &GaussianKernel, camera: &Camera) -> Option<Projection> {
    let t = camera.to_camera(&kernel.position);
    if t.z <= camera.near() {
        return None;
    }
    let k = camera.intrinsics();
    let a = k.fixed_view::<2, 2>(0, 0).into_owned();
    let p = Matrix2x3::new(1.0 / t.z, 0.0, -t.x / (t.z * t.z), 0.0, 1.0 / t.z, -t.y / (t.z * t.z));
    let jac = a * p;
    let w = camera.rotation();
    let rot = rotation::matrix(&rotation::to_array(&kernel.rotation));
    let s2 = Matrix3::from_diagonal(&kernel.scale.component_mul(&kernel.scale));
    let sigma = rot * s2 * rot.transpose();
    let jw = jac * w;
    let cov2d = jw * sigma * jw.transpose() + Matrix2::identity() * LOW_PASS;
    let cov2d = (cov2d + cov2d.transpose()) * 0.5;
    let conic = cov2d.try_inverse()?;
    let mean2d = camera.project_camera_space(&t);

    let (w_img, h_img) = (camera.width() as f64, camera.height() as f64);
    let ex = 3.0 * cov2d[(0, 0)].sqrt();
    let ey = 3.0 * cov2d[(1, 1)].sqrt();
    if mean2d.x + ex < 0.0 || mean2d.x - ex > w_img || mean2d.y + ey < 0.0 || mean2d.y - ey > h_img {
        return None;
    }
    // alpha_hat >= 1/255 requires q <= 2 ln(255 o), and q >= |d|^2 / lambda_max
    let opacity = kernel.opacity;
    let reach = (opacity / MIN_ALPHA).ln();
    let tr = 0.5 * (cov2d[(0, 0)] + cov2d[(1, 1)]);
    let det = cov2d[(0, 0)] * cov2d[(1, 1)] - cov2d[(0, 1)] * cov2d[(1, 0)];
    let lambda_max = tr + (tr * tr - det).max(0.0).sqrt();
    let radius = if reach >= 0.0 { (2.0 * lambda_max * reach).sqrt() * (1.0 + 1e-9) + 1e-9 } else { -1.0 };
    Some(Projection {
        splat: Splat2D {
            index,
            mean2d,
            cov2d,
            conic,
            depth: t.z,
            opacity,
            color: [kernel.color.x, kernel.color.y, kernel.color.z],
            radius,
        },
        t_cam: t,
        jac,
        world_to_cam: w,
        rot,
    })
}

/// EWA projection; `None` when the kernel is behind the near plane or its
/// 3-sigma box misses the image.
pub fn project_gaussian(index: usize, kernel: &GaussianKernel, camera: &Camera) -> Option<Splat2D> {
    project_full(index, kernel, camera).map(|p| p.splat)
}
