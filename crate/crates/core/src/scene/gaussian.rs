use nalgebra::{Matrix3, UnitQuaternion, Vector3};

use super::rotation;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub position: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub scale: Vector3<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl GaussianKernel {
    pub fn new(
        position: Vector3<f64>,
        rotation: UnitQuaternion<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
    ) -> Self {
        GaussianKernel {
            position,
            rotation: rotation::canonical(&rotation),
            scale,
            opacity,
            color,
        }
    }

    /// `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        r * s2 * r.transpose()
    }

    pub fn is_valid(&self) -> bool {
        let q = self.rotation.as_ref();
        let norm_ok = (q.norm() - 1.0).abs() <= 1e-9;
        norm_ok
            && q.w >= 0.0
            && self.scale.iter().all(|s| *s > 0.0 && s.is_finite())
            && (0.0..=1.0).contains(&self.opacity)
            && self.position.iter().all(|p| p.is_finite())
    }
}

/// Ordered kernel list; indices are stable for the lifetime of a reconstruction.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GaussianSet {
    pub kernels: Vec<GaussianKernel>,
}

impl GaussianSet {
    pub fn new(kernels: Vec<GaussianKernel>) -> Self {
        GaussianSet { kernels }
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.kernels.iter().map(|k| k.position).collect()
    }
}
