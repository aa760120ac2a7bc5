//! One Gaussian per mesh triangle, and the hinge regularizers that keep
//! kernels small and close to their triangle.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::scene::{FrameData, GaussianKernel, GaussianSet};

pub const GAMMA_SCALE: f64 = 1.0;
pub const GAMMA_SHIFT: f64 = 0.5;
pub const BETA_DEPTH: f64 = 0.5;
pub const BETA_SCALE: f64 = 0.1;
pub const BETA_SHIFT: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BindInit {
    /// Normal-axis scale as a fraction of the inradius.
    pub thin_factor: f64,
    pub opacity: f64,
}

impl Default for BindInit {
    fn default() -> Self {
        BindInit {
            thin_factor: 0.1,
            opacity: 0.7,
        }
    }
}

/// Gaussian `i` is bound to `triangle[i]` and rests at `rest[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BindingMap {
    pub triangle: Vec<usize>,
    pub rest: Vec<Vector3<f64>>,
}

impl BindingMap {
    pub fn len(&self) -> usize {
        self.triangle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangle.is_empty()
    }

    /// True when every triangle of `mesh` carries exactly one kernel.
    pub fn is_bijection(&self, mesh: &TriangleMesh) -> bool {
        let mut seen = vec![false; mesh.len()];
        for &t in &self.triangle {
            if t >= seen.len() || std::mem::replace(&mut seen[t], true) {
                return false;
            }
        }
        self.triangle.len() == mesh.len()
    }
}

/// Rotation whose third column is the triangle normal and first column the first edge.
fn triangle_frame(a: &Vector3<f64>, b: &Vector3<f64>, normal: &Vector3<f64>) -> UnitQuaternion<f64> {
    let t1 = (b - a).normalize();
    let t2 = normal.cross(&t1);
    let m = Matrix3::from_columns(&[t1, t2, *normal]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Places one disc-shaped kernel at every triangle centroid. Colors sample
/// `frame` at the projected centroid (mid-gray when masked or off-image).
pub fn bind_gaussians(mesh: &TriangleMesh, frame: Option<&FrameData>, init: &BindInit) -> Result<(GaussianSet, BindingMap)> {
    if mesh.is_empty() {
        return Err(Error::Data("cannot bind Gaussians to an empty mesh".into()));
    }
    let mut kernels = Vec::with_capacity(mesh.len());
    let mut binding = BindingMap {
        triangle: Vec::with_capacity(mesh.len()),
        rest: Vec::with_capacity(mesh.len()),
    };
    for t in 0..mesh.len() {
        let info = mesh.info(t);
        let [a, b, _] = mesh.triangle_vertices(t);
        let r = info.inradius;
        let color = frame
            .and_then(|f| {
                let (px, _) = f.camera.project(&info.centroid).ok()?;
                if !f.camera.in_image(&px) {
                    return None;
                }
                let (x, y) = (px.x as usize, px.y as usize);
                f.mask[(x, y)].then(|| f.image[(x, y)])
            })
            .unwrap_or([0.5; 3]);
        kernels.push(GaussianKernel::new(
            info.centroid,
            triangle_frame(&a, &b, &info.normal),
            Vector3::new(r, r, init.thin_factor * r),
            init.opacity,
            Vector3::new(color[0], color[1], color[2]),
        ));
        binding.triangle.push(t);
        binding.rest.push(info.centroid);
    }
    Ok((GaussianSet::new(kernels), binding))
}

fn argmax3(v: &Vector3<f64>) -> usize {
    let mut k = 0;
    for a in 1..3 {
        if v[a] > v[k] {
            k = a;
        }
    }
    k
}

/// Mean hinge `max(max(s_i) - gamma R_i, 0)` and its gradient with respect to every scale.
pub fn scale_loss_grad(set: &GaussianSet, binding: &BindingMap, mesh: &TriangleMesh, gamma: f64) -> (f64, Vec<Vector3<f64>>) {
    let n = set.len().max(1) as f64;
    let mut grads = vec![Vector3::zeros(); set.len()];
    let mut total = 0.0;
    for (i, k) in set.kernels.iter().enumerate() {
        let r = mesh.info(binding.triangle[i]).circumradius;
        let a = argmax3(&k.scale);
        let margin = k.scale[a] - gamma * r;
        if margin > 0.0 {
            total += margin;
            grads[i][a] = 1.0 / n;
        }
    }
    (total / n, grads)
}

pub fn scale_loss(set: &GaussianSet, binding: &BindingMap, mesh: &TriangleMesh, gamma: f64) -> f64 {
    scale_loss_grad(set, binding, mesh, gamma).0
}

/// Mean hinge `max(|mu_i - rest_i|_inf - gamma R_i, 0)` and its gradient with respect to every position.
pub fn shift_loss_grad(set: &GaussianSet, binding: &BindingMap, mesh: &TriangleMesh, gamma: f64) -> (f64, Vec<Vector3<f64>>) {
    let n = set.len().max(1) as f64;
    let mut grads = vec![Vector3::zeros(); set.len()];
    let mut total = 0.0;
    for (i, k) in set.kernels.iter().enumerate() {
        let r = mesh.info(binding.triangle[i]).circumradius;
        let d = k.position - binding.rest[i];
        let a = argmax3(&d.abs());
        let margin = d[a].abs() - gamma * r;
        if margin > 0.0 {
            total += margin;
            grads[i][a] = d[a].signum() / n;
        }
    }
    (total / n, grads)
}

pub fn shift_loss(set: &GaussianSet, binding: &BindingMap, mesh: &TriangleMesh, gamma: f64) -> f64 {
    shift_loss_grad(set, binding, mesh, gamma).0
}

pub fn first_frame_loss(color: f64, depth: f64, scale: f64, shift: f64, betas: [f64; 3]) -> f64 {
    color + betas[0] * depth + betas[1] * scale + betas[2] * shift
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::grad_check;

    fn equilateral() -> TriangleMesh {
        let s3 = 3f64.sqrt();
        TriangleMesh::new(vec![Vector3::zeros(), Vector3::x(), Vector3::new(0.5, s3 / 2.0, 0.0)], vec![[0, 1, 2]]).unwrap()
    }

    fn strip(n: usize) -> TriangleMesh {
        let mut v = Vec::new();
        for i in 0..=n {
            v.push(Vector3::new(i as f64 * 0.1, 0.0, 1.0 + 0.01 * i as f64));
            v.push(Vector3::new(i as f64 * 0.1, 0.12, 1.0));
        }
        let mut t = Vec::new();
        for i in 0..n {
            t.push([2 * i, 2 * i + 2, 2 * i + 1]);
            t.push([2 * i + 1, 2 * i + 2, 2 * i + 3]);
        }
        TriangleMesh::new(v, t).unwrap()
    }

    #[test]
    fn equilateral_binding() {
        let mesh = equilateral();
        let (set, binding) = bind_gaussians(&mesh, None, &BindInit::default()).unwrap();
        let k = &set.kernels[0];
        let r = 1.0 / (2.0 * 3f64.sqrt());
        assert!((k.position - mesh.info(0).centroid).norm() < 1e-15);
        assert!((k.scale.x - r).abs() < 1e-12 && (k.scale.y - r).abs() < 1e-12);
        assert!((k.scale.z - 0.1 * r).abs() < 1e-12);
        assert!((k.scale.x - 0.28868).abs() < 1e-5);
        // thin axis along the normal
        let thin = k.rotation * Vector3::z();
        assert!((thin.cross(&mesh.info(0).normal)).norm() < 1e-12);
        assert_eq!(k.opacity, 0.7);
        assert!(binding.is_bijection(&mesh));
        assert!(bind_gaussians(&TriangleMesh::default(), None, &BindInit::default()).is_err());
    }

    #[test]
    fn fresh_binding_is_feasible() {
        let mesh = strip(6);
        let (set, binding) = bind_gaussians(&mesh, None, &BindInit::default()).unwrap();
        assert_eq!(set.len(), mesh.len());
        assert_eq!(scale_loss(&set, &binding, &mesh, GAMMA_SCALE), 0.0);
        assert_eq!(shift_loss(&set, &binding, &mesh, GAMMA_SHIFT), 0.0);
    }

    #[test]
    fn hinge_arithmetic() {
        let mesh = equilateral();
        let (mut set, binding) = bind_gaussians(&mesh, None, &BindInit::default()).unwrap();
        let r = mesh.info(0).circumradius;
        // gamma chosen so gamma * R = 0.2
        set.kernels[0].scale = Vector3::new(0.5, 0.1, 0.1);
        assert!((scale_loss(&set, &binding, &mesh, 0.2 / r) - 0.3).abs() < 1e-12);
        set.kernels[0].position = binding.rest[0] + Vector3::new(-0.3, 0.0, 0.0);
        assert!((shift_loss(&set, &binding, &mesh, 0.1 / r) - 0.2).abs() < 1e-12);
        assert!((first_frame_loss(1.0, 1.0, 1.0, 1.0, [BETA_DEPTH, BETA_SCALE, BETA_SHIFT]) - 1.65).abs() < 1e-12);
        assert_eq!(first_frame_loss(0.0, 0.0, 0.0, 0.0, [BETA_DEPTH, BETA_SCALE, BETA_SHIFT]), 0.0);
    }

    #[test]
    fn hinge_gradients() {
        let mesh = strip(5);
        let (set, binding) = bind_gaussians(&mesh, None, &BindInit::default()).unwrap();
        let n = set.len();
        let mut params = Vec::new();
        for (i, k) in set.kernels.iter().enumerate() {
            let f = 1.0 + 0.9 * ((i * 7) % 5) as f64;
            // distinct components keep the max away from ties
            params.extend((k.scale.component_mul(&Vector3::new(1.0, 0.8, 1.3)) * f).iter());
            params.extend((binding.rest[i] + Vector3::new(0.03, -0.05, 0.02) * f).iter());
        }
        let eval = |p: &[f64]| {
            let mut s = set.clone();
            for i in 0..n {
                s.kernels[i].scale = Vector3::from_column_slice(&p[6 * i..6 * i + 3]);
                s.kernels[i].position = Vector3::from_column_slice(&p[6 * i + 3..6 * i + 6]);
            }
            let (ls, gs) = scale_loss_grad(&s, &binding, &mesh, 0.4);
            let (lh, gh) = shift_loss_grad(&s, &binding, &mesh, 0.3);
            let g = (0..n).flat_map(|i| gs[i].iter().chain(gh[i].iter()).copied().collect::<Vec<_>>()).collect();
            (ls + lh, g)
        };
        let c = grad_check(eval, &params, 1e-7).unwrap();
        assert!(c.max_rel_error < 1e-4, "{}", c.max_rel_error);
    }
}
