use nalgebra::Vector3;

use super::grid::SdfGrid;
use crate::error::{Error, Result};

pub const ALPHA_DEPTH: f64 = 0.1;
pub const ALPHA_EIKONAL: f64 = 0.01;

pub fn huber(a: f64, b: f64, delta: f64) -> f64 {
    let e = (a - b).abs();
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `a`.
pub fn huber_grad(a: f64, b: f64, delta: f64) -> f64 {
    (a - b).clamp(-delta, delta)
}

/// Per-channel Huber summed over RGB.
pub fn huber_rgb(a: &[f64; 3], b: &[f64; 3], delta: f64) -> f64 {
    (0..3).map(|c| huber(a[c], b[c], delta)).sum()
}

/// Prediction and ground truth for one ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayPair {
    pub predicted_color: [f64; 3],
    pub predicted_depth: f64,
    pub color: [f64; 3],
    pub depth: f64,
}

/// Mean color and depth Huber losses over a batch, plus their gradients
/// with respect to each predicted color and depth.
pub fn color_depth_losses(batch: &[RayPair], color_delta: f64, depth_delta: f64) -> Result<((f64, f64), Vec<([f64; 3], f64)>)> {
    if batch.is_empty() {
        return Err(Error::EmptyMask("ray batch"));
    }
    let m = batch.len() as f64;
    let mut lc = 0.0;
    let mut ld = 0.0;
    let grads = batch
        .iter()
        .map(|r| {
            lc += huber_rgb(&r.predicted_color, &r.color, color_delta);
            ld += huber(r.predicted_depth, r.depth, depth_delta);
            let gc = std::array::from_fn(|c| huber_grad(r.predicted_color[c], r.color[c], color_delta) / m);
            (gc, huber_grad(r.predicted_depth, r.depth, depth_delta) / m)
        })
        .collect();
    Ok(((lc / m, ld / m), grads))
}

/// Mean squared deviation of the gradient norm from one at the given points.
pub fn eikonal_loss(sdf: &SdfGrid, points: &[Vector3<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    points.iter().map(|p| (sdf.gradient(p).norm() - 1.0).powi(2)).sum::<f64>() / points.len() as f64
}

/// [`eikonal_loss`] with its gradient scattered into `grad` (scaled by `weight`).
pub fn eikonal_loss_grad(sdf: &SdfGrid, points: &[Vector3<f64>], weight: f64, grad: &mut [f64]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let inv = 1.0 / points.len() as f64;
    let mut total = 0.0;
    for p in points {
        let st = sdf.spec.stencil(p);
        let n = st.gradient(&sdf.values);
        let len = n.norm();
        total += (len - 1.0).powi(2);
        if len > 1e-12 {
            let g_n = n * (2.0 * (len - 1.0) / len * inv * weight);
            for (&i, g) in st.nodes.iter().zip(&st.weight_grads) {
                grad[i] += g_n.dot(g);
            }
        }
    }
    total * inv
}

pub fn mesh_total_loss(color: f64, depth: f64, eikonal: f64, alpha_depth: f64, alpha_eikonal: f64) -> f64 {
    color + alpha_depth * depth + alpha_eikonal * eikonal
}
