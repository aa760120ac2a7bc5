//! Volume rendering of an SDF with logistic-density unbiased weights.
//!
//! For consecutive samples `k, k+1` along a ray, the discrete opacity is
//! `alpha_k = max((Phi(d_k) - Phi(d_{k+1})) / Phi(d_k), 0)` where `Phi` is
//! the logistic sigmoid with sharpness `s`. The last sample carries no
//! opacity. Everything is evaluated in log space so deep interior samples
//! (where `Phi` underflows) stay finite.

use nalgebra::{Vector2, Vector3};

use super::grid::{ColorGrid, GridSpec, SdfGrid, Stencil};
use crate::scene::Camera;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RenderSettings {
    pub samples_per_ray: usize,
    pub rays_per_batch: usize,
    /// Sharpness `s` of the logistic density.
    pub inv_std: f64,
    pub huber_delta: f64,
    pub depth_huber_delta: f64,
    pub background: [f64; 3],
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            samples_per_ray: 48,
            rays_per_batch: 256,
            inv_std: 20.0,
            huber_delta: 0.1,
            depth_huber_delta: 0.2,
            background: [0.0; 3],
        }
    }
}

/// A ray clipped to the grid box and the camera depth range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySegment {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub t_near: f64,
    pub t_far: f64,
    /// Camera-space depth per unit ray length.
    pub depth_per_t: f64,
}

impl RaySegment {
    /// Clips the camera ray through `pixel` against `[near, far]` depth and the box.
    pub fn through_pixel(camera: &Camera, pixel: &Vector2<f64>, spec: &GridSpec) -> Option<RaySegment> {
        let ray = camera.ray(pixel);
        let depth_per_t = camera.depth_per_unit(&ray.direction);
        if depth_per_t <= 0.0 {
            return None;
        }
        let (mut t0, mut t1) = (camera.near() / depth_per_t, camera.far() / depth_per_t);
        for a in 0..3 {
            let d = ray.direction[a];
            let o = ray.origin[a];
            if d.abs() < 1e-300 {
                if o < spec.min[a] || o > spec.max[a] {
                    return None;
                }
                continue;
            }
            let (ta, tb) = ((spec.min[a] - o) / d, (spec.max[a] - o) / d);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        (t1 > t0).then_some(RaySegment {
            origin: ray.origin,
            direction: ray.direction,
            t_near: t0,
            t_far: t1,
            depth_per_t,
        })
    }

    /// Stratified sample distances; `offsets[k]` in [0, 1) jitters stratum `k`,
    /// midpoints when `None`.
    pub fn sample_distances(&self, n: usize, offsets: Option<&[f64]>) -> Vec<f64> {
        let step = (self.t_far - self.t_near) / n as f64;
        (0..n)
            .map(|k| {
                let o = offsets.map_or(0.5, |o| o[k]);
                self.t_near + (k as f64 + o) * step
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    pub depth: f64,
    pub weights: Vec<f64>,
}

/// Forward intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RayTrace {
    pub ts: Vec<f64>,
    pub points: Vec<Vector3<f64>>,
    pub stencils: Vec<Stencil>,
    pub sdf: Vec<f64>,
    log_phi: Vec<f64>,
    alpha: Vec<f64>,
    transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    colors: Vec<[f64; 3]>,
    weight_sum: f64,
    pub render: RayRender,
    depth_per_t: f64,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))`, stable for large |x|.
#[inline]
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn trace_ray(
    sdf: &SdfGrid,
    color: &ColorGrid,
    segment: &RaySegment,
    settings: &RenderSettings,
    offsets: Option<&[f64]>,
) -> RayTrace {
    let n = settings.samples_per_ray;
    let s = settings.inv_std;
    let ts = segment.sample_distances(n, offsets);
    let points: Vec<Vector3<f64>> = ts.iter().map(|t| segment.origin + segment.direction * *t).collect();
    let stencils: Vec<Stencil> = points.iter().map(|p| sdf.spec.stencil(p)).collect();
    let d: Vec<f64> = stencils
        .iter()
        .map(|st| st.nodes.iter().zip(&st.weights).map(|(&i, w)| sdf.values[i] * w).sum::<f64>() + st.outside_distance)
        .collect();
    let colors: Vec<[f64; 3]> = stencils
        .iter()
        .map(|st| {
            let mut c = [0.0; 3];
            for (&i, w) in st.nodes.iter().zip(&st.weights) {
                for ch in 0..3 {
                    c[ch] += w * color.values[i][ch];
                }
            }
            c
        })
        .collect();
    let log_phi: Vec<f64> = d.iter().map(|v| log_sigmoid(s * v)).collect();
    let mut alpha = vec![0.0; n];
    for k in 0..n.saturating_sub(1) {
        alpha[k] = (1.0 - (log_phi[k + 1] - log_phi[k]).exp()).max(0.0);
    }
    let mut transmittance = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut t_acc = 1.0;
    for k in 0..n {
        transmittance[k] = t_acc;
        weights[k] = alpha[k] * t_acc;
        t_acc *= 1.0 - alpha[k];
    }
    let weight_sum: f64 = weights.iter().sum();
    let mut c = [0.0; 3];
    let mut z_acc = 0.0;
    for k in 0..n {
        for ch in 0..3 {
            c[ch] += weights[k] * colors[k][ch];
        }
        z_acc += weights[k] * ts[k] * segment.depth_per_t;
    }
    for ch in 0..3 {
        c[ch] += (1.0 - weight_sum) * settings.background[ch];
    }
    let depth = z_acc / weight_sum.max(1e-8);
    RayTrace {
        render: RayRender {
            color: c,
            depth,
            weights: weights.clone(),
        },
        ts,
        points,
        stencils,
        sdf: d,
        log_phi,
        alpha,
        transmittance,
        weights,
        colors,
        weight_sum,
        depth_per_t: segment.depth_per_t,
    }
}

/// Renders color, depth (camera-space z) and per-sample weights along one segment.
pub fn render_ray(
    sdf: &SdfGrid,
    color: &ColorGrid,
    segment: Option<&RaySegment>,
    settings: &RenderSettings,
    far: f64,
) -> RayRender {
    match segment {
        Some(seg) => trace_ray(sdf, color, seg, settings, None).render,
        None => RayRender {
            color: settings.background,
            depth: far,
            weights: vec![0.0; settings.samples_per_ray],
        },
    }
}

/// Sparse gradient contributions of one ray, applied in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct RayGrad {
    pub sdf: Vec<(usize, f64)>,
    pub color: Vec<(usize, [f64; 3])>,
    pub inv_std: f64,
}

/// Backpropagates `dL/dC` and `dL/dD` through one traced ray.
pub fn backward_ray(trace: &RayTrace, settings: &RenderSettings, grad_color: &[f64; 3], grad_depth: f64) -> RayGrad {
    let n = trace.ts.len();
    let s = settings.inv_std;
    let bg = settings.background;
    let w_sum = trace.weight_sum;
    let mut out = RayGrad::default();

    let mut g_w = vec![0.0; n];
    for k in 0..n {
        let z = trace.ts[k] * trace.depth_per_t;
        let mut g = 0.0;
        for ch in 0..3 {
            g += grad_color[ch] * (trace.colors[k][ch] - bg[ch]);
        }
        g += if w_sum > 1e-8 {
            grad_depth * (z - trace.render.depth) / w_sum
        } else {
            grad_depth * z / 1e-8
        };
        g_w[k] = g;
        if trace.weights[k] != 0.0 {
            let gc = grad_color.map(|v| v * trace.weights[k]);
            for (&i, w) in trace.stencils[k].nodes.iter().zip(&trace.stencils[k].weights) {
                if *w != 0.0 {
                    out.color.push((i, gc.map(|v| v * w)));
                }
            }
        }
    }

    // dL/dalpha_k = T_k (g_w_k - U_k), U_k = g_w_{k+1} a_{k+1} + (1 - a_{k+1}) U_{k+1}
    let mut g_log_phi = vec![0.0; n];
    let mut u = 0.0;
    for k in (0..n).rev() {
        if k + 1 < n {
            u = g_w[k + 1] * trace.alpha[k + 1] + (1.0 - trace.alpha[k + 1]) * u;
        }
        if k + 1 < n && trace.alpha[k] > 0.0 {
            let g_alpha = trace.transmittance[k] * (g_w[k] - u);
            let ratio = 1.0 - trace.alpha[k];
            g_log_phi[k] += g_alpha * ratio;
            g_log_phi[k + 1] -= g_alpha * ratio;
        }
    }
    for k in 0..n {
        if g_log_phi[k] == 0.0 {
            continue;
        }
        let d = trace.sdf[k];
        let sig_neg = sigmoid(-s * d);
        let g_d = g_log_phi[k] * s * sig_neg;
        out.inv_std += g_log_phi[k] * d * sig_neg;
        for (&i, w) in trace.stencils[k].nodes.iter().zip(&trace.stencils[k].weights) {
            if *w != 0.0 {
                out.sdf.push((i, g_d * w));
            }
        }
    }
    let _ = &trace.log_phi;
    out
}
