//! Unconstrained parameterization of a kernel set for gradient descent:
//! raw quaternions, log-scales, logit-opacities, and colors clamped to [0, 1].

use nalgebra::Vector3;

use super::rasterize::GaussianGrads;
use crate::error::Result;
use crate::scene::rotation;
use crate::scene::{adam_step, AdamConfig, GaussianKernel, GaussianSet, OptimState};

const OPACITY_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub position_final: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub color: f64,
    /// Adam denominator stabilizer shared by every block.
    pub eps: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 4e-4,
            position_final: 4e-6,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            color: 2.5e-3,
            eps: 1e-15,
        }
    }
}

/// Flat parameter blocks, kernel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub position: Vec<f64>,
    pub rotation: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub logit_opacity: Vec<f64>,
    pub color: Vec<f64>,
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(OPACITY_EPS, 1.0 - OPACITY_EPS);
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GaussianParams {
    pub fn from_set(set: &GaussianSet) -> Self {
        let mut p = GaussianParams {
            position: Vec::with_capacity(3 * set.len()),
            rotation: Vec::with_capacity(4 * set.len()),
            log_scale: Vec::with_capacity(3 * set.len()),
            logit_opacity: Vec::with_capacity(set.len()),
            color: Vec::with_capacity(3 * set.len()),
        };
        for k in &set.kernels {
            p.position.extend(k.position.iter());
            p.rotation.extend(rotation::to_array(&k.rotation));
            p.log_scale.extend(k.scale.iter().map(|s| s.ln()));
            p.logit_opacity.push(logit(k.opacity));
            p.color.extend(k.color.iter());
        }
        p
    }

    pub fn len(&self) -> usize {
        self.logit_opacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logit_opacity.is_empty()
    }

    pub fn kernel(&self, i: usize) -> GaussianKernel {
        let v3 = |b: &[f64]| Vector3::new(b[3 * i], b[3 * i + 1], b[3 * i + 2]);
        let q = &self.rotation[4 * i..4 * i + 4];
        GaussianKernel {
            position: v3(&self.position),
            rotation: rotation::unit_from_array(&[q[0], q[1], q[2], q[3]]),
            scale: v3(&self.log_scale).map(f64::exp),
            opacity: sigmoid(self.logit_opacity[i]),
            color: v3(&self.color),
        }
    }

    pub fn to_set(&self) -> GaussianSet {
        GaussianSet::new((0..self.len()).map(|i| self.kernel(i)).collect())
    }

    /// Renormalizes quaternions and clamps colors. Signs are left alone so
    /// the optimizer moments stay aligned with the parameters.
    pub fn project(&mut self) {
        for q in self.rotation.chunks_exact_mut(4) {
            let (u, _) = rotation::normalize_array(&[q[0], q[1], q[2], q[3]]);
            q.copy_from_slice(&u);
        }
        for c in &mut self.color {
            *c = c.clamp(0.0, 1.0);
        }
    }

    /// Chains attribute-space gradients to the parameter blocks.
    pub fn chain(&self, g: &GaussianGrads) -> GaussianParams {
        let n = self.len();
        let mut out = GaussianParams {
            position: Vec::with_capacity(3 * n),
            rotation: Vec::with_capacity(4 * n),
            log_scale: Vec::with_capacity(3 * n),
            logit_opacity: Vec::with_capacity(n),
            color: Vec::with_capacity(3 * n),
        };
        for i in 0..n {
            out.position.extend(g.position[i].iter());
            out.rotation.extend(g.rotation[i]);
            for a in 0..3 {
                out.log_scale.push(g.scale[i][a] * self.log_scale[3 * i + a].exp());
            }
            let o = sigmoid(self.logit_opacity[i]);
            out.logit_opacity.push(g.opacity[i] * o * (1.0 - o));
            out.color.extend(g.color[i].iter());
        }
        out
    }
}

/// Which attribute blocks receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub position: bool,
    pub rotation: bool,
    pub scale: bool,
    pub opacity: bool,
    pub color: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable {
        position: true,
        rotation: true,
        scale: true,
        opacity: true,
        color: true,
    };
    pub const MOTION: Trainable = Trainable {
        position: true,
        rotation: true,
        scale: false,
        opacity: false,
        color: false,
    };
}

/// Adam state for every block of a [`GaussianParams`].
#[derive(Debug, Clone)]
pub struct GaussianOptimizer {
    lr: LearningRates,
    trainable: Trainable,
    position: OptimState,
    rotation: OptimState,
    scale: OptimState,
    opacity: OptimState,
    color: OptimState,
}

impl GaussianOptimizer {
    pub fn new(n: usize, lr: LearningRates, trainable: Trainable) -> Self {
        let cfg = |rate: f64| AdamConfig {
            eps: lr.eps,
            ..AdamConfig::with_lr(rate)
        };
        GaussianOptimizer {
            lr,
            trainable,
            position: OptimState::new(3 * n, cfg(lr.position)),
            rotation: OptimState::new(4 * n, cfg(lr.rotation)),
            scale: OptimState::new(3 * n, cfg(lr.scale)),
            opacity: OptimState::new(n, cfg(lr.opacity)),
            color: OptimState::new(3 * n, cfg(lr.color)),
        }
    }

    /// One update; `progress` in [0, 1] drives the position learning-rate decay.
    pub fn step(&mut self, params: &mut GaussianParams, grads: &GaussianParams, progress: f64) -> Result<()> {
        let t = progress.clamp(0.0, 1.0);
        self.position.config.lr = (self.lr.position.ln() * (1.0 - t) + self.lr.position_final.ln() * t).exp();
        let tr = self.trainable;
        if tr.position {
            adam_step(&mut params.position, &grads.position, &mut self.position, "position")?;
        }
        if tr.rotation {
            adam_step(&mut params.rotation, &grads.rotation, &mut self.rotation, "rotation")?;
        }
        if tr.scale {
            adam_step(&mut params.log_scale, &grads.log_scale, &mut self.scale, "scale")?;
        }
        if tr.opacity {
            adam_step(&mut params.logit_opacity, &grads.logit_opacity, &mut self.opacity, "opacity")?;
        }
        if tr.color {
            adam_step(&mut params.color, &grads.color, &mut self.color, "color")?;
        }
        params.project();
        Ok(())
    }
}
