//! First-frame Gaussian fit with scale and shift hinges, no densification.

use super::bind::{bind_gaussians, first_frame_loss, scale_loss_grad, shift_loss_grad, BindInit, BindingMap};
use super::bind::{BETA_DEPTH, BETA_SCALE, BETA_SHIFT, GAMMA_SCALE, GAMMA_SHIFT};
use super::mesh::TriangleMesh;
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::scene::{FrameData, GaussianSet};
use crate::splat::{image_losses, rasterize, rasterize_backward, GaussianOptimizer, GaussianParams, LearningRates, Trainable};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SurfaceConfig {
    pub iterations: usize,
    pub gamma_scale: f64,
    pub gamma_shift: f64,
    /// Weights of depth, scale and shift terms.
    pub betas: [f64; 3],
    pub color_delta: f64,
    /// Depth Huber threshold as a fraction of `far - near`.
    pub depth_delta_fraction: f64,
    pub background: [f64; 3],
    pub init: BindInit,
    pub lr: LearningRates,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            iterations: 3000,
            gamma_scale: GAMMA_SCALE,
            gamma_shift: GAMMA_SHIFT,
            betas: [BETA_DEPTH, BETA_SCALE, BETA_SHIFT],
            color_delta: 0.1,
            depth_delta_fraction: 0.05,
            background: [0.0; 3],
            init: BindInit::default(),
            lr: LearningRates::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct SurfaceLosses {
    pub color: f64,
    pub depth: f64,
    pub scale: f64,
    pub shift: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFit {
    pub set: GaussianSet,
    pub binding: BindingMap,
    pub history: Vec<SurfaceLosses>,
    /// Masked PSNR of the final render against the frame.
    pub psnr: f64,
}

/// Losses of a set against a frame and the gradient in parameter space.
pub fn surface_loss_and_grad(
    params: &GaussianParams,
    frame: &FrameData,
    mesh: &TriangleMesh,
    binding: &BindingMap,
    config: &SurfaceConfig,
) -> Result<(SurfaceLosses, GaussianParams)> {
    let set = params.to_set();
    let cam = &frame.camera;
    let depth_delta = config.depth_delta_fraction * (cam.far() - cam.near());
    let render = rasterize(&set, cam, &config.background);
    let ((lc, ld), out_grads) = image_losses(&render, frame, config.color_delta, depth_delta, config.betas[0])?;
    let mut grads = rasterize_backward(&set, cam, &config.background, &out_grads);
    let (ls, gs) = scale_loss_grad(&set, binding, mesh, config.gamma_scale);
    let (lh, gh) = shift_loss_grad(&set, binding, mesh, config.gamma_shift);
    for i in 0..set.len() {
        grads.scale[i] += gs[i] * config.betas[1];
        grads.position[i] += gh[i] * config.betas[2];
    }
    let losses = SurfaceLosses {
        color: lc,
        depth: ld,
        scale: ls,
        shift: lh,
        total: first_frame_loss(lc, ld, ls, lh, config.betas),
    };
    Ok((losses, params.chain(&grads)))
}

/// Binds one kernel per triangle and fits all attributes to `frame`.
pub fn optimize_first_frame(frame: &FrameData, mesh: &TriangleMesh, config: &SurfaceConfig) -> Result<SurfaceFit> {
    let (set, binding) = bind_gaussians(mesh, Some(frame), &config.init)?;
    fit_gaussians(frame, mesh, set, binding, config)
}

/// Fits all attributes of an already initialized set to `frame`.
pub fn fit_gaussians(frame: &FrameData, mesh: &TriangleMesh, set: GaussianSet, binding: BindingMap, config: &SurfaceConfig) -> Result<SurfaceFit> {
    frame.validate()?;
    if binding.len() != set.len() {
        return Err(Error::Data(format!("{} kernels but {} bindings", set.len(), binding.len())));
    }
    let mut params = GaussianParams::from_set(&set);
    let mut opt = GaussianOptimizer::new(params.len(), config.lr, Trainable::ALL);
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (losses, grads) = surface_loss_and_grad(&params, frame, mesh, &binding, config)?;
        let diverged = |detail: String| Error::Diverged {
            stage: "surface".into(),
            iteration: it,
            detail,
        };
        if !losses.total.is_finite() {
            return Err(diverged(format!("loss {losses:?}")));
        }
        history.push(losses);
        opt.step(&mut params, &grads, it as f64 / config.iterations.max(1) as f64)
            .map_err(|e| diverged(e.to_string()))?;
    }
    let set = params.to_set();
    let render = rasterize(&set, &frame.camera, &config.background);
    let psnr = psnr(&render.color, &frame.image, &frame.mask)?;
    Ok(SurfaceFit {
        set,
        binding,
        history,
        psnr,
    })
}
