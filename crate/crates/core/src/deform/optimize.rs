//! Per-frame motion fit: photometric and depth terms plus the three regularizers.

use log::warn;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::graph::{build_neighborhoods, NeighborGraph};
use super::loss::{anchors, arap_loss_grad, deform_total_loss, iso_loss_grad, rot_loss_grad, ArapWeights};
use super::loss::{LAMBDA_ARAP, LAMBDA_DEPTH, LAMBDA_ISO, LAMBDA_ROT};
use crate::error::{Error, Result};
use crate::scene::rotation::{self, Quat};
use crate::scene::{FrameData, GaussianSet};
use crate::splat::{image_losses, rasterize, rasterize_backward, GaussianOptimizer, GaussianParams, LearningRates, Trainable};
use crate::surface::{BindingMap, TriangleMesh};
use crate::tracks::{assign_regions, RegionAssignment, SparseTrackSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    pub iterations: usize,
    /// Weights of the depth, ARAP, rotation and isometry terms.
    pub lambdas: [f64; 4],
    /// Graph neighbors per kernel.
    pub r: usize,
    /// Region radius; `None` uses `rho_factor` times the median mesh edge length.
    pub rho: Option<f64>,
    pub rho_factor: f64,
    /// Normalized ARAP weights below this are dropped.
    pub weight_floor: f64,
    pub color_delta: f64,
    pub depth_delta_fraction: f64,
    pub background: [f64; 3],
    pub lr: LearningRates,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            iterations: 300,
            lambdas: [LAMBDA_DEPTH, LAMBDA_ARAP, LAMBDA_ROT, LAMBDA_ISO],
            r: 8,
            rho: None,
            rho_factor: 10.0,
            weight_floor: 1e-6,
            color_delta: 0.1,
            depth_delta_fraction: 0.05,
            background: [0.0; 3],
            lr: LearningRates {
                position: 1e-2,
                position_final: 1e-3,
                rotation: 5e-3,
                eps: 1e-10,
                ..LearningRates::default()
            },
        }
    }
}

/// Positions and rotations of every kernel at one frame; the remaining
/// attributes stay at their first-frame values.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationState {
    pub frame: usize,
    pub positions: Vec<Vector3<f64>>,
    pub rotations: Vec<Quat>,
}

impl DeformationState {
    pub fn from_set(frame: usize, set: &GaussianSet) -> Self {
        DeformationState {
            frame,
            positions: set.positions(),
            rotations: set.kernels.iter().map(|k| rotation::to_array(&rotation::canonical(&k.rotation))).collect(),
        }
    }

    fn from_params(frame: usize, p: &GaussianParams) -> Self {
        DeformationState {
            frame,
            positions: p.position.chunks_exact(3).map(Vector3::from_column_slice).collect(),
            rotations: p.rotation.chunks_exact(4).map(|q| rotation::canonical_array(&[q[0], q[1], q[2], q[3]]).0).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `base` with this state's positions and rotations.
    pub fn apply(&self, base: &GaussianSet) -> GaussianSet {
        let mut set = base.clone();
        for (k, (p, q)) in set.kernels.iter_mut().zip(self.positions.iter().zip(&self.rotations)) {
            k.position = *p;
            k.rotation = rotation::unit_from_array(q);
        }
        set
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeformLosses {
    pub color: f64,
    pub depth: f64,
    pub arap: f64,
    pub rot: f64,
    pub iso: f64,
    pub total: f64,
}

/// Everything fixed at frame 0: the fitted kernels, their neighborhoods and
/// the keypoint regions.
#[derive(Debug, Clone)]
pub struct DeformModel {
    pub base: GaussianSet,
    pub rest: Vec<Vector3<f64>>,
    pub graph: NeighborGraph,
    pub regions: Option<RegionAssignment>,
    pub weights: Option<ArapWeights>,
    pub tracks: Option<SparseTrackSet>,
}

impl DeformModel {
    pub fn new(
        base: GaussianSet,
        binding: &BindingMap,
        mesh: &TriangleMesh,
        tracks: Option<SparseTrackSet>,
        config: &DeformConfig,
    ) -> Result<Self> {
        let rest = base.positions();
        let graph = build_neighborhoods(&rest, binding, mesh, config.r, None)?;
        let rho = config.rho.unwrap_or(config.rho_factor * mesh.median_edge_length());
        let regions = match &tracks {
            Some(t) if !t.is_empty() => match assign_regions(&rest, t, rho) {
                Ok(r) => Some(r),
                Err(e) => {
                    warn!("local rigidity disabled: {e}");
                    None
                }
            },
            _ => None,
        };
        let weights = regions
            .as_ref()
            .zip(tracks.as_ref())
            .map(|(r, t)| ArapWeights::new(&rest, r, t, config.weight_floor));
        Ok(DeformModel {
            base,
            rest,
            graph,
            regions,
            weights,
            tracks,
        })
    }
}

/// Losses at the given parameters and their gradient in parameter space.
pub fn deform_loss_and_grad(
    params: &GaussianParams,
    prev: &DeformationState,
    frame: &FrameData,
    model: &DeformModel,
    anchors: &[Option<(Vector3<f64>, Vector3<f64>)>],
    config: &DeformConfig,
) -> Result<(DeformLosses, GaussianParams)> {
    let cam = &frame.camera;
    // frozen attributes come from the base set so they never pick up round-off
    let set = DeformationState::from_params(frame.index, params).apply(&model.base);
    let render = rasterize(&set, cam, &config.background);
    let depth_delta = config.depth_delta_fraction * (cam.far() - cam.near());
    let l = config.lambdas;
    let ((lc, ld), out) = image_losses(&render, frame, config.color_delta, depth_delta, l[0])?;
    let mut g = params.chain(&rasterize_backward(&set, cam, &config.background, &out));
    // the rendered rotations are sign-canonical, the parameters are not
    for (gq, q) in g.rotation.chunks_exact_mut(4).zip(params.rotation.chunks_exact(4)) {
        let (_, sign) = rotation::canonical_array(&[q[0], q[1], q[2], q[3]]);
        for v in gq {
            *v *= sign;
        }
    }

    let positions = set.positions();
    let (la, ga) = match &model.weights {
        Some(w) if l[1] != 0.0 => arap_loss_grad(&positions, &prev.positions, anchors, w),
        _ => (0.0, Vec::new()),
    };
    let (li, gi) = if l[3] != 0.0 { iso_loss_grad(&positions, &model.rest, &model.graph) } else { (0.0, Vec::new()) };
    for (i, gp) in g.position.chunks_exact_mut(3).enumerate() {
        for c in 0..3 {
            gp[c] += l[1] * ga.get(i).map_or(0.0, |v| v[c]) + l[3] * gi.get(i).map_or(0.0, |v| v[c]);
        }
    }
    let lr = if l[2] != 0.0 {
        let raw: Vec<Quat> = params.rotation.chunks_exact(4).map(|q| [q[0], q[1], q[2], q[3]]).collect();
        let (lr, gr) = rot_loss_grad(&raw, &prev.rotations, &model.graph);
        for (gq, d) in g.rotation.chunks_exact_mut(4).zip(&gr) {
            for c in 0..4 {
                gq[c] += l[2] * d[c];
            }
        }
        lr
    } else {
        0.0
    };
    let losses = DeformLosses {
        color: lc,
        depth: ld,
        arap: la,
        rot: lr,
        iso: li,
        total: deform_total_loss(lc, ld, la, lr, li, l),
    };
    Ok((losses, g))
}

/// Fits frame `frame.index` starting from the state of the previous frame.
pub fn optimize_frame(
    prev: &DeformationState,
    frame: &FrameData,
    model: &DeformModel,
    config: &DeformConfig,
) -> Result<(DeformationState, Vec<DeformLosses>)> {
    let t = frame.index;
    if t == 0 || prev.frame + 1 != t {
        return Err(Error::Data(format!("frame {t} cannot follow a state for frame {}", prev.frame)));
    }
    if prev.len() != model.base.len() {
        return Err(Error::Data(format!("state has {} kernels, model {}", prev.len(), model.base.len())));
    }
    frame.validate()?;
    let anchors = match &model.tracks {
        Some(tr) => anchors(tr, t),
        None => Vec::new(),
    };
    if model.weights.is_some() && config.lambdas[1] != 0.0 && anchors.iter().all(Option::is_none) {
        warn!("frame {t}: no keypoint observed at {} and {t}; local rigidity skipped", t - 1);
    }
    let mut params = GaussianParams::from_set(&prev.apply(&model.base));
    let mut opt = GaussianOptimizer::new(params.len(), config.lr, Trainable::MOTION);
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (losses, grads) = deform_loss_and_grad(&params, prev, frame, model, &anchors, config)?;
        let diverged = |detail: String| Error::Diverged {
            stage: "deform",
            iteration: it,
            detail: format!("frame {t}: {detail}"),
        };
        if !losses.total.is_finite() {
            return Err(diverged(format!("loss {losses:?}")));
        }
        history.push(losses);
        opt.step(&mut params, &grads, it as f64 / config.iterations.max(1) as f64)
            .map_err(|e| diverged(e.to_string()))?;
    }
    Ok((DeformationState::from_params(t, &params), history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Camera, Raster};
    use crate::surface::{bind_gaussians, BindInit};
    use nalgebra::Isometry3;

    fn plane_mesh(n: usize) -> TriangleMesh {
        let mut v = Vec::new();
        for y in 0..=n {
            for x in 0..=n {
                let (u, w) = (x as f64 / n as f64 - 0.5, y as f64 / n as f64 - 0.5);
                // tilted so no two kernels share a depth
                v.push(Vector3::new(u, w, 2.0 + 0.3 * u + 0.17 * w));
            }
        }
        let id = |x: usize, y: usize| y * (n + 1) + x;
        let mut t = Vec::new();
        for y in 0..n {
            for x in 0..n {
                t.push([id(x, y), id(x + 1, y + 1), id(x + 1, y)]);
                t.push([id(x, y), id(x, y + 1), id(x + 1, y + 1)]);
            }
        }
        TriangleMesh::new(v, t).unwrap()
    }

    #[test]
    fn static_frame_stays_put_and_frozen_attributes_are_untouched() {
        let mesh = plane_mesh(6);
        let (mut set, binding) = bind_gaussians(&mesh, None, &BindInit::default()).unwrap();
        for (i, k) in set.kernels.iter_mut().enumerate() {
            k.color = Vector3::new((i % 5) as f64 / 5.0, (i % 3) as f64 / 3.0, 0.5);
        }
        let cam = Camera::pinhole(24.0, 24.0, 12.0, 12.0, 24, 24, Isometry3::identity(), 0.5, 4.0).unwrap();
        let render = rasterize(&set, &cam, &[0.0; 3]);
        let mask = render.alpha.map(|a| *a > 0.5);
        let depth = Raster::from_fn(24, 24, |x, y| if mask[(x, y)] { render.depth[(x, y)] } else { 1.0 });
        let frame = FrameData::new(render.color.clone(), depth, mask, cam, 1).unwrap();
        let model = DeformModel::new(set.clone(), &binding, &mesh, None, &DeformConfig::default()).unwrap();
        let prev = DeformationState::from_set(0, &set);
        // the rotation and isometry terms are non-smooth, so Adam jitters at the step size
        let config = DeformConfig {
            iterations: 40,
            lr: LearningRates {
                position: 1e-3,
                position_final: 1e-4,
                rotation: 1e-3,
                ..DeformConfig::default().lr
            },
            ..DeformConfig::default()
        };
        let (state, history) = optimize_frame(&prev, &frame, &model, &config).unwrap();
        assert_eq!(history.len(), 40);
        let rms = (state.positions.iter().zip(&prev.positions).map(|(a, b)| (a - b).norm_squared()).sum::<f64>() / state.len() as f64).sqrt();
        assert!(rms < 1e-3, "{rms}");
        let out = state.apply(&model.base);
        for (a, b) in out.kernels.iter().zip(&set.kernels) {
            assert_eq!(a.scale, b.scale);
            assert_eq!(a.opacity, b.opacity);
            assert_eq!(a.color, b.color);
        }
        assert!(optimize_frame(&state, &frame, &model, &config).is_err());
    }
}
