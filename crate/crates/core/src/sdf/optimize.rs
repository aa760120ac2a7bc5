//! First-frame fitting of the SDF and color grids.

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::grid::{ColorGrid, GridSpec, SdfGrid};
use super::loss::{color_depth_losses, eikonal_loss_grad, mesh_total_loss, RayPair, ALPHA_DEPTH, ALPHA_EIKONAL};
use super::render::{backward_ray, render_ray, trace_ray, RayGrad, RaySegment, RenderSettings};
use crate::error::{Error, Result};
use crate::scene::optim::exp_decay;
use crate::scene::raster::pixel_center;
use crate::scene::{adam_step, AdamConfig, Camera, DepthMap, FrameData, Mask, OptimState, Raster, RgbImage};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SdfConfig {
    pub grid_resolution: usize,
    pub iterations: usize,
    pub seed: u64,
    pub render: RenderSettings,
    pub alpha_depth: f64,
    pub alpha_eikonal: f64,
    /// Depth Huber threshold as a fraction of `far - near`.
    pub depth_delta_fraction: f64,
    /// Box padding as a fraction of the largest extent of the frame-0 points.
    pub bbox_padding: f64,
    pub lr_sdf: f64,
    pub lr_sdf_final: f64,
    pub lr_color: f64,
    pub lr_inv_std: f64,
    pub jitter: bool,
}

impl Default for SdfConfig {
    fn default() -> Self {
        SdfConfig {
            grid_resolution: 96,
            iterations: 2000,
            seed: 0,
            render: RenderSettings::default(),
            alpha_depth: ALPHA_DEPTH,
            alpha_eikonal: ALPHA_EIKONAL,
            depth_delta_fraction: 0.05,
            bbox_padding: 0.05,
            lr_sdf: 3e-4,
            lr_sdf_final: 3e-5,
            lr_color: 1e-2,
            lr_inv_std: 1e-2,
            jitter: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct MeshLosses {
    pub color: f64,
    pub depth: f64,
    pub eikonal: f64,
    pub total: f64,
}

/// Gradients of the mesh loss; `color` is RGB-interleaved per node.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrads {
    pub sdf: Vec<f64>,
    pub color: Vec<f64>,
    pub inv_std: f64,
}

/// Supervision for one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayTarget {
    pub segment: RaySegment,
    pub color: [f64; 3],
    pub depth: f64,
    /// Per-stratum jitter in [0, 1); midpoints when `None`.
    pub offsets: Option<Vec<f64>>,
}

/// Mesh loss of a batch and its gradient with respect to every grid value and `s`.
pub fn mesh_loss_and_grad(
    sdf: &SdfGrid,
    color: &ColorGrid,
    settings: &RenderSettings,
    rays: &[RayTarget],
    alpha_depth: f64,
    alpha_eikonal: f64,
) -> Result<(MeshLosses, FieldGrads)> {
    let traces: Vec<_> = rays
        .par_iter()
        .map(|r| trace_ray(sdf, color, &r.segment, settings, r.offsets.as_deref()))
        .collect();
    let pairs: Vec<RayPair> = rays
        .iter()
        .zip(&traces)
        .map(|(r, t)| RayPair {
            predicted_color: t.render.color,
            predicted_depth: t.render.depth,
            color: r.color,
            depth: r.depth,
        })
        .collect();
    let ((lc, ld), out_grads) = color_depth_losses(&pairs, settings.huber_delta, settings.depth_huber_delta)?;
    let ray_grads: Vec<RayGrad> = traces
        .par_iter()
        .zip(&out_grads)
        .map(|(t, (gc, gd))| backward_ray(t, settings, gc, alpha_depth * gd))
        .collect();
    let mut grads = FieldGrads {
        sdf: vec![0.0; sdf.values.len()],
        color: vec![0.0; 3 * color.values.len()],
        inv_std: 0.0,
    };
    for rg in &ray_grads {
        for &(i, g) in &rg.sdf {
            grads.sdf[i] += g;
        }
        for &(i, g) in &rg.color {
            for c in 0..3 {
                grads.color[3 * i + c] += g[c];
            }
        }
        grads.inv_std += rg.inv_std;
    }
    let points: Vec<Vector3<f64>> = traces.iter().flat_map(|t| t.points.iter().copied()).collect();
    let le = eikonal_loss_grad(sdf, &points, alpha_eikonal, &mut grads.sdf);
    let losses = MeshLosses {
        color: lc,
        depth: ld,
        eikonal: le,
        total: mesh_total_loss(lc, ld, le, alpha_depth, alpha_eikonal),
    };
    Ok((losses, grads))
}

/// Fills invalid depth pixels with the mean of already-filled neighbours,
/// growing outwards from the valid region.
pub fn fill_depth_holes(depth: &DepthMap, mask: &Mask) -> Result<DepthMap> {
    let (w, h) = depth.dims();
    let mut known: Vec<bool> = mask.as_slice().to_vec();
    if !known.iter().any(|&k| k) {
        return Err(Error::EmptyMask("frame 0"));
    }
    let mut values = depth.as_slice().to_vec();
    loop {
        let mut next = known.clone();
        let mut updated = values.clone();
        let mut changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = x + y * w;
                if known[i] {
                    continue;
                }
                let mut sum = 0.0;
                let mut n = 0;
                for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        let j = nx as usize + ny as usize * w;
                        if known[j] {
                            sum += values[j];
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    updated[i] = sum / n as f64;
                    next[i] = true;
                    changed = true;
                }
            }
        }
        values = updated;
        known = next;
        if !changed {
            break;
        }
    }
    Ok(Raster::from_vec(w, h, values))
}

/// Axis-aligned box of the back-projected valid depth, padded by
/// `padding` times its largest extent on every side.
pub fn bbox_from_depth(frame: &FrameData, resolution: usize, padding: f64) -> Result<GridSpec> {
    let pixels = frame.valid_pixels();
    if pixels.is_empty() {
        return Err(Error::EmptyMask("frame 0"));
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (x, y) in pixels {
        let (u, v) = pixel_center(x, y);
        let p = frame.camera.unproject(&Vector2::new(u, v), frame.depth[(x, y)]);
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let pad = (hi - lo).max().max(1e-6) * padding;
    GridSpec::new([resolution; 3], lo.add_scalar(-pad), hi.add_scalar(pad))
}

/// One-frame projective signed distance `D(u) - z`, positive between camera
/// and surface. Nodes projecting outside the image use the nearest border depth.
pub fn init_from_depth(frame: &FrameData, spec: GridSpec) -> Result<SdfGrid> {
    let filled = fill_depth_holes(&frame.depth, &frame.mask)?;
    let cam = &frame.camera;
    let limit = (spec.max - spec.min).norm();
    let (w, h) = (cam.width() as f64, cam.height() as f64);
    Ok(SdfGrid::from_fn(spec, |x| {
        let pc = cam.to_camera(x);
        if pc.z <= 1e-9 {
            return limit;
        }
        let u = (cam.fx() * pc.x / pc.z + cam.cx()).clamp(0.0, w);
        let v = (cam.fy() * pc.y / pc.z + cam.cy()).clamp(0.0, h);
        let d = crate::scene::raster::bilinear(&filled, u, v);
        (d - pc.z).clamp(-limit, limit)
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdfFit {
    pub sdf: SdfGrid,
    pub color: ColorGrid,
    /// Settings with the learned sharpness.
    pub settings: RenderSettings,
    /// Losses of every iteration.
    pub history: Vec<MeshLosses>,
}

fn prepare_settings(frame: &FrameData, config: &SdfConfig) -> Result<RenderSettings> {
    let mut settings = config.render;
    settings.depth_huber_delta = config.depth_delta_fraction * (frame.camera.far() - frame.camera.near());
    if settings.samples_per_ray < 2 || settings.rays_per_batch < 1 || !(settings.inv_std > 0.0) || !(settings.huber_delta > 0.0) {
        return Err(Error::Config(format!("invalid render settings {settings:?}")));
    }
    Ok(settings)
}

/// Fits SDF and color grids to one frame by Adam on random ray batches.
pub fn optimize_sdf(frame: &FrameData, config: &SdfConfig) -> Result<SdfFit> {
    frame.validate()?;
    let mut settings = prepare_settings(frame, config)?;
    let spec = bbox_from_depth(frame, config.grid_resolution, config.bbox_padding)?;
    let mut sdf = init_from_depth(frame, spec)?;
    let mut color = ColorGrid::filled(spec, [0.5; 3]);
    let candidates: Vec<(RaySegment, [f64; 3], f64)> = frame
        .valid_pixels()
        .into_iter()
        .filter_map(|(x, y)| {
            let (u, v) = pixel_center(x, y);
            RaySegment::through_pixel(&frame.camera, &Vector2::new(u, v), &spec)
                .map(|s| (s, frame.image[(x, y)], frame.depth[(x, y)]))
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::EmptyMask("frame 0 rays inside the grid"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sdf_state = OptimState::new(sdf.values.len(), AdamConfig::with_lr(config.lr_sdf));
    let mut color_state = OptimState::new(3 * color.values.len(), AdamConfig::with_lr(config.lr_color));
    let mut s_state = OptimState::new(1, AdamConfig::with_lr(config.lr_inv_std));
    let mut log_s = [settings.inv_std.ln()];
    let mut history = Vec::with_capacity(config.iterations);
    let n = settings.samples_per_ray;
    for it in 0..config.iterations {
        let rays: Vec<RayTarget> = (0..settings.rays_per_batch)
            .map(|_| {
                let (segment, c, d) = candidates[rng.random_range(0..candidates.len())];
                let offsets = config.jitter.then(|| (0..n).map(|_| rng.random::<f64>()).collect());
                RayTarget {
                    segment,
                    color: c,
                    depth: d,
                    offsets,
                }
            })
            .collect();
        let (losses, grads) = mesh_loss_and_grad(&sdf, &color, &settings, &rays, config.alpha_depth, config.alpha_eikonal)?;
        if !losses.total.is_finite() {
            return Err(Error::Diverged {
                stage: "sdf".into(),
                iteration: it,
                detail: format!("loss {losses:?}"),
            });
        }
        history.push(losses);
        let diverged = |e: Error| Error::Diverged {
            stage: "sdf".into(),
            iteration: it,
            detail: e.to_string(),
        };
        sdf_state.config.lr = exp_decay(config.lr_sdf, config.lr_sdf_final, it, config.iterations);
        adam_step(&mut sdf.values, &grads.sdf, &mut sdf_state, "sdf").map_err(diverged)?;
        adam_step(color.values.as_flattened_mut(), &grads.color, &mut color_state, "color").map_err(diverged)?;
        for v in color.values.as_flattened_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let g_log_s = grads.inv_std * settings.inv_std;
        adam_step(&mut log_s, &[g_log_s], &mut s_state, "inv_std").map_err(diverged)?;
        settings.inv_std = log_s[0].exp();
    }
    Ok(SdfFit {
        sdf,
        color,
        settings,
        history,
    })
}

/// Renders color and depth at every pixel center; rays missing the grid get
/// the background and `far`.
pub fn render_image(sdf: &SdfGrid, color: &ColorGrid, camera: &Camera, settings: &RenderSettings) -> (RgbImage, DepthMap) {
    let (w, h) = (camera.width(), camera.height());
    let pixels: Vec<_> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (u, v) = pixel_center(i % w, i / w);
            let seg = RaySegment::through_pixel(camera, &Vector2::new(u, v), &sdf.spec);
            let r = render_ray(sdf, color, seg.as_ref(), settings, camera.far());
            (r.color, r.depth)
        })
        .collect();
    let (c, d): (Vec<_>, Vec<_>) = pixels.into_iter().unzip();
    (Raster::from_vec(w, h, c), Raster::from_vec(w, h, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::grad_check;
    use nalgebra::Isometry3;

    fn toy_scene() -> (SdfGrid, ColorGrid, RenderSettings, Vec<RayTarget>) {
        let spec = GridSpec::new([8; 3], Vector3::new(-0.6, -0.6, 1.6), Vector3::new(0.6, 0.6, 2.8)).unwrap();
        let cam = Camera::pinhole(10.0, 10.0, 8.0, 8.0, 16, 16, Isometry3::identity(), 0.5, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sdf = SdfGrid::from_fn(spec, |x| 2.2 - x.z + 0.1 * (3.0 * x.x).sin() + 0.05 * rng.random::<f64>());
        let mut color = ColorGrid::filled(spec, [0.0; 3]);
        for c in &mut color.values {
            *c = [rng.random(), rng.random(), rng.random()];
        }
        let mut settings = RenderSettings::default();
        settings.samples_per_ray = 16;
        settings.inv_std = 8.0;
        settings.huber_delta = 0.1;
        settings.depth_huber_delta = 0.1;
        settings.background = [0.2, 0.3, 0.4];
        let rays = (0..16)
            .filter_map(|k| {
                let px = Vector2::new(6.0 + (k % 4) as f64 * 1.3, 6.1 + (k / 4) as f64 * 1.2);
                let seg = RaySegment::through_pixel(&cam, &px, &spec)?;
                Some(RayTarget {
                    segment: seg,
                    color: [rng.random(), rng.random(), rng.random()],
                    depth: 2.0 + rng.random::<f64>() * 0.3,
                    offsets: Some((0..16).map(|_| rng.random()).collect()),
                })
            })
            .collect::<Vec<_>>();
        assert_eq!(rays.len(), 16);
        (sdf, color, settings, rays)
    }

    #[test]
    fn gradients_pass_grad_check() {
        let (sdf, color, settings, rays) = toy_scene();
        let ns = sdf.values.len();
        let nc = 3 * color.values.len();
        let mut params: Vec<f64> = sdf.values.clone();
        params.extend(color.values.as_flattened());
        params.push(settings.inv_std);
        let eval = |p: &[f64]| {
            let mut g = sdf.clone();
            g.values.copy_from_slice(&p[..ns]);
            let mut c = color.clone();
            c.values.as_flattened_mut().copy_from_slice(&p[ns..ns + nc]);
            let mut s = settings;
            s.inv_std = p[ns + nc];
            let (l, gr) = mesh_loss_and_grad(&g, &c, &s, &rays, ALPHA_DEPTH, ALPHA_EIKONAL).unwrap();
            let mut flat = gr.sdf;
            flat.extend(gr.color);
            flat.push(gr.inv_std);
            (l.total, flat)
        };
        let check = grad_check(eval, &params, 1e-6).unwrap();
        assert!(
            check.max_rel_error < 1e-4,
            "rel {} at {} ({} vs {})",
            check.max_rel_error,
            check.worst_index,
            check.analytic[check.worst_index],
            check.numeric[check.worst_index]
        );
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let cam = Camera::pinhole(8.0, 8.0, 4.0, 4.0, 8, 8, Isometry3::identity(), 1.0, 5.0).unwrap();
        let frame = FrameData::new(
            Raster::filled(8, 8, [0.3; 3]),
            Raster::filled(8, 8, 3.0),
            Raster::filled(8, 8, true),
            cam,
            0,
        )
        .unwrap();
        let config = SdfConfig {
            grid_resolution: 8,
            iterations: 0,
            ..SdfConfig::default()
        };
        let fit = optimize_sdf(&frame, &config).unwrap();
        let spec = bbox_from_depth(&frame, 8, 0.05).unwrap();
        assert_eq!(fit.sdf, init_from_depth(&frame, spec).unwrap());
        assert!(fit.color.values.iter().all(|c| *c == [0.5; 3]));
        assert!(fit.history.is_empty());
    }

    #[test]
    fn holes_are_filled_from_neighbours() {
        let depth = Raster::from_fn(4, 1, |x, _| [1.0, 0.0, 0.0, 3.0][x]);
        let mask = Raster::from_fn(4, 1, |x, _| x == 0 || x == 3);
        let f = fill_depth_holes(&depth, &mask).unwrap();
        assert_eq!(f.as_slice(), &[1.0, 1.0, 3.0, 3.0]);
        assert!(fill_depth_holes(&depth, &Raster::filled(4, 1, false)).is_err());
    }
}
