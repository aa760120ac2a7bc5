//! Front-to-back compositing of depth-sorted splats and its exact adjoint.
//!
//! Splats are sorted once by (depth, kernel index); every pixel composites
//! them in that order. Tiles only restrict each pixel to splats whose
//! conservative reach covers it, which leaves the result identical to a
//! per-pixel loop over all splats.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::project::{project_full, Projection, Splat2D, MIN_ALPHA};
use crate::scene::raster::pixel_center;
use crate::scene::rotation;
use crate::scene::{Camera, DepthMap, GaussianSet, Raster, RgbImage};

const TILE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: RgbImage,
    pub depth: DepthMap,
    pub alpha: Raster<f64>,
}

/// Loss gradients with respect to each output image.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGrads {
    pub color: RgbImage,
    pub depth: DepthMap,
    pub alpha: Raster<f64>,
}

impl OutputGrads {
    pub fn zeros(width: usize, height: usize) -> Self {
        OutputGrads {
            color: Raster::filled(width, height, [0.0; 3]),
            depth: Raster::filled(width, height, 0.0),
            alpha: Raster::filled(width, height, 0.0),
        }
    }
}

/// Per-kernel gradients. `rotation` is with respect to the raw quaternion
/// components (the kernel stores them normalized).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianGrads {
    pub position: Vec<Vector3<f64>>,
    pub rotation: Vec<[f64; 4]>,
    pub scale: Vec<Vector3<f64>>,
    pub opacity: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
}

impl GaussianGrads {
    pub fn zeros(n: usize) -> Self {
        GaussianGrads {
            position: vec![Vector3::zeros(); n],
            rotation: vec![[0.0; 4]; n],
            scale: vec![Vector3::zeros(); n],
            opacity: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
        }
    }
}

struct Prepared {
    projections: Vec<Projection>,
    tiles_x: usize,
    tiles_y: usize,
    /// Per tile, positions into `projections` in compositing order.
    bins: Vec<Vec<usize>>,
}

fn prepare(set: &GaussianSet, camera: &Camera) -> Prepared {
    let mut projections: Vec<Projection> = set
        .kernels
        .par_iter()
        .enumerate()
        .filter_map(|(i, k)| project_full(i, k, camera))
        .filter(|p| p.splat.radius >= 0.0)
        .collect();
    projections.sort_by(|a, b| a.splat.depth.total_cmp(&b.splat.depth).then(a.splat.index.cmp(&b.splat.index)));
    let (w, h) = (camera.width(), camera.height());
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    for (pos, p) in projections.iter().enumerate() {
        let s = &p.splat;
        // pixel centers sit at +0.5
        let lo = |m: f64| (m - s.radius - 0.5).ceil().max(0.0);
        let hi = |m: f64, n: usize| (m + s.radius - 0.5).floor().min(n as f64 - 1.0);
        let (x0, x1, y0, y1) = (lo(s.mean2d.x), hi(s.mean2d.x, w), lo(s.mean2d.y), hi(s.mean2d.y, h));
        if x1 < x0 || y1 < y0 {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / TILE, x1 as usize / TILE);
        let (ty0, ty1) = (y0 as usize / TILE, y1 as usize / TILE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[tx + ty * tiles_x].push(pos);
            }
        }
    }
    Prepared {
        projections,
        tiles_x,
        tiles_y,
        bins,
    }
}

/// Contributions at one pixel: (slot in `bin`, alpha_hat, transmittance before, gaussian value).
fn fragments(prep: &Prepared, bin: &[usize], p: &Vector2<f64>, out: &mut Vec<(usize, f64, f64, f64)>) -> f64 {
    out.clear();
    let mut t = 1.0;
    for (k, &pos) in bin.iter().enumerate() {
        let s = &prep.projections[pos].splat;
        // outside the conservative radius alpha is below MIN_ALPHA anyway
        if (p.x - s.mean2d.x).abs() > s.radius || (p.y - s.mean2d.y).abs() > s.radius {
            continue;
        }
        let (a, g) = s.alpha_at(p);
        if a < MIN_ALPHA {
            continue;
        }
        out.push((k, a, t, g));
        t *= 1.0 - a;
    }
    t
}

fn tile_pixels(tile: usize, tiles_x: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    let (tx, ty) = (tile % tiles_x, tile / tiles_x);
    let xs = tx * TILE..((tx + 1) * TILE).min(w);
    (ty * TILE..((ty + 1) * TILE).min(h)).flat_map(move |y| xs.clone().map(move |x| (x, y)))
}

pub fn rasterize(set: &GaussianSet, camera: &Camera, background: &[f64; 3]) -> RenderOutput {
    let prep = prepare(set, camera);
    let (w, h) = (camera.width(), camera.height());
    let tiles: Vec<Vec<((usize, usize), [f64; 3], f64, f64)>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let mut frags = Vec::new();
            tile_pixels(tile, prep.tiles_x, w, h)
                .map(|(x, y)| {
                    let (u, v) = pixel_center(x, y);
                    let t_final = fragments(&prep, &prep.bins[tile], &Vector2::new(u, v), &mut frags);
                    let mut c = [0.0; 3];
                    let mut z = 0.0;
                    for &(k, a, t, _) in &frags {
                        let s = &prep.projections[prep.bins[tile][k]].splat;
                        for ch in 0..3 {
                            c[ch] += a * t * s.color[ch];
                        }
                        z += a * t * s.depth;
                    }
                    for ch in 0..3 {
                        c[ch] += t_final * background[ch];
                    }
                    let alpha = 1.0 - t_final;
                    ((x, y), c, z / alpha.max(1e-8), alpha)
                })
                .collect()
        })
        .collect();
    let mut out = RenderOutput {
        color: Raster::filled(w, h, *background),
        depth: Raster::filled(w, h, 0.0),
        alpha: Raster::filled(w, h, 0.0),
    };
    for (xy, c, d, a) in tiles.into_iter().flatten() {
        let i = xy.0 + xy.1 * w;
        out.color.as_mut_slice()[i] = c;
        out.depth.as_mut_slice()[i] = d;
        out.alpha.as_mut_slice()[i] = a;
    }
    out
}

/// Screen-space gradient of one splat.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean: Vector2<f64>,
    /// Gradient with respect to the full conic matrix.
    conic: Matrix2<f64>,
    opacity: f64,
    color: [f64; 3],
    depth: f64,
}

pub fn rasterize_backward(set: &GaussianSet, camera: &Camera, background: &[f64; 3], grads: &OutputGrads) -> GaussianGrads {
    let prep = prepare(set, camera);
    let (w, h) = (camera.width(), camera.height());
    let n_proj = prep.projections.len();
    let tile_grads: Vec<Vec<(usize, ScreenGrad)>> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|tile| {
            let bin = &prep.bins[tile];
            let mut local = vec![ScreenGrad::default(); bin.len()];
            let mut frags = Vec::new();
            for (x, y) in tile_pixels(tile, prep.tiles_x, w, h) {
                let gc = grads.color[(x, y)];
                let gd = grads.depth[(x, y)];
                let ga = grads.alpha[(x, y)];
                if gc == [0.0; 3] && gd == 0.0 && ga == 0.0 {
                    continue;
                }
                let (u, v) = pixel_center(x, y);
                let p = Vector2::new(u, v);
                let t_final = fragments(&prep, bin, &p, &mut frags);
                let alpha = 1.0 - t_final;
                let z_sum: f64 = frags.iter().map(|&(k, a, t, _)| a * t * prep.projections[bin[k]].splat.depth).sum();
                let denom = alpha.max(1e-8);
                let gz = gd / denom;
                let ga_total = ga + if alpha > 1e-8 { -gd * z_sum / (alpha * alpha) } else { 0.0 };

                // suffix sums of the later fragments, built back to front
                let mut rest_c = background.map(|b| b * t_final);
                let mut rest_z = 0.0;
                for &(k, a, t, g) in frags.iter().rev() {
                    let s = &prep.projections[bin[k]].splat;
                    let wgt = a * t;
                    let mut d_alpha = 0.0;
                    for ch in 0..3 {
                        local[k].color[ch] += gc[ch] * wgt;
                        d_alpha += gc[ch] * (t * s.color[ch] - rest_c[ch] / (1.0 - a));
                    }
                    local[k].depth += gz * wgt;
                    d_alpha += gz * (t * s.depth - rest_z / (1.0 - a));
                    d_alpha += ga_total * t_final / (1.0 - a);
                    for ch in 0..3 {
                        rest_c[ch] += wgt * s.color[ch];
                    }
                    rest_z += wgt * s.depth;

                    if s.opacity * g >= super::project::MAX_ALPHA {
                        continue;
                    }
                    local[k].opacity += d_alpha * g;
                    // alpha = o exp(-q/2)
                    let d_q = -0.5 * a * d_alpha;
                    let d = p - s.mean2d;
                    local[k].mean -= s.conic * d * (2.0 * d_q);
                    local[k].conic += d * d.transpose() * d_q;
                }
            }
            bin.iter().copied().zip(local).collect()
        })
        .collect();

    let mut screen = vec![ScreenGrad::default(); n_proj];
    for tile in tile_grads {
        for (pos, g) in tile {
            let s = &mut screen[pos];
            s.mean += g.mean;
            s.conic += g.conic;
            s.opacity += g.opacity;
            for ch in 0..3 {
                s.color[ch] += g.color[ch];
            }
            s.depth += g.depth;
        }
    }

    let mut out = GaussianGrads::zeros(set.len());
    let k_mat = camera.intrinsics();
    let a_mat = k_mat.fixed_view::<2, 2>(0, 0).into_owned();
    for (proj, g) in prep.projections.iter().zip(&screen) {
        let i = proj.splat.index;
        let kernel = &set.kernels[i];
        out.opacity[i] = g.opacity;
        out.color[i] = Vector3::new(g.color[0], g.color[1], g.color[2]);

        let conic = proj.splat.conic;
        let g_cov = -(conic * g.conic * conic);
        let g_cov = (g_cov + g_cov.transpose()) * 0.5;
        let jw = proj.jac * proj.world_to_cam;
        let s2 = Matrix3::from_diagonal(&kernel.scale.component_mul(&kernel.scale));
        let sigma = proj.rot * s2 * proj.rot.transpose();
        let g_sigma = jw.transpose() * g_cov * jw;
        let v = proj.world_to_cam * sigma * proj.world_to_cam.transpose();
        let g_jac = g_cov * proj.jac * v * 2.0;

        // pixel = A (x/z, y/z) + c
        let t = proj.t_cam;
        let g_p = a_mat.transpose() * g_jac;
        let mut g_t = Vector3::zeros();
        let iz = 1.0 / t.z;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        // P = [[1/z, 0, -x/z^2], [0, 1/z, -y/z^2]]
        g_t.x += g_p[(0, 2)] * -iz2;
        g_t.y += g_p[(1, 2)] * -iz2;
        g_t.z += g_p[(0, 0)] * -iz2 + g_p[(1, 1)] * -iz2 + g_p[(0, 2)] * 2.0 * t.x * iz3 + g_p[(1, 2)] * 2.0 * t.y * iz3;
        let g_n = a_mat.transpose() * g.mean;
        g_t.x += g_n.x * iz;
        g_t.y += g_n.y * iz;
        g_t.z += -(g_n.x * t.x + g_n.y * t.y) * iz2;
        g_t.z += g.depth;
        out.position[i] = proj.world_to_cam.transpose() * g_t;

        let rs = proj.rot.transpose() * g_sigma * proj.rot;
        out.scale[i] = Vector3::new(
            2.0 * kernel.scale.x * rs[(0, 0)],
            2.0 * kernel.scale.y * rs[(1, 1)],
            2.0 * kernel.scale.z * rs[(2, 2)],
        );
        let g_rot = g_sigma * proj.rot * s2 * 2.0;
        let q = rotation::to_array(&kernel.rotation);
        out.rotation[i] = rotation::normalize_vjp(&q, &rotation::matrix_vjp(&q, &g_rot));
    }
    out
}

/// Screen-space splats in compositing order (for inspection and tests).
pub fn sorted_splats(set: &GaussianSet, camera: &Camera) -> Vec<Splat2D> {
    prepare(set, camera).projections.into_iter().map(|p| p.splat).collect()
}
