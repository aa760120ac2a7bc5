//! Shi-Tomasi corners with normalized-patch descriptors, and mutual
//! nearest-neighbor matching.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::scene::raster::to_gray;
use crate::scene::{Mask, Raster, RgbImage};

pub const PATCH: usize = 11;
const HALF: usize = PATCH / 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Non-maximum suppression radius in pixels.
    pub nms_px: usize,
    /// Structure-tensor window half-width.
    pub block: usize,
    /// Minimum response relative to the strongest response in the image.
    pub quality: f64,
    pub max_keypoints: usize,
    /// Lowe ratio threshold.
    pub ratio: f64,
    /// Matches displaced by this many pixels or more are rejected.
    pub max_disp: f64,
    pub max_gap: usize,
    pub min_len: usize,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            nms_px: 3,
            block: 2,
            quality: 0.02,
            max_keypoints: 400,
            ratio: 0.8,
            max_disp: 8.0,
            max_gap: 2,
            min_len: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    /// Continuous pixel coordinates (pixel centers at +0.5).
    pub position: Vector2<f64>,
    pub response: f64,
    /// Zero-mean, unit-norm `PATCH x PATCH` intensity patch.
    pub descriptor: Vec<f64>,
}

fn sobel(gray: &Raster<f64>) -> (Raster<f64>, Raster<f64>) {
    let (w, h) = gray.dims();
    let at = |x: isize, y: isize| gray[(x.clamp(0, w as isize - 1) as usize, y.clamp(0, h as isize - 1) as usize)];
    let gx = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1) - at(x - 1, y - 1) - 2.0 * at(x - 1, y) - at(x - 1, y + 1)) / 8.0
    });
    let gy = Raster::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1) - at(x - 1, y - 1) - 2.0 * at(x, y - 1) - at(x + 1, y - 1)) / 8.0
    });
    (gx, gy)
}

/// Smaller eigenvalue of the Gaussian-weighted structure tensor at every pixel.
pub fn min_eigen_response(gray: &Raster<f64>, block: usize) -> Raster<f64> {
    let (w, h) = gray.dims();
    let (gx, gy) = sobel(gray);
    let b = block as isize;
    let sigma2 = 2.0 * (0.5 * block as f64).max(0.5).powi(2);
    Raster::from_fn(w, h, |x, y| {
        let (mut a, mut bb, mut c) = (0.0, 0.0, 0.0);
        for dy in -b..=b {
            for dx in -b..=b {
                let (u, v) = (x as isize + dx, y as isize + dy);
                if u < 0 || v < 0 || u >= w as isize || v >= h as isize {
                    continue;
                }
                let (ix, iy) = (gx[(u as usize, v as usize)], gy[(u as usize, v as usize)]);
                let wt = (-((dx * dx + dy * dy) as f64) / sigma2).exp();
                a += wt * ix * ix;
                bb += wt * ix * iy;
                c += wt * iy * iy;
            }
        }
        let tr = 0.5 * (a + c);
        let det = a * c - bb * bb;
        (tr - (tr * tr - det).max(0.0).sqrt()).max(0.0)
    })
}

fn parabola_offset(l: f64, c: f64, r: f64) -> f64 {
    let denom = l - 2.0 * c + r;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (l - r) / denom).clamp(-0.5, 0.5)
}

fn descriptor(gray: &Raster<f64>, x: usize, y: usize) -> Option<Vec<f64>> {
    let mut d = Vec::with_capacity(PATCH * PATCH);
    for v in y - HALF..=y + HALF {
        for u in x - HALF..=x + HALF {
            d.push(gray[(u, v)]);
        }
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    d.iter_mut().for_each(|v| *v -= mean);
    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    d.iter_mut().for_each(|v| *v /= norm);
    Some(d)
}

/// Corners whose descriptor patch lies inside the image and whose pixel is
/// mask-true, strongest first.
pub fn detect_keypoints(image: &RgbImage, mask: &Mask, config: &TrackConfig) -> Vec<Keypoint> {
    let (w, h) = image.dims();
    if w < PATCH || h < PATCH {
        return Vec::new();
    }
    let gray = to_gray(image);
    let resp = min_eigen_response(&gray, config.block);
    let peak = resp.as_slice().iter().cloned().fold(0.0, f64::max);
    let threshold = (config.quality * peak).max(1e-12);
    let r = config.nms_px as isize;
    let mut found = Vec::new();
    for y in HALF..h - HALF {
        for x in HALF..w - HALF {
            let v = resp[(x, y)];
            if v <= threshold || !mask[(x, y)] {
                continue;
            }
            let idx = y * w + x;
            let mut is_max = true;
            'nms: for dy in -r..=r {
                for dx in -r..=r {
                    let (u, q) = (x as isize + dx, y as isize + dy);
                    if (dx == 0 && dy == 0) || u < 0 || q < 0 || u >= w as isize || q >= h as isize {
                        continue;
                    }
                    let o = resp[(u as usize, q as usize)];
                    let oidx = q as usize * w + u as usize;
                    // ties go to the lower raster index
                    if o > v || (o == v && oidx < idx) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if !is_max {
                continue;
            }
            let Some(desc) = descriptor(&gray, x, y) else { continue };
            let ox = parabola_offset(resp[(x - 1, y)], v, resp[(x + 1, y)]);
            let oy = parabola_offset(resp[(x, y - 1)], v, resp[(x, y + 1)]);
            found.push(Keypoint {
                position: Vector2::new(x as f64 + 0.5 + ox, y as f64 + 0.5 + oy),
                response: v,
                descriptor: desc,
            });
        }
    }
    found.sort_by(|a, b| b.response.total_cmp(&a.response));
    found.truncate(config.max_keypoints);
    found
}

fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Best candidate in `to` for each entry of `from`, if it passes the gate and ratio test.
fn one_way(from: &[Keypoint], to: &[Keypoint], config: &TrackConfig) -> Vec<Option<usize>> {
    from.iter()
        .map(|a| {
            let mut best: Option<(f64, usize)> = None;
            let mut second = f64::INFINITY;
            for (j, b) in to.iter().enumerate() {
                if (a.position - b.position).norm() >= config.max_disp {
                    continue;
                }
                let d = descriptor_distance(&a.descriptor, &b.descriptor);
                match best {
                    Some((bd, _)) if d >= bd => second = second.min(d),
                    _ => {
                        if let Some((bd, _)) = best {
                            second = bd;
                        }
                        best = Some((d, j));
                    }
                }
            }
            best.filter(|&(d, _)| d < config.ratio * second).map(|(_, j)| j)
        })
        .collect()
}

/// Mutual nearest neighbors `(index in a, index in b)`, ordered by the index in `a`.
pub fn match_keypoints(a: &[Keypoint], b: &[Keypoint], config: &TrackConfig) -> Vec<(usize, usize)> {
    let ab = one_way(a, b, config);
    let ba = one_way(b, a, config);
    ab.iter()
        .enumerate()
        .filter_map(|(i, m)| m.filter(|&j| ba[j] == Some(i)).map(|j| (i, j)))
        .collect()
}
