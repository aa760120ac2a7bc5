//! Albedo attached to material coordinates: multi-octave value noise with dark
//! vessel curves on top.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const TISSUE: [f64; 3] = [0.86, 0.48, 0.42];
const VESSEL: [f64; 3] = [0.42, 0.08, 0.10];

/// `v = offset + amp sin(freq u + phase)` for a horizontal vessel, and the same
/// with `u` and `v` swapped for a vertical one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vessel {
    pub vertical: bool,
    pub offset: f64,
    pub amp: f64,
    pub freq: f64,
    pub phase: f64,
    pub width: f64,
}

impl Vessel {
    fn along_across(&self, p: Vector2<f64>) -> (f64, f64) {
        if self.vertical {
            (p.y, p.x)
        } else {
            (p.x, p.y)
        }
    }

    pub fn center(&self, along: f64) -> f64 {
        self.offset + self.amp * (self.freq * along + self.phase).sin()
    }

    /// Approximate distance from `p` to the curve (first-order in the curve slope).
    pub fn distance(&self, p: Vector2<f64>) -> f64 {
        let (s, c) = self.along_across(p);
        let slope = self.amp * self.freq * (self.freq * s + self.phase).cos();
        (c - self.center(s)).abs() / (1.0 + slope * slope).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub seed: u64,
    pub vessels: Vec<Vessel>,
    /// Lattice spacing of the coarsest noise octave, in material units.
    pub noise_scale: f64,
    pub octaves: usize,
}

impl Texture {
    /// Random vessels whose offsets are spread over `[-extent, extent]`.
    pub fn random(seed: u64, count: usize, extent: f64, width: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e57_u64);
        let per_axis = count.div_ceil(2).max(1);
        let vessels = (0..count)
            .map(|i| {
                let vertical = i % 2 == 1;
                let slot = i / 2;
                let spacing = 2.0 * extent / per_axis as f64;
                let offset = -extent + spacing * (slot as f64 + 0.5) + rng.random_range(-0.2..0.2) * spacing;
                let freq = rng.random_range(1.0..2.0);
                // amp * freq < 0.5 keeps the curve a graph with a contracting crossing map
                let amp = rng.random_range(0.1..0.45) / freq;
                Vessel {
                    vertical,
                    offset,
                    amp,
                    freq,
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                    width,
                }
            })
            .collect();
        Texture {
            seed,
            vessels,
            noise_scale: 0.8,
            octaves: 3,
        }
    }

    pub fn noise(&self, p: Vector2<f64>) -> f64 {
        let mut total = 0.0;
        let mut norm = 0.0;
        let mut amp = 1.0;
        let mut scale = self.noise_scale;
        for o in 0..self.octaves {
            total += amp * value_noise(self.seed.wrapping_add(o as u64), p.x / scale, p.y / scale);
            norm += amp;
            amp *= 0.5;
            scale *= 0.5;
        }
        total / norm
    }

    pub fn albedo(&self, p: Vector2<f64>) -> [f64; 3] {
        let n = self.noise(p);
        let shade = 0.7 + 0.45 * n;
        let mut c = [TISSUE[0] * shade, TISSUE[1] * (0.8 + 0.5 * n), TISSUE[2] * shade];
        let dark = self
            .vessels
            .iter()
            .map(|v| {
                let d = v.distance(p) / v.width;
                (-d * d).exp()
            })
            .fold(0.0, f64::max);
        for k in 0..3 {
            c[k] = (c[k] + 0.85 * dark * (VESSEL[k] - c[k])).clamp(0.0, 1.0);
        }
        c
    }

    /// Crossings of every horizontal vessel with every vertical one, found by
    /// fixed-point iteration (a contraction since `amp * freq < 0.5`).
    pub fn crossings(&self) -> Vec<Vector2<f64>> {
        let mut out = Vec::new();
        for h in self.vessels.iter().filter(|v| !v.vertical) {
            for w in self.vessels.iter().filter(|v| v.vertical) {
                let mut p = Vector2::new(w.offset, h.offset);
                for _ in 0..200 {
                    let u = w.center(p.y);
                    let v = h.center(u);
                    let next = Vector2::new(u, v);
                    let done = (next - p).norm() < 1e-15;
                    p = next;
                    if done {
                        break;
                    }
                }
                out.push(p);
            }
        }
        out
    }
}

fn lattice(seed: u64, i: i64, j: i64) -> f64 {
    let mut z = seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((i as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9))
        .wrapping_add((j as u64).wrapping_mul(0x94d0_49bb_1331_11eb));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
pub fn value_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (fx, fy) = (x.floor(), y.floor());
    let (i, j) = (fx as i64, fy as i64);
    let smooth = |t: f64| t * t * t * (t * (6.0 * t - 15.0) + 10.0);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = lattice(seed, i, j) * (1.0 - tx) + lattice(seed, i + 1, j) * tx;
    let b = lattice(seed, i, j + 1) * (1.0 - tx) + lattice(seed, i + 1, j + 1) * tx;
    a * (1.0 - ty) + b * ty
}
