//! Deforming heightfield `z = z0 + a(t) sin(wx x + phi(t)) sin(wy y)` seen by a
//! camera at the origin looking down +z. Material coordinates are `(x, y)`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Static plane.
    Plane,
    /// Travelling bend.
    Bend,
    /// Standing wave with breathing amplitude.
    Pulse,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plane" => Ok(Preset::Plane),
            "bend" => Ok(Preset::Bend),
            "pulse" => Ok(Preset::Pulse),
            other => Err(format!("unknown preset `{other}` (expected plane, bend or pulse)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heightfield {
    pub preset: Preset,
    pub z0: f64,
    pub amplitude: f64,
    pub omega: [f64; 2],
    /// Phase advance per frame for the bend preset.
    pub phase_rate: f64,
    pub frames: usize,
}

impl Heightfield {
    pub fn amplitude_at(&self, t: usize) -> f64 {
        match self.preset {
            Preset::Plane => 0.0,
            Preset::Bend => self.amplitude,
            Preset::Pulse => self.amplitude * (2.0 * std::f64::consts::PI * t as f64 / self.frames.max(1) as f64).cos(),
        }
    }

    pub fn phase_at(&self, t: usize) -> f64 {
        match self.preset {
            Preset::Bend => self.phase_rate * t as f64,
            _ => 0.0,
        }
    }

    pub fn height(&self, u: f64, v: f64, t: usize) -> f64 {
        self.z0 + self.amplitude_at(t) * (self.omega[0] * u + self.phase_at(t)).sin() * (self.omega[1] * v).sin()
    }

    /// `(dh/du, dh/dv)`.
    pub fn slope(&self, u: f64, v: f64, t: usize) -> (f64, f64) {
        let a = self.amplitude_at(t);
        let (px, py) = (self.omega[0] * u + self.phase_at(t), self.omega[1] * v);
        (a * self.omega[0] * px.cos() * py.sin(), a * self.omega[1] * px.sin() * py.cos())
    }

    /// Surface point of material coordinate `(u, v)` at frame `t`.
    pub fn point(&self, u: f64, v: f64, t: usize) -> Vector3<f64> {
        Vector3::new(u, v, self.height(u, v, t))
    }

    /// Depth `s` where the ray `s (dx, dy, 1)` meets the surface, by Newton's
    /// method on `s - h(s dx, s dy)`. The function is strictly increasing when
    /// the slope bound holds, so the root is unique.
    pub fn intersect(&self, dx: f64, dy: f64, t: usize) -> f64 {
        let mut s = self.z0;
        for _ in 0..60 {
            let (hu, hv) = self.slope(s * dx, s * dy, t);
            let g = s - self.height(s * dx, s * dy, t);
            let dg = 1.0 - hu * dx - hv * dy;
            let step = g / dg;
            s -= step;
            if step.abs() <= 1e-15 * s.abs() {
                break;
            }
        }
        s
    }

    /// Upper bound of `|d h(s dx, s dy) / ds|` over rays with `|dx| <= rx`, `|dy| <= ry`.
    pub fn ray_slope_bound(&self, rx: f64, ry: f64) -> f64 {
        let a = (0..self.frames).map(|t| self.amplitude_at(t).abs()).fold(0.0, f64::max);
        a * (self.omega[0] * rx + self.omega[1] * ry)
    }
}
