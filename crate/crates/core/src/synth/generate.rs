use std::fs;
use std::path::Path;

use nalgebra::{Isometry3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::surface::{Heightfield, Preset};
use super::texture::Texture;
use crate::error::{Error, Result};
use crate::io::{dataset, obj};
use crate::scene::{Camera, DepthMap, FrameData, Mask, Raster, RgbImage};
use crate::surface::TriangleMesh;
use crate::tracks::{save_tracks, Observation, SparseTrackSet, Track};

pub const CONFIG_FILE: &str = "synth.json";

/// Axis-aligned occluder moving linearly across the image. Sizes and positions
/// are fractions of the image width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub size: [f64; 2],
    pub start: [f64; 2],
    pub velocity: [f64; 2],
    pub depth: f64,
    pub color: [f64; 3],
}

impl Default for ToolConfig {
    fn default() -> Self {
        ToolConfig {
            size: [0.25, 0.6],
            start: [0.05, -0.1],
            velocity: [0.03, 0.0],
            depth: 3.0,
            color: [0.62, 0.64, 0.68],
        }
    }
}

impl ToolConfig {
    fn covers(&self, x: f64, y: f64, t: usize, width: usize, height: usize) -> bool {
        let (u, v) = (x / width as f64, y / height as f64);
        let x0 = self.start[0] + self.velocity[0] * t as f64;
        let y0 = self.start[1] + self.velocity[1] * t as f64;
        u >= x0 && u < x0 + self.size[0] && v >= y0 && v < y0 + self.size[1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub preset: Preset,
    pub z0: f64,
    pub near: f64,
    pub far: f64,
    /// Defaults to 5% of the depth range.
    pub amplitude: Option<f64>,
    pub omega: [f64; 2],
    pub phase_rate: f64,
    /// Focal length in pixels; defaults to the image width.
    pub focal: Option<f64>,
    pub depth_noise: f64,
    pub color_noise: f64,
    pub tool: Option<ToolConfig>,
    pub vessels: usize,
    pub vessel_width: f64,
    pub supersample: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 128,
            height: 128,
            frames: 10,
            preset: Preset::Bend,
            z0: 4.0,
            near: 2.0,
            far: 6.0,
            amplitude: None,
            omega: [std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_4],
            phase_rate: 0.3,
            focal: None,
            depth_noise: 0.002,
            color_noise: 0.004,
            tool: None,
            vessels: 6,
            vessel_width: 0.05,
            supersample: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn preset(preset: Preset) -> Self {
        SynthConfig {
            preset,
            ..SynthConfig::default()
        }
    }

    pub fn amplitude(&self) -> f64 {
        match self.preset {
            Preset::Plane => 0.0,
            _ => self.amplitude.unwrap_or(0.05 * (self.far - self.near)),
        }
    }

    pub fn heightfield(&self) -> Heightfield {
        Heightfield {
            preset: self.preset,
            z0: self.z0,
            amplitude: self.amplitude(),
            omega: self.omega,
            phase_rate: self.phase_rate,
            frames: self.frames,
        }
    }

    pub fn camera(&self) -> Result<Camera> {
        let f = self.focal.unwrap_or(self.width as f64);
        Camera::pinhole(
            f,
            f,
            self.width as f64 / 2.0,
            self.height as f64 / 2.0,
            self.width,
            self.height,
            Isometry3::identity(),
            self.near,
            self.far,
        )
    }

    pub fn texture(&self) -> Texture {
        let cam_extent = self.z0 * 0.5 * self.width.max(self.height) as f64 / self.focal.unwrap_or(self.width as f64);
        Texture::random(self.seed, self.vessels, 0.75 * cam_extent, self.vessel_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Config(format!("synthetic sequences need at least 2 frames, got {}", self.frames)));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!("image size {}x{} is below 16x16", self.height, self.width)));
        }
        if self.supersample == 0 {
            return Err(Error::Config("supersample must be at least 1".into()));
        }
        if !(self.depth_noise >= 0.0 && self.color_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        let cam = self.camera()?;
        let a = self.amplitude();
        if !(a >= 0.0) || self.z0 - a <= self.near || self.z0 + a >= self.far {
            return Err(Error::Config(format!(
                "surface z0 = {} +- A = {a} leaves the camera frustum [{}, {}]",
                self.z0, self.near, self.far
            )));
        }
        let rx = cam.width() as f64 / 2.0 / cam.fx();
        let ry = cam.height() as f64 / 2.0 / cam.fy();
        let bound = self.heightfield().ray_slope_bound(rx, ry);
        if bound >= 0.9 {
            return Err(Error::Config(format!(
                "amplitude {a} is too large: the surface would fold over along viewing rays (slope bound {bound:.3})"
            )));
        }
        Ok(())
    }
}

/// Everything known exactly about a generated sequence.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub config: SynthConfig,
    pub surface: Heightfield,
    pub texture: Texture,
    pub camera: Camera,
    /// Noise-free images and depths.
    pub images: Vec<RgbImage>,
    pub depths: Vec<DepthMap>,
    pub masks: Vec<Mask>,
    pub tracks: SparseTrackSet,
}

impl GroundTruth {
    /// Heightfield triangulated on an `n x n` grid of material points covering
    /// the view at every frame.
    pub fn mesh(&self, t: usize, n: usize) -> Result<TriangleMesh> {
        surface_mesh(&self.surface, &self.camera, t, n)
    }

    /// Where a point lying at `start` in frame 0 is at frame `t`. The surface
    /// only moves along z, so the material coordinate is `(x, y)`; any offset
    /// from the surface is carried along.
    pub fn trajectory(&self, start: &Vector3<f64>, t: usize) -> Vector3<f64> {
        trajectory(&self.surface, start, t)
    }
}

pub fn trajectory(surface: &Heightfield, start: &Vector3<f64>, t: usize) -> Vector3<f64> {
    let offset = start.z - surface.height(start.x, start.y, 0);
    surface.point(start.x, start.y, t) + Vector3::new(0.0, 0.0, offset)
}

pub fn surface_mesh(surface: &Heightfield, camera: &Camera, t: usize, n: usize) -> Result<TriangleMesh> {
    let n = n.max(2);
    let reach = surface.z0 + surface.amplitude.abs();
    let (u0, u1) = (-camera.cx() / camera.fx() * reach, (camera.width() as f64 - camera.cx()) / camera.fx() * reach);
    let (v0, v1) = (-camera.cy() / camera.fy() * reach, (camera.height() as f64 - camera.cy()) / camera.fy() * reach);
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let u = u0 + (u1 - u0) * i as f64 / (n - 1) as f64;
            let v = v0 + (v1 - v0) * j as f64 / (n - 1) as f64;
            vertices.push(surface.point(u, v, t));
        }
    }
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let a = j * n + i;
            triangles.push([a, a + n, a + 1]);
            triangles.push([a + 1, a + n, a + n + 1]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// A generated sequence: noisy observations plus the exact ground truth.
#[derive(Debug, Clone)]
pub struct SynthSequence {
    pub frames: Vec<FrameData>,
    pub truth: GroundTruth,
}

struct Clean {
    image: RgbImage,
    depth: DepthMap,
    mask: Mask,
}

fn render_clean(cfg: &SynthConfig, surface: &Heightfield, texture: &Texture, cam: &Camera, t: usize) -> Clean {
    let (w, h) = (cfg.width, cfg.height);
    let ss = cfg.supersample;
    let ray = |x: f64, y: f64| ((x - cam.cx()) / cam.fx(), (y - cam.cy()) / cam.fy());
    let rows: Vec<Vec<([f64; 3], f64, bool)>> = (0..h)
        .into_par_iter()
        .map(|py| {
            (0..w)
                .map(|px| {
                    let (xc, yc) = (px as f64 + 0.5, py as f64 + 0.5);
                    if let Some(tool) = cfg.tool.filter(|tool| tool.covers(xc, yc, t, w, h)) {
                        return (tool.color, tool.depth, false);
                    }
                    let (dx, dy) = ray(xc, yc);
                    let depth = surface.intersect(dx, dy, t);
                    let mut color = [0.0; 3];
                    for sy in 0..ss {
                        for sx in 0..ss {
                            let x = px as f64 + (sx as f64 + 0.5) / ss as f64;
                            let y = py as f64 + (sy as f64 + 0.5) / ss as f64;
                            let (dx, dy) = ray(x, y);
                            let s = surface.intersect(dx, dy, t);
                            let c = texture.albedo(Vector2::new(s * dx, s * dy));
                            for k in 0..3 {
                                color[k] += c[k];
                            }
                        }
                    }
                    let n = (ss * ss) as f64;
                    ([color[0] / n, color[1] / n, color[2] / n], depth, true)
                })
                .collect()
        })
        .collect();
    let flat: Vec<_> = rows.into_iter().flatten().collect();
    Clean {
        image: Raster::from_vec(w, h, flat.iter().map(|p| p.0).collect()),
        depth: Raster::from_vec(w, h, flat.iter().map(|p| p.1).collect()),
        mask: Raster::from_vec(w, h, flat.iter().map(|p| p.2).collect()),
    }
}

fn add_noise(cfg: &SynthConfig, clean: &Clean, t: usize) -> (RgbImage, DepthMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(t as u64 + 1);
    let mut image = clean.image.clone();
    let mut depth = clean.depth.clone();
    if cfg.color_noise > 0.0 {
        let n = Normal::new(0.0, cfg.color_noise).expect("finite sigma");
        for c in image.as_mut_slice() {
            for v in c.iter_mut() {
                *v = (*v + n.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    if cfg.depth_noise > 0.0 {
        let n = Normal::new(0.0, cfg.depth_noise).expect("finite sigma");
        for d in depth.as_mut_slice() {
            *d += n.sample(&mut rng);
        }
    }
    (image, depth)
}

pub fn generate_sequence(cfg: &SynthConfig) -> Result<SynthSequence> {
    cfg.validate()?;
    let camera = cfg.camera()?;
    let surface = cfg.heightfield();
    let texture = cfg.texture();
    let rendered: Vec<(Clean, RgbImage, DepthMap)> = (0..cfg.frames)
        .into_par_iter()
        .map(|t| {
            let clean = render_clean(cfg, &surface, &texture, &camera, t);
            let (image, depth) = add_noise(cfg, &clean, t);
            (clean, image, depth)
        })
        .collect();
    let tracks = ground_truth_tracks(cfg, usize::MAX)?;
    let mut frames = Vec::with_capacity(cfg.frames);
    let (mut images, mut depths, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for (t, (clean, image, depth)) in rendered.into_iter().enumerate() {
        frames.push(FrameData::new(image, depth, clean.mask.clone(), camera.clone(), t)?);
        images.push(clean.image);
        depths.push(clean.depth);
        masks.push(clean.mask);
    }
    Ok(SynthSequence {
        frames,
        truth: GroundTruth {
            config: cfg.clone(),
            surface,
            texture,
            camera,
            images,
            depths,
            masks,
            tracks,
        },
    })
}

/// Material points at vessel crossings, projected into every frame. Crossings
/// not in view at frame 0 are skipped; observations on tool pixels are dropped.
pub fn ground_truth_tracks(cfg: &SynthConfig, count: usize) -> Result<SparseTrackSet> {
    cfg.validate()?;
    let camera = cfg.camera()?;
    let surface = cfg.heightfield();
    let (w, h) = (cfg.width, cfg.height);
    let visible = |p: &Vector3<f64>| -> Option<Vector2<f64>> {
        let (px, _) = camera.project(p).ok()?;
        let inside = px.x >= 0.0 && px.y >= 0.0 && px.x < w as f64 && px.y < h as f64;
        inside.then_some(px)
    };
    let unmasked = |px: &Vector2<f64>, t: usize| {
        let (x, y) = (px.x.floor() + 0.5, px.y.floor() + 0.5);
        !cfg.tool.is_some_and(|tool| tool.covers(x, y, t, w, h))
    };
    let tracks = cfg
        .texture()
        .crossings()
        .into_iter()
        .filter(|m| visible(&surface.point(m.x, m.y, 0)).is_some())
        .take(count)
        .map(|m| {
            let observations = (0..cfg.frames)
                .filter_map(|t| {
                    let point = surface.point(m.x, m.y, t);
                    let pixel = visible(&point).filter(|px| unmasked(px, t))?;
                    Some((t, Observation { pixel, point }))
                })
                .collect();
            Track { observations }
        })
        .filter(|track| !track.is_empty())
        .collect();
    Ok(SparseTrackSet {
        tracks,
        frames: cfg.frames,
    })
}

impl SynthSequence {
    /// Writes the dataset layout plus `synth.json`, noise-free `gt/` frames,
    /// `gt/tracks.jsonl` and per-frame `gt/mesh_%04d.obj`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        dataset::write_dataset(dir, &self.frames)?;
        let refs: Vec<_> = self.truth.images.iter().cloned().zip(self.truth.depths.iter().cloned()).collect();
        dataset::write_ground_truth(dir, &refs)?;
        fs::write(dir.join(CONFIG_FILE), serde_json::to_string_pretty(&self.truth.config)?)?;
        let gt = dir.join("gt");
        save_tracks(&gt.join("tracks.jsonl"), &self.truth.tracks)?;
        for t in 0..self.frames.len() {
            obj::write(&gt.join(format!("mesh_{t:04}.obj")), &self.truth.mesh(t, 48)?)?;
        }
        Ok(())
    }
}

/// The generator config stored next to a synthetic dataset, if any.
pub fn load_synth_config(dir: &Path) -> Result<Option<SynthConfig>> {
    let path = dir.join(CONFIG_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let cfg = serde_json::from_str(&fs::read_to_string(&path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(Some(cfg))
}
