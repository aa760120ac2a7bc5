use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use nalgebra::{UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::deform::{optimize_frame, DeformModel, DeformationState};
use crate::error::{Error, Result};
use crate::io::{dataset, obj, ply, png};
use crate::metrics::{depth_rmse, psnr, ssim};
use crate::scene::{DepthMap, FrameData, GaussianKernel, GaussianSet, RgbImage};
use crate::sdf::grid::{save_color, save_sdf};
use crate::sdf::{marching_cubes, optimize_sdf};
use crate::splat::{rasterize, RenderOutput};
use crate::surface::{bind_gaussians, fit_gaussians, BindingMap, TriangleMesh};
use crate::synth::{generate_sequence, load_synth_config, trajectory, Heightfield};
use crate::tracks::{build_tracks, save_tracks};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub t: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub depth_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub depth_rmse: f64,
}

/// Kernel positions against the analytic trajectories of a synthetic sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    /// Mean over kernels and frames `t >= 1` of the 3D position error.
    pub mean_error: f64,
    pub median_edge_length: f64,
    pub kernels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: Vec<FrameMetrics>,
    pub mean: MeanMetrics,
    pub tracking: Option<TrackingReport>,
    /// Depth range used to normalize depth errors.
    pub depth_range: f64,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without timings, for determinism checks.
    pub fn without_timings(&self) -> MetricsReport {
        MetricsReport {
            timings: BTreeMap::new(),
            ..self.clone()
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        writeln!(s, "frame    PSNR [dB]   SSIM     depth RMSE (not LPIPS)").unwrap();
        for f in &self.frames {
            writeln!(s, "{:>5}    {:>9.3}   {:.4}   {:.5}", f.t, f.psnr, f.ssim, f.depth_rmse).unwrap();
        }
        writeln!(s, " mean    {:>9.3}   {:.4}   {:.5}", self.mean.psnr, self.mean.ssim, self.mean.depth_rmse).unwrap();
        writeln!(s, "depth RMSE / depth range: {:.4}", self.mean.depth_rmse / self.depth_range).unwrap();
        if let Some(t) = &self.tracking {
            writeln!(
                s,
                "tracking error: {:.5} ({:.3} median edge lengths over {} kernels)",
                t.mean_error,
                t.mean_error / t.median_edge_length,
                t.kernels
            )
            .unwrap();
        }
        writeln!(s, "timings [s]:").unwrap();
        for (k, v) in &self.timings {
            writeln!(s, "  {k:<10} {v:.2}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BindingFile {
    triangle: Vec<usize>,
    rest: Vec<[f64; 3]>,
}

pub fn save_binding(path: &Path, binding: &BindingMap) -> Result<()> {
    let file = BindingFile {
        triangle: binding.triangle.clone(),
        rest: binding.rest.iter().map(|v| [v.x, v.y, v.z]).collect(),
    };
    fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_binding(path: &Path) -> Result<BindingMap> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let file: BindingFile =
        serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if file.triangle.len() != file.rest.len() {
        return Err(Error::Data(format!("{}: triangle and rest lists differ in length", path.display())));
    }
    Ok(BindingMap {
        triangle: file.triangle,
        rest: file.rest.iter().map(|v| Vector3::new(v[0], v[1], v[2])).collect(),
    })
}

pub fn gaussians_path(out: &Path, t: usize) -> std::path::PathBuf {
    out.join("gaussians").join(format!("frame_{t:04}.ply"))
}

/// Free kernels with random positions inside the mesh bounds, each attached
/// to its nearest triangle only so that neighborhoods can be built.
pub fn random_gaussians(mesh: &TriangleMesh, frame: &FrameData, seed: u64) -> Result<(GaussianSet, BindingMap)> {
    if mesh.is_empty() {
        return Err(Error::Data("cannot place Gaussians around an empty mesh".into()));
    }
    let (mut lo, mut hi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
    for v in mesh.vertices() {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    let scale = 0.5 * mesh.median_edge_length();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf4ee);
    let kernels: Vec<GaussianKernel> = (0..mesh.len())
        .map(|_| {
            let p = Vector3::from_fn(|c, _| rng.random_range(lo[c]..=hi[c]));
            let q = nalgebra::Quaternion::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            let color = frame
                .camera
                .project(&p)
                .ok()
                .filter(|(px, _)| frame.camera.in_image(px))
                .map(|(px, _)| frame.image[(px.x as usize, px.y as usize)])
                .unwrap_or([0.5; 3]);
            GaussianKernel::new(p, UnitQuaternion::from_quaternion(q), Vector3::repeat(scale), 0.7, Vector3::from(color))
        })
        .collect();
    let centroids: Vec<Vector3<f64>> = mesh.infos().iter().map(|i| i.centroid).collect();
    let triangle = kernels
        .par_iter()
        .map(|k| {
            (0..centroids.len())
                .min_by(|&a, &b| (centroids[a] - k.position).norm_squared().total_cmp(&(centroids[b] - k.position).norm_squared()))
                .unwrap()
        })
        .collect();
    let rest = kernels.iter().map(|k| k.position).collect();
    Ok((GaussianSet::new(kernels), BindingMap { triangle, rest }))
}

/// Renders every set and scores it against the reference images and depths
/// (the observed frames when no references are given) on mask-true pixels.
pub fn evaluate(
    sets: &[GaussianSet],
    frames: &[FrameData],
    refs: Option<&[(RgbImage, DepthMap)]>,
    background: &[f64; 3],
) -> Result<Vec<(FrameMetrics, RenderOutput)>> {
    if sets.len() != frames.len() {
        return Err(Error::Data(format!("{} Gaussian sets for {} frames", sets.len(), frames.len())));
    }
    sets.par_iter()
        .zip(frames)
        .enumerate()
        .map(|(t, (set, frame))| {
            let render = rasterize(set, &frame.camera, background);
            let (image, depth) = match refs {
                Some(r) => (&r[t].0, &r[t].1),
                None => (&frame.image, &frame.depth),
            };
            let m = FrameMetrics {
                t,
                psnr: psnr(&render.color, image, &frame.mask)?,
                ssim: ssim(&render.color, image, &frame.mask)?,
                depth_rmse: depth_rmse(&render.depth, depth, &frame.mask)?,
            };
            Ok((m, render))
        })
        .collect()
}

pub fn mean_metrics(frames: &[FrameMetrics]) -> MeanMetrics {
    let n = frames.len().max(1) as f64;
    MeanMetrics {
        psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        ssim: frames.iter().map(|f| f.ssim).sum::<f64>() / n,
        depth_rmse: frames.iter().map(|f| f.depth_rmse).sum::<f64>() / n,
    }
}

/// Mean distance between each kernel and the analytic trajectory of its
/// frame-0 position, over frames `1..`.
pub fn tracking_error(surface: &Heightfield, sets: &[GaussianSet]) -> f64 {
    let Some(first) = sets.first() else {
        return 0.0;
    };
    let start = first.positions();
    let (mut total, mut count) = (0.0, 0usize);
    for (t, set) in sets.iter().enumerate().skip(1) {
        for (p0, k) in start.iter().zip(&set.kernels) {
            total += (k.position - trajectory(surface, p0, t)).norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

fn timed<T>(timings: &mut BTreeMap<String, f64>, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f();
    *timings.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
    out
}

/// Synthesizes or loads the sequence, then runs tracking, mesh and first-frame
/// reconstruction, per-frame deformation and evaluation. Every artifact is
/// written under `output_dir` as soon as it exists.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let out = cfg.output_dir.as_path();
    fs::create_dir_all(out.join("gaussians"))?;
    fs::create_dir_all(out.join("renders"))?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut timings = BTreeMap::new();

    let data_dir = match &cfg.data_dir {
        Some(d) => d.clone(),
        None => {
            let d = out.join("data");
            timed(&mut timings, "synth", || generate_sequence(&cfg.synth())?.write(&d)).map_err(|e| e.in_stage("synth"))?;
            d
        }
    };
    let frames = dataset::load_dataset(&data_dir).map_err(|e| e.in_stage("load"))?;
    let refs = dataset::load_ground_truth(&data_dir, frames.len()).map_err(|e| e.in_stage("load"))?;
    let synth = load_synth_config(&data_dir).map_err(|e| e.in_stage("load"))?;
    info!("loaded {} frames from {}", frames.len(), data_dir.display());

    let tracks = timed(&mut timings, "tracks", || build_tracks(&frames, &cfg.tracks())).map_err(|e| e.in_stage("tracks"))?;
    save_tracks(&out.join("tracks.jsonl"), &tracks)?;
    info!("{} tracks", tracks.len());

    let sdf_cfg = cfg.sdf();
    let sdf_fit = timed(&mut timings, "sdf", || optimize_sdf(&frames[0], &sdf_cfg)).map_err(|e| e.in_stage("sdf"))?;
    save_sdf(&out.join("sdf.grid"), &sdf_fit.sdf)?;
    save_color(&out.join("color.grid"), &sdf_fit.color)?;
    let mesh = timed(&mut timings, "mesh", || marching_cubes(&sdf_fit.sdf, 0.0)).map_err(|e| e.in_stage("mesh"))?;
    obj::write(&out.join("mesh.obj"), &mesh)?;
    info!("mesh: {} triangles, median edge {:.4}", mesh.len(), mesh.median_edge_length());

    let surface_cfg = cfg.surface();
    let first = timed(&mut timings, "surface", || {
        let (set, binding) = if cfg.no_surface_aware {
            random_gaussians(&mesh, &frames[0], cfg.seed)?
        } else {
            bind_gaussians(&mesh, Some(&frames[0]), &surface_cfg.init)?
        };
        fit_gaussians(&frames[0], &mesh, set, binding, &surface_cfg)
    })
    .map_err(|e| e.in_stage("surface"))?;
    ply::write(&gaussians_path(out, 0), &first.set, &[])?;
    save_binding(&out.join("binding.json"), &first.binding)?;
    info!("first frame: {} kernels, PSNR {:.2} dB", first.set.len(), first.psnr);

    let deform_cfg = cfg.deform();
    let model = DeformModel::new(first.set.clone(), &first.binding, &mesh, Some(tracks), &deform_cfg).map_err(|e| e.in_stage("deform"))?;
    let mut states = vec![DeformationState::from_set(0, &first.set)];
    for frame in &frames[1..] {
        let prev = states.last().expect("frame 0 state");
        let (state, history) = timed(&mut timings, "deform", || optimize_frame(prev, frame, &model, &deform_cfg)).map_err(|e| e.in_stage("deform"))?;
        ply::write(&gaussians_path(out, frame.index), &state.apply(&model.base), &[])?;
        if let Some(last) = history.last() {
            info!("frame {}: loss {:.5}", frame.index, last.total);
        }
        states.push(state);
    }
    let mut sets = Vec::with_capacity(states.len());
    sets.push(first.set.clone());
    sets.extend(states[1..].iter().map(|s| s.apply(&model.base)));

    let background = surface_cfg.background;
    let cam0 = &frames[0].camera;
    let depth_range = cam0.far() - cam0.near();
    let scored = timed(&mut timings, "eval", || evaluate(&sets, &frames, refs.as_deref(), &background)).map_err(|e| e.in_stage("eval"))?;
    for (m, render) in &scored {
        png::write_rgb(&out.join("renders").join(format!("frame_{:04}.png", m.t)), &render.color)?;
        png::write_gray(&out.join("renders").join(format!("depth_{:04}.png", m.t)), &render.depth, cam0.near(), cam0.far())?;
    }
    let frame_metrics: Vec<FrameMetrics> = scored.into_iter().map(|(m, _)| m).collect();
    let tracking = synth.map(|s| TrackingReport {
        mean_error: tracking_error(&s.heightfield(), &sets),
        median_edge_length: mesh.median_edge_length(),
        kernels: first.set.len(),
    });
    let report = MetricsReport {
        mean: mean_metrics(&frame_metrics),
        frames: frame_metrics,
        tracking,
        depth_range,
        timings,
    };
    fs::write(out.join("metrics.json"), report.to_json())?;
    fs::write(out.join("summary.txt"), report.summary())?;
    Ok(report)
}
