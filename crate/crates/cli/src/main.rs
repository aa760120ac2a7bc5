use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::info;
use surfsplat::deform::{optimize_frame, DeformModel, DeformationState};
use surfsplat::io::{dataset, obj, ply, png};
use surfsplat::pipeline::{self, gaussians_path, PipelineConfig};
use surfsplat::sdf::grid::{save_color, save_sdf};
use surfsplat::sdf::{marching_cubes, optimize_sdf};
use surfsplat::splat::rasterize;
use surfsplat::surface::{bind_gaussians, fit_gaussians};
use surfsplat::synth::{generate_sequence, Preset, SynthConfig, ToolConfig};
use surfsplat::tracks::{build_tracks, load_tracks, save_tracks};
use surfsplat::Error;

#[derive(Parser)]
#[command(name = "surfsplat", version, about = "Deformable surface reconstruction with surface-bound Gaussians")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic deforming-surface dataset.
    Synth(SynthArgs),
    /// Detect and chain sparse keypoint tracks.
    Track(StageArgs),
    /// Fit the first-frame SDF and extract its mesh.
    ReconMesh(StageArgs),
    /// Fit first-frame Gaussians bound to a mesh.
    ReconGs(StageArgs),
    /// Fit per-frame kernel motion.
    Deform(StageArgs),
    /// Render a Gaussian checkpoint through a dataset camera.
    Render(RenderArgs),
    /// Score per-frame checkpoints against a dataset.
    Eval(EvalArgs),
    /// Run the full pipeline.
    Run(StageArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "bend")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Image size as HxW.
    #[arg(long, value_parser = parse_size, default_value = "128x128")]
    size: (usize, usize),
    /// Depth and color noise standard deviations.
    #[arg(long, num_args = 2, value_names = ["SIGMA_D", "SIGMA_C"])]
    noise: Option<Vec<f64>>,
    /// Add a moving rectangular occluder.
    #[arg(long)]
    tool: bool,
}

/// Config file plus per-key overrides shared by the pipeline stages.
#[derive(Args)]
struct StageArgs {
    /// TOML config file with flat keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory; `run` synthesizes one when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    #[arg(long, num_args = 2, value_names = ["SIGMA_D", "SIGMA_C"])]
    noise: Option<Vec<f64>>,
    #[arg(long)]
    max_keypoints: Option<usize>,
    #[arg(long)]
    sdf_resolution: Option<usize>,
    #[arg(long)]
    sdf_iterations: Option<usize>,
    #[arg(long)]
    gs_iterations: Option<usize>,
    #[arg(long)]
    deform_iterations: Option<usize>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    beta3: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    lambda4: Option<f64>,
    #[arg(long)]
    r: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Random free Gaussians instead of mesh-bound ones.
    #[arg(long)]
    no_surface_aware: bool,
    /// Drop the local rigidity term.
    #[arg(long)]
    no_arap: bool,
    /// Drop the global rotation and isometry terms.
    #[arg(long)]
    no_global: bool,
    /// Mesh from `recon-mesh` (default: <out>/mesh.obj).
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Tracks from `track` (default: <out>/tracks.jsonl).
    #[arg(long)]
    tracks: Option<PathBuf>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    gaussians: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write the depth map as a grayscale PNG.
    #[arg(long)]
    depth_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Directory holding gaussians/frame_%04d.ply.
    #[arg(long)]
    run: PathBuf,
    /// Metrics JSON path (default: <run>/metrics.json).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got `{s}`"))?;
    let h = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    let w = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    Ok((h, w))
}

impl StageArgs {
    fn config(&self) -> Result<PipelineConfig, Error> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        set!(seed, preset, frames, max_keypoints, sdf_resolution, sdf_iterations, gs_iterations, deform_iterations);
        set!(alpha1, alpha2, beta1, beta2, beta3, gamma1, gamma2, lambda1, lambda2, lambda3, lambda4, r);
        if self.data.is_some() {
            c.data_dir = self.data.clone();
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some((h, w)) = self.size {
            c.height = h;
            c.width = w;
        }
        if let Some(n) = &self.noise {
            c.depth_noise = n[0];
            c.color_noise = n[1];
        }
        if self.rho.is_some() {
            c.rho = self.rho;
        }
        c.no_surface_aware |= self.no_surface_aware;
        c.no_arap |= self.no_arap;
        c.no_global |= self.no_global;
        c.validate()?;
        Ok(c)
    }

    fn data_dir(&self, c: &PipelineConfig) -> anyhow::Result<PathBuf> {
        c.data_dir
            .clone()
            .ok_or_else(|| Error::Config("this command needs --data (or data_dir in the config)".into()).into())
    }

    fn mesh_path(&self, c: &PipelineConfig) -> PathBuf {
        self.mesh.clone().unwrap_or_else(|| c.output_dir.join("mesh.obj"))
    }

    fn tracks_path(&self, c: &PipelineConfig) -> PathBuf {
        self.tracks.clone().unwrap_or_else(|| c.output_dir.join("tracks.jsonl"))
    }
}

fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let (height, width) = a.size;
    let mut cfg = SynthConfig {
        width,
        height,
        frames: a.frames,
        seed: a.seed,
        tool: a.tool.then(ToolConfig::default),
        ..SynthConfig::preset(a.preset)
    };
    if let Some(n) = &a.noise {
        cfg.depth_noise = n[0];
        cfg.color_noise = n[1];
    }
    let seq = generate_sequence(&cfg)?;
    seq.write(&a.out)?;
    println!("wrote {} frames and {} ground-truth tracks to {}", seq.frames.len(), seq.truth.tracks.len(), a.out.display());
    Ok(())
}

fn track(a: &StageArgs) -> anyhow::Result<()> {
    let c = a.config()?;
    let frames = dataset::load_dataset(&a.data_dir(&c)?)?;
    let set = build_tracks(&frames, &c.tracks())?;
    fs::create_dir_all(&c.output_dir)?;
    let path = a.tracks_path(&c);
    save_tracks(&path, &set)?;
    println!("{} tracks over {} frames -> {}", set.len(), frames.len(), path.display());
    Ok(())
}

fn recon_mesh(a: &StageArgs) -> anyhow::Result<()> {
    let c = a.config()?;
    let frames = dataset::load_dataset(&a.data_dir(&c)?)?;
    let fit = optimize_sdf(&frames[0], &c.sdf())?;
    let mesh = marching_cubes(&fit.sdf, 0.0)?;
    fs::create_dir_all(&c.output_dir)?;
    save_sdf(&c.output_dir.join("sdf.grid"), &fit.sdf)?;
    save_color(&c.output_dir.join("color.grid"), &fit.color)?;
    let path = a.mesh_path(&c);
    obj::write(&path, &mesh)?;
    println!("mesh with {} triangles -> {}", mesh.len(), path.display());
    Ok(())
}

fn recon_gs(a: &StageArgs) -> anyhow::Result<()> {
    let c = a.config()?;
    let frames = dataset::load_dataset(&a.data_dir(&c)?)?;
    let mesh = obj::read(&a.mesh_path(&c))?;
    let sc = c.surface();
    let (set, binding) = if c.no_surface_aware {
        pipeline::random_gaussians(&mesh, &frames[0], c.seed)?
    } else {
        bind_gaussians(&mesh, Some(&frames[0]), &sc.init)?
    };
    let fit = fit_gaussians(&frames[0], &mesh, set, binding, &sc)?;
    fs::create_dir_all(c.output_dir.join("gaussians"))?;
    ply::write(&gaussians_path(&c.output_dir, 0), &fit.set, &[])?;
    pipeline::save_binding(&c.output_dir.join("binding.json"), &fit.binding)?;
    println!("{} kernels, frame-0 PSNR {:.2} dB", fit.set.len(), fit.psnr);
    Ok(())
}

fn deform(a: &StageArgs) -> anyhow::Result<()> {
    let c = a.config()?;
    let frames = dataset::load_dataset(&a.data_dir(&c)?)?;
    let mesh = obj::read(&a.mesh_path(&c))?;
    let (base, _) = ply::read(&gaussians_path(&c.output_dir, 0))?;
    let binding = pipeline::load_binding(&c.output_dir.join("binding.json"))?;
    let tracks_path = a.tracks_path(&c);
    let tracks = load_tracks(&tracks_path, frames.len()).with_context(|| format!("reading {}", tracks_path.display()))?;
    let dc = c.deform();
    let model = DeformModel::new(base.clone(), &binding, &mesh, Some(tracks), &dc)?;
    let mut state = DeformationState::from_set(0, &base);
    for frame in &frames[1..] {
        let (next, history) = optimize_frame(&state, frame, &model, &dc)?;
        ply::write(&gaussians_path(&c.output_dir, frame.index), &next.apply(&model.base), &[])?;
        info!("frame {}: final loss {:.5}", frame.index, history.last().map_or(0.0, |l| l.total));
        state = next;
    }
    println!("deformed {} kernels over {} frames", base.len(), frames.len());
    Ok(())
}

fn render(a: &RenderArgs) -> anyhow::Result<()> {
    let (set, _) = ply::read(&a.gaussians)?;
    let cameras = dataset::read_cameras(&a.data)?;
    let cam = cameras
        .get(a.frame)
        .ok_or_else(|| Error::Config(format!("frame {} not in dataset ({} frames)", a.frame, cameras.len())))?;
    let out = rasterize(&set, cam, &[0.0; 3]);
    png::write_rgb(&a.out, &out.color)?;
    if let Some(d) = &a.depth_out {
        png::write_gray(d, &out.depth, cam.near(), cam.far())?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> anyhow::Result<()> {
    let frames = dataset::load_dataset(&a.data)?;
    let refs = dataset::load_ground_truth(&a.data, frames.len())?;
    let sets = (0..frames.len())
        .map(|t| ply::read(&gaussians_path(&a.run, t)).map(|(s, _)| s))
        .collect::<Result<Vec<_>, _>>()?;
    let scored = pipeline::evaluate(&sets, &frames, refs.as_deref(), &[0.0; 3])?;
    let frame_metrics: Vec<_> = scored.into_iter().map(|(m, _)| m).collect();
    let cam = &frames[0].camera;
    let tracking = surfsplat::synth::load_synth_config(&a.data)?.map(|s| pipeline::TrackingReport {
        mean_error: pipeline::tracking_error(&s.heightfield(), &sets),
        median_edge_length: obj::read(&a.run.join("mesh.obj")).map(|m| m.median_edge_length()).unwrap_or(f64::NAN),
        kernels: sets[0].len(),
    });
    let report = pipeline::MetricsReport {
        mean: pipeline::mean_metrics(&frame_metrics),
        frames: frame_metrics,
        tracking,
        depth_range: cam.far() - cam.near(),
        timings: Default::default(),
    };
    let out = a.out.clone().unwrap_or_else(|| a.run.join("metrics.json"));
    fs::write(&out, report.to_json())?;
    print!("{}", report.summary());
    Ok(())
}

fn run(a: &StageArgs) -> anyhow::Result<()> {
    let c = a.config()?;
    let report = pipeline::run_pipeline(&c)?;
    print!("{}", report.summary());
    println!("outputs in {}", c.output_dir.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Track(a) => track(a),
        Command::ReconMesh(a) => recon_mesh(a),
        Command::ReconGs(a) => recon_gs(a),
        Command::Deform(a) => deform(a),
        Command::Render(a) => render(a),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
