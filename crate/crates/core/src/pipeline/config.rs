//! Flat run configuration. Every key is optional in the TOML file:
//!
//! ```toml
//! data_dir = "dataset"      # omit to synthesize a sequence
//! output_dir = "out"
//! seed = 0
//!
//! preset = "bend"           # synthetic sequence: plane | bend | pulse
//! frames = 10
//! width = 128
//! height = 128
//! depth_noise = 0.002
//! color_noise = 0.004
//!
//! max_keypoints = 400
//!
//! sdf_resolution = 64
//! sdf_iterations = 1000
//! alpha1 = 0.1              # SDF depth weight
//! alpha2 = 0.01             # Eikonal weight
//!
//! gs_iterations = 600
//! beta1 = 0.5               # first-frame depth weight
//! beta2 = 0.1               # scale hinge weight
//! beta3 = 0.05              # shift hinge weight
//! gamma1 = 1.0              # scale bound, in inradii
//! gamma2 = 0.5              # shift bound, in inradii
//!
//! deform_iterations = 100
//! lambda1 = 0.5             # depth
//! lambda2 = 0.1             # local ARAP
//! lambda3 = 0.05            # global rotation
//! lambda4 = 0.02            # global isometry
//! r = 8                     # graph neighbors
//! rho = 0.4                 # region radius; omit for 10x median edge length
//!
//! no_surface_aware = false
//! no_arap = false
//! no_global = false
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deform::DeformConfig;
use crate::error::{Error, Result};
use crate::sdf::SdfConfig;
use crate::surface::SurfaceConfig;
use crate::synth::{Preset, SynthConfig};
use crate::tracks::TrackConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,

    pub preset: Preset,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub depth_noise: f64,
    pub color_noise: f64,

    pub max_keypoints: usize,

    pub sdf_resolution: usize,
    pub sdf_iterations: usize,
    pub alpha1: f64,
    pub alpha2: f64,

    pub gs_iterations: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub gamma1: f64,
    pub gamma2: f64,

    pub deform_iterations: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub r: usize,
    pub rho: Option<f64>,

    pub no_surface_aware: bool,
    pub no_arap: bool,
    pub no_global: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthConfig::default();
        let track = TrackConfig::default();
        let sdf = SdfConfig::default();
        let surface = SurfaceConfig::default();
        let deform = DeformConfig::default();
        PipelineConfig {
            data_dir: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            preset: synth.preset,
            frames: synth.frames,
            width: synth.width,
            height: synth.height,
            depth_noise: synth.depth_noise,
            color_noise: synth.color_noise,
            max_keypoints: track.max_keypoints,
            sdf_resolution: 64,
            sdf_iterations: 1000,
            alpha1: sdf.alpha_depth,
            alpha2: sdf.alpha_eikonal,
            gs_iterations: 600,
            beta1: surface.betas[0],
            beta2: surface.betas[1],
            beta3: surface.betas[2],
            gamma1: surface.gamma_scale,
            gamma2: surface.gamma_shift,
            deform_iterations: 100,
            lambda1: deform.lambdas[0],
            lambda2: deform.lambdas[1],
            lambda3: deform.lambdas[2],
            lambda4: deform.lambdas[3],
            r: deform.r,
            rho: deform.rho,
            no_surface_aware: false,
            no_arap: false,
            no_global: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("beta3", self.beta3),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ];
        for (name, w) in weights {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative weight, got {w}")));
            }
        }
        if let Some(rho) = self.rho {
            if !(rho > 0.0) {
                return Err(Error::Config(format!("rho must be positive, got {rho}")));
            }
        }
        if self.r == 0 {
            return Err(Error::Config("r must be at least 1".into()));
        }
        if self.sdf_resolution < 4 {
            return Err(Error::Config(format!("sdf_resolution {} is below 4", self.sdf_resolution)));
        }
        if let Some(dir) = &self.data_dir {
            if !dir.is_dir() {
                return Err(Error::Config(format!("data_dir {} is not a directory", dir.display())));
            }
        }
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            width: self.width,
            height: self.height,
            frames: self.frames,
            depth_noise: self.depth_noise,
            color_noise: self.color_noise,
            seed: self.seed,
            ..SynthConfig::preset(self.preset)
        }
    }

    pub fn tracks(&self) -> TrackConfig {
        TrackConfig {
            max_keypoints: self.max_keypoints,
            ..TrackConfig::default()
        }
    }

    pub fn sdf(&self) -> SdfConfig {
        SdfConfig {
            grid_resolution: self.sdf_resolution,
            iterations: self.sdf_iterations,
            seed: self.seed,
            alpha_depth: self.alpha1,
            alpha_eikonal: self.alpha2,
            ..SdfConfig::default()
        }
    }

    pub fn surface(&self) -> SurfaceConfig {
        let betas = if self.no_surface_aware {
            [self.beta1, 0.0, 0.0]
        } else {
            [self.beta1, self.beta2, self.beta3]
        };
        SurfaceConfig {
            iterations: self.gs_iterations,
            gamma_scale: self.gamma1,
            gamma_shift: self.gamma2,
            betas,
            ..SurfaceConfig::default()
        }
    }

    pub fn deform(&self) -> DeformConfig {
        let mut lambdas = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if self.no_arap {
            lambdas[1] = 0.0;
        }
        if self.no_global {
            lambdas[2] = 0.0;
            lambdas[3] = 0.0;
        }
        DeformConfig {
            iterations: self.deform_iterations,
            lambdas,
            r: self.r,
            rho: self.rho,
            ..DeformConfig::default()
        }
    }
}
