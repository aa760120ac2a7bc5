//! Shared geometric value types, camera math, the optimizer and the
//! gradient-check harness.

pub mod camera;
pub mod frame;
pub mod gaussian;
pub mod gradcheck;
pub mod optim;
pub mod raster;
pub mod rotation;

pub use camera::{Camera, Ray};
pub use frame::FrameData;
pub use gaussian::{GaussianKernel, GaussianSet};
pub use gradcheck::{grad_check, grad_check_coords, GradCheck};
pub use optim::{adam_step, AdamConfig, OptimState};
pub use raster::{DepthMap, Mask, Raster, RgbImage};
