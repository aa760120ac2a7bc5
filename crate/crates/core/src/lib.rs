//! Surface-aware Gaussian splatting for deformable scenes.

pub mod deform;
pub mod error;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod scene;
pub mod sdf;
pub mod splat;
pub mod surface;
pub mod synth;
pub mod tracks;

pub use error::{Error, Result};
