//! Triangle meshes, surface-bound Gaussian initialization and the
//! first-frame fit with scale and shift regularizers.

pub mod bind;
pub mod mesh;
pub mod optimize;

pub use bind::{bind_gaussians, first_frame_loss, scale_loss, shift_loss, BindInit, BindingMap};
pub use mesh::{TriangleInfo, TriangleMesh, MIN_TRIANGLE_AREA};
pub use optimize::{fit_gaussians, optimize_first_frame, SurfaceConfig, SurfaceFit, SurfaceLosses};
