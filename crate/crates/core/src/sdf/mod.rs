//! Signed distance and color fields fitted to the first frame, and mesh extraction.

pub mod grid;
pub mod loss;
pub mod mc;
pub mod optimize;
pub mod render;

pub use grid::{ColorGrid, DenseGrid, GridSpec, SdfGrid, SdfSample};
pub use loss::{color_depth_losses, eikonal_loss, huber, mesh_total_loss};
pub use mc::marching_cubes;
pub use optimize::{optimize_sdf, render_image, MeshLosses, SdfConfig, SdfFit};
pub use render::{render_ray, RayRender, RaySegment, RenderSettings};
