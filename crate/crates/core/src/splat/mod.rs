//! Differentiable Gaussian splatting: EWA projection, depth-sorted alpha
//! compositing of color, depth and coverage, and the matching backward pass.

pub mod loss;
pub mod params;
pub mod project;
pub mod rasterize;

pub use loss::image_losses;
pub use params::{GaussianOptimizer, GaussianParams, LearningRates, Trainable};
pub use project::{project_gaussian, Splat2D, LOW_PASS, MAX_ALPHA, MIN_ALPHA};
pub use rasterize::{rasterize, rasterize_backward, sorted_splats, GaussianGrads, OutputGrads, RenderOutput};
