//! File formats: dataset layout, PFM depth, PNG images, PLY checkpoints, OBJ meshes.

pub mod dataset;
pub mod obj;
pub mod pfm;
pub mod ply;
pub mod png;

pub use dataset::{load_dataset, load_ground_truth, write_dataset, write_ground_truth};
