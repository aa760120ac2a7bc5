//! Ground-truthed synthetic sequences of a textured deforming sheet.

pub mod generate;
pub mod surface;
pub mod texture;

pub use generate::{
    generate_sequence, ground_truth_tracks, load_synth_config, surface_mesh, trajectory, GroundTruth, SynthConfig, SynthSequence, ToolConfig,
};
pub use surface::{Heightfield, Preset};
pub use texture::Texture;
