//! Keypoint detection, matching, track chaining and ARAP region assignment.

pub mod chain;
pub mod detect;
pub mod regions;

pub use chain::{build_tracks, decode_tracks, encode_tracks, lift, load_tracks, save_tracks, Observation, SparseTrackSet, Track};
pub use detect::{detect_keypoints, match_keypoints, Keypoint, TrackConfig};
pub use regions::{assign_regions, RegionAssignment};
