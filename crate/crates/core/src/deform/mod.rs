//! Per-frame deformation of the bound kernels under local rigidity, rotation
//! consistency and isometry regularization.

pub mod graph;
pub mod loss;
pub mod optimize;
pub mod rigid;

pub use graph::{build_neighborhoods, NeighborGraph};
pub use loss::{anchors, arap_loss, arap_loss_grad, deform_total_loss, iso_loss, iso_loss_grad, rot_loss, rot_loss_grad, ArapWeights};
pub use loss::{LAMBDA_ARAP, LAMBDA_DEPTH, LAMBDA_ISO, LAMBDA_ROT};
pub use optimize::{deform_loss_and_grad, optimize_frame, DeformConfig, DeformLosses, DeformModel, DeformationState};
pub use rigid::estimate_rotation;
