//! Robust rigid registration of 3D point clouds.
//!
//! Motions are estimated by iteratively reweighted least squares directly
//! on SE(3): every outer iteration linearizes the correspondence residuals,
//! solves a weighted 6×6 (or 6(N−1)×6(N−1) for joint multiview problems)
//! system a fixed number of times, and applies the result through the
//! exponential map so that every iterate stays a valid rigid motion.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod correspondence;
pub mod error;
pub mod io;
pub mod liegroup;
pub mod linalg;
pub mod multiview;
pub mod pairwise;
pub mod pointcloud;
pub mod robust_loss;
pub mod spatial;
pub mod synthbench;

pub use error::{Error, Result};
pub use liegroup::{RigidMotion, Rotation, Twist, Vec3};
pub use pairwise::{
    Correspondence, CorrespondenceSet, ConvergenceTrace, Parametrization, RegistrationResult,
    SolverConfig,
};
pub use robust_loss::{AnnealSchedule, LossKind};
pub use multiview::{ViewEdge, ViewGraph};
pub use pointcloud::PointCloud;
