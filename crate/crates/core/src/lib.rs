//! Offline scene summarisation for body-worn camera footage.
//!
//! A frame sequence goes through three stages:
//!
//! 1. [`vo`]: keyframe selection and monocular pose estimation with a
//!    sparse point map (essential-matrix bootstrap, PnP tracking).
//! 2. [`domset`]: keyframes are grouped into viewpoint clusters by
//!    dominant-set extraction on a pose-affinity graph (replicator dynamics).
//! 3. [`stitch`]: each cluster is aligned with homographies, optionally
//!    pre-warped to a cylinder, and blended into panoramas.
//!
//! [`pipeline`] wires the stages together and writes panoramas, a JSON run
//! report and an SVG cluster plot.
//!
//! The geometric core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`). The aliases at the crate root fix it to `f64`, which
//! is what the pipeline uses.

pub mod domset;
pub mod features;
pub mod media_io;
pub mod pipeline;
mod linalg;
mod ransac;
mod scalar;
pub mod stitch;
pub mod synthetic;
pub mod vo;

pub use scalar::Real;

/// Pinhole intrinsics in double precision.
pub type Intrinsics = media_io::CameraIntrinsics<f64>;
/// Rigid camera pose (`x_cam = R x_world + t`) in double precision.
pub type Pose = vo::Pose<f64>;
/// Single-precision pose.
pub type Pose32 = vo::Pose<f32>;
pub type EssentialMatrix = vo::EssentialMatrix<f64>;
pub type Correspondence = vo::Correspondence<f64>;
pub type Homography = stitch::Homography<f64>;
pub type Homography32 = stitch::Homography<f32>;
pub type AffinityGraph = domset::AffinityGraph<f64>;
pub type AffinityGraph32 = domset::AffinityGraph<f32>;
pub type ReplicatorState = domset::ReplicatorState<f64>;
pub type Cluster = domset::Cluster<f64>;
