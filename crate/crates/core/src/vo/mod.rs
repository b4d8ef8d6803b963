//! Monocular keyframe visual odometry.
//!
//! The tracker matches every frame against the last keyframe, promotes
//! frames by [`keyframe_decision`], bootstraps a sparse map from the first
//! keyframe pair with enough parallax (essential matrix, gauge `‖t‖ = 1`),
//! and afterwards localises each new keyframe by PnP against the map.
//!
//! Poses follow `x_cam = R · x_world + t`.

mod essential;
mod keyframe;
pub(crate) mod pnp;
pub(crate) mod pose;
mod tracker;
mod triangulation;

pub use essential::{
    decompose_essential, eight_point, estimate_essential_ransac,
    estimate_essential_ransac_normalized, pose_candidates, refine_relative_pose, Correspondence,
    EssentialMatrix,
};
pub use keyframe::{keyframe_decision, KeyframePolicy, TrackingStats};
pub use pnp::{
    estimate_pose_pnp, estimate_pose_pnp_with, project, projection_jacobian,
    refine_pose_gauss_newton, reprojection_error, RefinementReport,
};
pub use pose::{axis_angle, rotation_angle, Pose};
pub use tracker::{
    run_vo, run_vo_on_features, Keyframe, KeyframeHealth, KeyframeStatus, MapPoint, VoConfig,
    VoDiagnostics, VoOutput,
};
pub use triangulation::{triangulate, triangulate_multiview, Triangulated};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VoError {
    #[error("need at least {needed} correspondences, got {got}")]
    InsufficientCorrespondences { needed: usize, got: usize },
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("cheirality check failed: {0}")]
    CheiralityFailure(String),
    #[error("camera centres coincide")]
    ZeroBaseline,
    #[error("triangulated point is at infinity")]
    PointAtInfinity,
    #[error("point is behind the camera")]
    BehindCamera,
    #[error("no pose hypothesis reached consensus")]
    NoConsensus,
    #[error("no frames to process")]
    NoFrames,
}
