//! Corner detection, oriented binary descriptors and descriptor matching.
//!
//! Detection is a FAST-9 segment test on the raw gray image; descriptors are
//! 256 steered point-pair comparisons on a Gaussian-smoothed copy. Both the
//! visual odometry tracker and the stitcher use the same extractor.

mod descriptor;
mod fast;
mod matching;

pub use descriptor::{
    describe, smooth_for_description, BinaryPattern, Descriptor, DEFAULT_PATTERN_SEED,
    DESCRIPTOR_BITS, PATTERN_RADIUS,
};
pub use fast::{
    corner_score, detect_corners, detect_corners_with_border, orientation, Keypoint,
    FAST_RADIUS, ORIENTATION_RADIUS, SUPPRESSION_RADIUS,
};
pub use matching::{match_descriptors, Match};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media_io::Image;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("image {width}x{height} is smaller than the {min}x{min} minimum")]
    ImageTooSmall { width: usize, height: usize, min: usize },
    #[error("expected a single-channel image, got {0} channels")]
    NotGray(usize),
    #[error("threshold must be at least 1")]
    InvalidThreshold,
    #[error("descriptor pattern at ({x:.1}, {y:.1}) leaves the image")]
    OutOfBounds { x: f64, y: f64 },
}

/// Border kept free by [`extract_features`] so that any steered pattern
/// (coordinates up to `PATTERN_RADIUS·√2`) stays inside the image.
pub const DESCRIBE_BORDER: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub fast_threshold: u8,
    pub max_keypoints: usize,
    pub pattern_seed: u64,
    pub ratio: f64,
    pub cross_check: bool,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            fast_threshold: 20,
            max_keypoints: 1000,
            pattern_seed: DEFAULT_PATTERN_SEED,
            ratio: 0.8,
            cross_check: true,
        }
    }
}

/// Keypoints with their descriptors, index-aligned.
#[derive(Debug, Clone, Default)]
pub struct FeatureSet {
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    /// Keeps the entries for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&Keypoint) -> bool) {
        let (kps, descs): (Vec<_>, Vec<_>) = self
            .keypoints
            .drain(..)
            .zip(self.descriptors.drain(..))
            .filter(|(kp, _)| keep(kp))
            .unzip();
        self.keypoints = kps;
        self.descriptors = descs;
    }
}

/// Detect and describe in one pass. Images too small to hold a full
/// descriptor patch yield an empty set.
pub fn extract_features(gray: &Image, params: &FeatureParams, pattern: &BinaryPattern) -> FeatureSet {
    let keypoints = match detect_corners_with_border(
        gray,
        params.fast_threshold.max(1),
        params.max_keypoints,
        DESCRIBE_BORDER,
    ) {
        Ok(kps) => kps,
        Err(_) => return FeatureSet::default(),
    };
    let smoothed = smooth_for_description(gray);
    let mut set = FeatureSet::default();
    for kp in keypoints {
        if let Ok(d) = describe(&smoothed, &kp, pattern) {
            set.keypoints.push(kp);
            set.descriptors.push(d);
        }
    }
    set
}

/// Matches two feature sets with the ratio / cross-check settings in `params`.
pub fn match_features(a: &FeatureSet, b: &FeatureSet, params: &FeatureParams) -> Vec<Match> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    match_descriptors(&a.descriptors, &b.descriptors, params.ratio, params.cross_check)
}
