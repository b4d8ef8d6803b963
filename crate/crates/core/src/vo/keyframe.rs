use serde::{Deserialize, Serialize};

use crate::features::{Keypoint, Match};

/// Thresholds for promoting a frame to a keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KeyframePolicy {
    /// Median keypoint displacement (px) that counts as significant motion.
    pub min_displacement_px: f64,
    /// Fraction of the keyframe's keypoints that must still be tracked.
    pub min_tracked_fraction: f64,
    /// Frames after which a keyframe is forced.
    pub max_interval: usize,
}

impl Default for KeyframePolicy {
    fn default() -> Self {
        Self {
            min_displacement_px: 12.0,
            min_tracked_fraction: 0.6,
            max_interval: 30,
        }
    }
}

/// How well the current frame is tracked from the last keyframe.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackingStats {
    pub matches: usize,
    pub median_displacement: f64,
    /// `None` when the keyframe has no keypoints to track.
    pub tracked_fraction: Option<f64>,
    pub frames_since_keyframe: usize,
}

impl TrackingStats {
    pub fn measure(
        matches: &[Match],
        keyframe_points: &[Keypoint],
        frame_points: &[Keypoint],
        frames_since_keyframe: usize,
    ) -> Self {
        let mut disp: Vec<f64> = matches
            .iter()
            .map(|m| {
                let a = &keyframe_points[m.index_a];
                let b = &frame_points[m.index_b];
                (a.x - b.x).hypot(a.y - b.y)
            })
            .collect();
        Self {
            matches: matches.len(),
            median_displacement: median(&mut disp).unwrap_or(0.0),
            tracked_fraction: (!keyframe_points.is_empty())
                .then(|| matches.len() as f64 / keyframe_points.len() as f64),
            frames_since_keyframe,
        }
    }
}

pub(crate) fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// True when the frame moved enough, lost too many tracks, or the keyframe
/// interval ran out. A keyframe without keypoints never fails the tracking
/// rule.
pub fn keyframe_decision(stats: &TrackingStats, policy: &KeyframePolicy) -> bool {
    stats.median_displacement > policy.min_displacement_px
        || stats
            .tracked_fraction
            .is_some_and(|f| f < policy.min_tracked_fraction)
        || stats.frames_since_keyframe >= policy.max_interval
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dx: f64) -> Vec<Keypoint> {
        (0..25)
            .map(|i| Keypoint {
                x: 30.0 + 10.0 * (i % 5) as f64 + dx,
                y: 30.0 + 10.0 * (i / 5) as f64,
                score: 1.0,
                orientation: 0.0,
            })
            .collect()
    }

    fn identity_matches(n: usize) -> Vec<Match> {
        (0..n)
            .map(|i| Match {
                index_a: i,
                index_b: i,
                distance: 0,
            })
            .collect()
    }

    #[test]
    fn identical_frames_are_not_keyframes() {
        let kps = grid(0.0);
        let s = TrackingStats::measure(&identity_matches(25), &kps, &kps, 1);
        assert_eq!(s.median_displacement, 0.0);
        assert_eq!(s.tracked_fraction, Some(1.0));
        assert!(!keyframe_decision(&s, &KeyframePolicy::default()));
    }

    #[test]
    fn uniform_shift_triggers() {
        let s = TrackingStats::measure(&identity_matches(25), &grid(0.0), &grid(20.0), 1);
        assert!((s.median_displacement - 20.0).abs() < 1e-12);
        assert!(keyframe_decision(&s, &KeyframePolicy::default()));
    }

    #[test]
    fn interval_rule() {
        let kps = grid(0.0);
        let policy = KeyframePolicy::default();
        for since in 1..30 {
            let s = TrackingStats::measure(&identity_matches(25), &kps, &kps, since);
            assert!(!keyframe_decision(&s, &policy), "frame {since}");
        }
        let s = TrackingStats::measure(&identity_matches(25), &kps, &kps, 30);
        assert!(keyframe_decision(&s, &policy));
    }

    #[test]
    fn track_loss_triggers() {
        let kps = grid(0.0);
        let s = TrackingStats::measure(&identity_matches(14), &kps, &kps, 1);
        assert!(keyframe_decision(&s, &KeyframePolicy::default()));
        let s = TrackingStats::measure(&identity_matches(15), &kps, &kps, 1);
        assert!(!keyframe_decision(&s, &KeyframePolicy::default()));
    }

    #[test]
    fn empty_keyframe_only_uses_interval() {
        let s = TrackingStats::measure(&[], &[], &grid(0.0), 3);
        assert_eq!(s.tracked_fraction, None);
        assert!(!keyframe_decision(&s, &KeyframePolicy::default()));
    }

    #[test]
    fn median_of_even_count() {
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
    }
}
