use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};
use nalgebra::{Point2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{extract_features, match_features, BinaryPattern, FeatureParams, FeatureSet, Match};
use crate::media_io::{to_grayscale, CameraIntrinsics, Frame};

use super::essential::{decompose_essential, estimate_essential_ransac, refine_relative_pose, Correspondence};
use super::keyframe::{keyframe_decision, KeyframePolicy, TrackingStats};
use super::pnp::{estimate_pose_pnp_with, refine_pose_gauss_newton, reprojection_error};
use super::triangulation::{triangulate, triangulate_multiview};
use super::{Pose, VoError};

/// Older posed keyframes, beyond the tracking reference, that a new keyframe
/// is also triangulated against when its baseline to the reference is short.
const EXTRA_TRIANGULATION_REFS: usize = 4;
/// Cauchy scale, in pixels, for polishing the bootstrap relative pose.
const BOOTSTRAP_ROBUST_SCALE_PX: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoConfig {
    pub features: FeatureParams,
    pub keyframes: KeyframePolicy,
    /// Sampson threshold for the two-view bootstrap, in pixels.
    pub essential_threshold_px: f64,
    pub pnp_threshold_px: f64,
    pub ransac_max_iters: usize,
    /// Essential-matrix inliers required to bootstrap the map.
    pub min_init_inliers: usize,
    /// PnP inliers required to accept a tracked pose.
    pub min_pnp_inliers: usize,
    /// Map points whose reprojection error exceeds this in any observing
    /// keyframe are dropped.
    pub cull_threshold_px: f64,
    /// Minimum angle between the two viewing rays of a new map point.
    pub min_parallax_deg: f64,
    pub seed: u64,
}

impl Default for VoConfig {
    fn default() -> Self {
        Self {
            features: FeatureParams::default(),
            keyframes: KeyframePolicy::default(),
            essential_threshold_px: 1.0,
            pnp_threshold_px: 2.0,
            ransac_max_iters: 2000,
            min_init_inliers: 50,
            min_pnp_inliers: 12,
            cull_threshold_px: 2.0,
            min_parallax_deg: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Keyframe {
    pub id: usize,
    pub frame_index: usize,
    /// `None` before the map is bootstrapped and for keyframes where
    /// tracking was lost.
    pub pose: Option<Pose<f64>>,
    pub features: FeatureSet,
    /// Map point observed by each keypoint, index-aligned with `features`.
    pub map_points: Vec<Option<usize>>,
}

impl Keyframe {
    pub fn observed_map_points(&self) -> impl Iterator<Item = usize> + '_ {
        self.map_points.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapPoint {
    pub id: usize,
    pub position: Vector3<f64>,
    /// `(keyframe id, keypoint index)` pairs.
    pub observations: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyframeStatus {
    /// Emitted before the map exists; no pose.
    Uninitialized,
    /// First keyframe of the bootstrap pair (identity pose).
    Origin,
    /// Second keyframe of the bootstrap pair.
    Initialized,
    /// Localised by PnP against the map.
    Tracked,
    /// PnP failed; no pose.
    Lost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyframeHealth {
    pub keyframe_id: usize,
    pub frame_index: usize,
    pub status: KeyframeStatus,
    /// Descriptor matches against the reference keyframe.
    pub matches: usize,
    /// Inliers of the estimator that produced the pose (essential or PnP).
    pub inliers: usize,
    pub new_map_points: usize,
    pub culled_map_points: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoDiagnostics {
    pub initialized: bool,
    /// No keyframe pair passed the parallax gate; keyframes carry no poses.
    pub initialization_failure: bool,
    pub keyframes: Vec<KeyframeHealth>,
    pub frames_processed: usize,
}

#[derive(Debug, Clone)]
pub struct VoOutput {
    pub keyframes: Vec<Keyframe>,
    pub map_points: Vec<MapPoint>,
    pub diagnostics: VoDiagnostics,
}

impl VoOutput {
    pub fn all_posed(&self) -> bool {
        !self.keyframes.is_empty() && self.keyframes.iter().all(|k| k.pose.is_some())
    }
}

/// Detects and describes every frame (in parallel), then runs the tracker.
pub fn run_vo(
    frames: &[Frame],
    intrinsics: &CameraIntrinsics<f64>,
    config: &VoConfig,
) -> Result<VoOutput, VoError> {
    if frames.is_empty() {
        return Err(VoError::NoFrames);
    }
    let pattern = BinaryPattern::new(config.features.pattern_seed);
    let features: Vec<FeatureSet> = frames
        .par_iter()
        .map(|f| extract_features(&to_grayscale(&f.image), &config.features, &pattern))
        .collect();
    let indices: Vec<usize> = frames.iter().map(|f| f.index).collect();
    run_vo_on_features(features, &indices, intrinsics, config)
}

/// Tracker over precomputed per-frame features.
pub fn run_vo_on_features(
    features: Vec<FeatureSet>,
    frame_indices: &[usize],
    intrinsics: &CameraIntrinsics<f64>,
    config: &VoConfig,
) -> Result<VoOutput, VoError> {
    assert_eq!(features.len(), frame_indices.len());
    if features.is_empty() {
        return Err(VoError::NoFrames);
    }
    let mut t = Tracker {
        k: *intrinsics,
        cfg: *config,
        keyframes: Vec::new(),
        points: BTreeMap::new(),
        next_point: 0,
        diag: VoDiagnostics::default(),
        last_posed: None,
        init_ref: 0,
    };
    let mut frames = features.into_iter().zip(frame_indices.iter().copied());
    let (f0, i0) = frames.next().unwrap();
    t.push_keyframe(i0, f0, None, KeyframeStatus::Uninitialized, 0, 0);
    let mut since = 0;
    for (feat, index) in frames {
        since += 1;
        let last = t.keyframes.last().unwrap();
        let matches = match_features(&last.features, &feat, &config.features);
        let stats =
            TrackingStats::measure(&matches, &last.features.keypoints, &feat.keypoints, since);
        t.diag.frames_processed += 1;
        if !keyframe_decision(&stats, &config.keyframes) {
            continue;
        }
        since = 0;
        if t.diag.initialized {
            t.track(index, feat);
        } else {
            t.bootstrap(index, feat, &matches);
        }
    }
    t.diag.frames_processed += 1;
    t.diag.initialization_failure = !t.diag.initialized;
    if t.diag.initialization_failure {
        info!("visual odometry did not initialise; keyframes carry no poses");
    }
    Ok(VoOutput {
        keyframes: t.keyframes,
        map_points: t.points.into_values().collect(),
        diagnostics: t.diag,
    })
}

struct Tracker {
    k: CameraIntrinsics<f64>,
    cfg: VoConfig,
    keyframes: Vec<Keyframe>,
    points: BTreeMap<usize, MapPoint>,
    next_point: usize,
    diag: VoDiagnostics,
    last_posed: Option<usize>,
    /// Keyframe the bootstrap pairs new keyframes with.
    init_ref: usize,
}

impl Tracker {
    fn seed_for(&self, keyframe_id: usize) -> u64 {
        self.cfg.seed.wrapping_add((keyframe_id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn push_keyframe(
        &mut self,
        frame_index: usize,
        features: FeatureSet,
        pose: Option<Pose<f64>>,
        status: KeyframeStatus,
        matches: usize,
        inliers: usize,
    ) -> usize {
        let id = self.keyframes.len();
        let n = features.len();
        self.keyframes.push(Keyframe {
            id,
            frame_index,
            pose,
            features,
            map_points: vec![None; n],
        });
        self.diag.keyframes.push(KeyframeHealth {
            keyframe_id: id,
            frame_index,
            status,
            matches,
            inliers,
            new_map_points: 0,
            culled_map_points: 0,
        });
        if pose.is_some() {
            self.last_posed = Some(id);
        }
        id
    }

    /// Two-view bootstrap against the initialisation reference. The
    /// reference moves to the newest keyframe once it shares too few matches
    /// with it to ever pass the inlier gate.
    fn bootstrap(&mut self, frame_index: usize, feat: FeatureSet, last_matches: &[Match]) {
        let ref_id = self.init_ref;
        let matches = if ref_id + 1 == self.keyframes.len() {
            last_matches.to_vec()
        } else {
            match_features(&self.keyframes[ref_id].features, &feat, &self.cfg.features)
        };
        let parallax =
            TrackingStats::measure(&matches, &self.keyframes[ref_id].features.keypoints, &feat.keypoints, 0)
                .median_displacement;
        let attempt = if parallax > self.cfg.keyframes.min_displacement_px {
            self.try_initialize(ref_id, &feat, &matches)
        } else {
            None
        };
        let Some((pose, inliers)) = attempt else {
            let id = self.push_keyframe(
                frame_index,
                feat,
                None,
                KeyframeStatus::Uninitialized,
                last_matches.len(),
                0,
            );
            if matches.len() < self.cfg.min_init_inliers {
                self.init_ref = id;
            }
            return;
        };
        self.keyframes[ref_id].pose = Some(Pose::identity());
        self.diag.keyframes[ref_id].status = KeyframeStatus::Origin;
        let id = self.push_keyframe(
            frame_index,
            feat,
            Some(pose),
            KeyframeStatus::Initialized,
            matches.len(),
            inliers.len(),
        );
        let pairs: Vec<(usize, usize)> =
            inliers.iter().map(|&i| (matches[i].index_a, matches[i].index_b)).collect();
        let created = self.triangulate_pairs(ref_id, id, &pairs);
        self.diag.keyframes[id].new_map_points = created;
        self.diag.initialized = true;
        self.last_posed = Some(id);
        info!(
            "map initialised from keyframes {ref_id} and {id}: {} inliers, {created} points",
            inliers.len()
        );
        for pending in ref_id + 1..id {
            self.localize_pending(pending, id);
        }
    }

    /// PnP for a keyframe emitted between the bootstrap pair, against the
    /// points of keyframe `anchor`.
    fn localize_pending(&mut self, kf: usize, anchor: usize) {
        let matches = match_features(&self.keyframes[anchor].features, &self.keyframes[kf].features, &self.cfg.features);
        let mut pts = Vec::new();
        let mut obs = Vec::new();
        let mut pairs = Vec::new();
        for m in &matches {
            if let Some(pid) = self.keyframes[anchor].map_points[m.index_a] {
                let kp = &self.keyframes[kf].features.keypoints[m.index_b];
                pts.push(self.points[&pid].position);
                obs.push(Point2::new(kp.x, kp.y));
                pairs.push((pid, m.index_b));
            }
        }
        let result = estimate_pose_pnp_with(
            &pts,
            &obs,
            &self.k,
            None,
            self.cfg.pnp_threshold_px,
            self.cfg.ransac_max_iters,
            self.seed_for(kf),
        );
        let Ok((pose, inliers, _)) = result else {
            return;
        };
        if inliers.len() < self.cfg.min_pnp_inliers {
            return;
        }
        self.keyframes[kf].pose = Some(pose);
        self.diag.keyframes[kf].status = KeyframeStatus::Tracked;
        self.diag.keyframes[kf].inliers = inliers.len();
        for &i in &inliers {
            let (pid, kp) = pairs[i];
            self.keyframes[kf].map_points[kp] = Some(pid);
            self.points.get_mut(&pid).unwrap().observations.push((kf, kp));
        }
    }

    fn try_initialize(
        &self,
        ref_id: usize,
        feat: &FeatureSet,
        matches: &[Match],
    ) -> Option<(Pose<f64>, Vec<usize>)> {
        let r = &self.keyframes[ref_id].features;
        let corrs: Vec<Correspondence<f64>> = matches
            .iter()
            .map(|m| {
                let a = &r.keypoints[m.index_a];
                let b = &feat.keypoints[m.index_b];
                Correspondence::new(Point2::new(a.x, a.y), Point2::new(b.x, b.y))
            })
            .collect();
        let (e, inliers) = estimate_essential_ransac(
            &corrs,
            &self.k,
            self.cfg.essential_threshold_px,
            self.cfg.ransac_max_iters,
            self.seed_for(ref_id),
        )
        .map_err(|e| debug!("bootstrap rejected: {e}"))
        .ok()?;
        if inliers.len() < self.cfg.min_init_inliers {
            debug!("bootstrap rejected: {} essential inliers", inliers.len());
            return None;
        }
        let normalized: Vec<_> = inliers.iter().map(|&i| corrs[i].normalized(&self.k)).collect();
        let pose = decompose_essential(&e, &normalized)
            .map_err(|e| debug!("bootstrap rejected: {e}"))
            .ok()?;
        let pose = refine_relative_pose(&pose, &normalized, BOOTSTRAP_ROBUST_SCALE_PX / self.k.mean_focal());
        let identity = Pose::identity();
        let min_cos = self.cfg.min_parallax_deg.to_radians().cos();
        let usable = inliers
            .iter()
            .filter(|&&i| {
                let c = &corrs[i];
                triangulate(&identity, &pose, &c.a, &c.b, &self.k).is_ok_and(|t| {
                    t.in_front_of_both()
                        && t.position.normalize().dot(&(t.position - pose.center()).normalize()) <= min_cos
                })
            })
            .count();
        if usable < self.cfg.min_init_inliers {
            debug!("bootstrap rejected: {usable} points with enough parallax");
            return None;
        }
        Some((pose, inliers))
    }

    /// Localises a new keyframe by PnP against points seen in the last posed
    /// keyframe, then extends and culls the map.
    fn track(&mut self, frame_index: usize, feat: FeatureSet) {
        let ref_id = self.last_posed.expect("initialised tracker has a posed keyframe");
        let reference = &self.keyframes[ref_id];
        let ref_pose = reference.pose.unwrap();
        let matches = match_features(&reference.features, &feat, &self.cfg.features);
        let mut pts = Vec::new();
        let mut obs = Vec::new();
        let mut pairs = Vec::new();
        for m in &matches {
            if let Some(pid) = reference.map_points[m.index_a] {
                let kp = &feat.keypoints[m.index_b];
                pts.push(self.points[&pid].position);
                obs.push(Point2::new(kp.x, kp.y));
                pairs.push((pid, m.index_b));
            }
        }
        let result = estimate_pose_pnp_with(
            &pts,
            &obs,
            &self.k,
            Some(&ref_pose),
            self.cfg.pnp_threshold_px,
            self.cfg.ransac_max_iters,
            self.seed_for(self.keyframes.len()),
        );
        let (pose, inliers) = match result {
            Ok((p, inl, _)) if inl.len() >= self.cfg.min_pnp_inliers => (p, inl),
            other => {
                let why = match other {
                    Ok((_, inl, _)) => format!("{} PnP inliers", inl.len()),
                    Err(e) => e.to_string(),
                };
                debug!("tracking lost at frame {frame_index}: {why}");
                self.push_keyframe(frame_index, feat, None, KeyframeStatus::Lost, matches.len(), 0);
                return;
            }
        };
        let older: Vec<usize> = (0..ref_id)
            .rev()
            .filter(|&k| self.keyframes[k].pose.is_some())
            .take(EXTRA_TRIANGULATION_REFS)
            .collect();
        let older_matches: Vec<(usize, Vec<Match>)> = older
            .iter()
            .map(|&o| (o, match_features(&self.keyframes[o].features, &feat, &self.cfg.features)))
            .collect();
        let seeds: Vec<(usize, usize)> = inliers.iter().map(|&i| (pairs[i].1, pairs[i].0)).collect();
        let (pose, assoc) = self.track_local_map(pose, &feat, &seeds, &older_matches);
        let id = self.push_keyframe(
            frame_index,
            feat,
            Some(pose),
            KeyframeStatus::Tracked,
            matches.len(),
            assoc.len(),
        );
        for (&kp, &pid) in &assoc {
            self.keyframes[id].map_points[kp] = Some(pid);
            self.points.get_mut(&pid).unwrap().observations.push((id, kp));
        }
        let fresh: Vec<(usize, usize)> = matches
            .iter()
            .filter(|m| {
                self.keyframes[ref_id].map_points[m.index_a].is_none()
                    && self.keyframes[id].map_points[m.index_b].is_none()
            })
            .map(|m| (m.index_a, m.index_b))
            .collect();
        self.refine_points(id);
        let mut created = self.triangulate_pairs(ref_id, id, &fresh);
        for (other, matches) in older_matches {
            let fresh: Vec<(usize, usize)> = matches
                .iter()
                .filter(|m| {
                    self.keyframes[other].map_points[m.index_a].is_none()
                        && self.keyframes[id].map_points[m.index_b].is_none()
                })
                .map(|m| (m.index_a, m.index_b))
                .collect();
            created += self.triangulate_pairs(other, id, &fresh);
        }
        let culled = self.cull(id);
        self.diag.keyframes[id].new_map_points = created;
        self.diag.keyframes[id].culled_map_points = culled;
    }

    /// Extends the PnP inliers (`(keypoint, map point)` pairs) with map points
    /// of older keyframes whose descriptors match and that reproject within
    /// the PnP threshold, then refines the pose on the enlarged set. Returns
    /// the pose and the associations that survive the refinement.
    fn track_local_map(
        &self,
        pose: Pose<f64>,
        feat: &FeatureSet,
        seeds: &[(usize, usize)],
        older_matches: &[(usize, Vec<Match>)],
    ) -> (Pose<f64>, BTreeMap<usize, usize>) {
        let threshold = self.cfg.pnp_threshold_px;
        let fits = |pose: &Pose<f64>, kp: usize, pid: usize| {
            let k = &feat.keypoints[kp];
            reprojection_error(pose, &self.k, &self.points[&pid].position, &Point2::new(k.x, k.y))
                .is_ok_and(|e| e <= threshold)
        };
        let mut assoc: BTreeMap<usize, usize> = seeds.iter().copied().collect();
        let mut used: BTreeSet<usize> = assoc.values().copied().collect();
        let seeded = assoc.len();
        for (other, matches) in older_matches {
            for m in matches {
                let Some(pid) = self.keyframes[*other].map_points[m.index_a] else {
                    continue;
                };
                if assoc.contains_key(&m.index_b) || used.contains(&pid) || !fits(&pose, m.index_b, pid) {
                    continue;
                }
                assoc.insert(m.index_b, pid);
                used.insert(pid);
            }
        }
        if assoc.len() == seeded {
            return (pose, assoc);
        }
        let mut pose = pose;
        for _ in 0..2 {
            let (pts, obs): (Vec<Vector3<f64>>, Vec<Point2<f64>>) = assoc
                .iter()
                .map(|(&kp, pid)| {
                    let k = &feat.keypoints[kp];
                    (self.points[pid].position, Point2::new(k.x, k.y))
                })
                .unzip();
            pose = refine_pose_gauss_newton(&pose, &self.k, &pts, &obs).0;
            let before = assoc.len();
            assoc.retain(|&kp, &mut pid| fits(&pose, kp, pid));
            if assoc.len() == before {
                break;
            }
        }
        (pose, assoc)
    }

    /// Triangulates keypoint pairs between two posed keyframes and adds the
    /// points that pass depth, parallax and reprojection checks.
    fn triangulate_pairs(&mut self, a: usize, b: usize, pairs: &[(usize, usize)]) -> usize {
        let pa = self.keyframes[a].pose.unwrap();
        let pb = self.keyframes[b].pose.unwrap();
        let (ca, cb) = (pa.center(), pb.center());
        let min_cos = self.cfg.min_parallax_deg.to_radians().cos();
        let mut created = 0;
        for &(ia, ib) in pairs {
            let ka = &self.keyframes[a].features.keypoints[ia];
            let kb = &self.keyframes[b].features.keypoints[ib];
            let (xa, xb) = (Point2::new(ka.x, ka.y), Point2::new(kb.x, kb.y));
            let Ok(t) = triangulate(&pa, &pb, &xa, &xb, &self.k) else {
                continue;
            };
            if !t.in_front_of_both() {
                continue;
            }
            let (ra, rb) = ((t.position - ca).normalize(), (t.position - cb).normalize());
            if ra.dot(&rb) > min_cos {
                continue;
            }
            let ok = [(&pa, &xa), (&pb, &xb)].iter().all(|(p, x)| {
                reprojection_error(p, &self.k, &t.position, x)
                    .is_ok_and(|e| e <= self.cfg.cull_threshold_px)
            });
            if !ok {
                continue;
            }
            let id = self.next_point;
            self.next_point += 1;
            self.points.insert(
                id,
                MapPoint {
                    id,
                    position: t.position,
                    observations: vec![(a, ia), (b, ib)],
                },
            );
            self.keyframes[a].map_points[ia] = Some(id);
            self.keyframes[b].map_points[ib] = Some(id);
            created += 1;
        }
        created
    }

    /// Re-triangulates every point seen by keyframe `kf` from all its
    /// observations, keeping the new position only if it reprojects within
    /// the cull threshold everywhere.
    fn refine_points(&mut self, kf: usize) {
        let ids: Vec<usize> = self.keyframes[kf].observed_map_points().collect();
        for pid in ids {
            let views: Vec<(Pose<f64>, Point2<f64>)> = self.points[&pid]
                .observations
                .iter()
                .filter_map(|&(k, i)| {
                    let kp = &self.keyframes[k].features.keypoints[i];
                    self.keyframes[k].pose.map(|p| (p, Point2::new(kp.x, kp.y)))
                })
                .collect();
            let Some(x) = triangulate_multiview(&views, &self.k) else {
                continue;
            };
            let ok = views.iter().all(|(p, o)| {
                reprojection_error(p, &self.k, &x, o).is_ok_and(|e| e <= self.cfg.cull_threshold_px)
            });
            if ok {
                self.points.get_mut(&pid).unwrap().position = x;
            }
        }
    }

    /// Drops points seen by keyframe `kf` that reproject badly in, or lie
    /// behind, any observing keyframe.
    fn cull(&mut self, kf: usize) -> usize {
        let ids: Vec<usize> = self.keyframes[kf].observed_map_points().collect();
        let mut removed = 0;
        for pid in ids {
            let p = &self.points[&pid];
            let keep = p.observations.len() >= 2
                && p.observations.iter().all(|&(k, i)| {
                    let kfr = &self.keyframes[k];
                    let kp = &kfr.features.keypoints[i];
                    kfr.pose.is_some_and(|pose| {
                        reprojection_error(&pose, &self.k, &p.position, &Point2::new(kp.x, kp.y))
                            .is_ok_and(|e| e <= self.cfg.cull_threshold_px)
                    })
                });
            if !keep {
                let p = self.points.remove(&pid).unwrap();
                for (k, i) in p.observations {
                    self.keyframes[k].map_points[i] = None;
                }
                removed += 1;
            }
        }
        removed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{Descriptor, Keypoint};
    use crate::vo::pose::axis_angle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    /// Ideal features: every visible world point becomes a keypoint whose
    /// descriptor is a random code unique to that point.
    fn synthetic_features(poses: &[Pose<f64>], seed: u64) -> Vec<FeatureSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(Vector3<f64>, Descriptor)> = (0..400)
            .map(|_| {
                (
                    Vector3::new(
                        rng.random_range(-6.0..6.0),
                        rng.random_range(-3.0..3.0),
                        rng.random_range(4.0..8.0),
                    ),
                    Descriptor([rng.random(), rng.random(), rng.random(), rng.random()]),
                )
            })
            .collect();
        poses
            .iter()
            .map(|pose| {
                let mut set = FeatureSet::default();
                for (x, d) in &pts {
                    let c = pose.transform(x);
                    if c.z <= 0.1 {
                        continue;
                    }
                    let u = 500.0 * c.x / c.z + 320.0;
                    let v = 500.0 * c.y / c.z + 240.0;
                    if (25.0..615.0).contains(&u) && (25.0..455.0).contains(&v) {
                        set.keypoints.push(Keypoint { x: u, y: v, score: 1.0, orientation: 0.0 });
                        set.descriptors.push(*d);
                    }
                }
                set
            })
            .collect()
    }

    #[test]
    fn static_features_never_initialise() {
        let poses = vec![Pose::identity(); 12];
        let feats = synthetic_features(&poses, 1);
        let idx: Vec<_> = (0..12).collect();
        let out = run_vo_on_features(feats, &idx, &k(), &VoConfig::default()).unwrap();
        assert_eq!(out.keyframes.len(), 1);
        assert!(out.map_points.is_empty());
        assert!(out.diagnostics.initialization_failure);
        assert!(out.keyframes[0].pose.is_none());
    }

    #[test]
    fn dolly_is_tracked_with_unit_gauge() {
        let poses: Vec<_> = (0..40)
            .map(|i| Pose::from_center(nalgebra::Matrix3::identity(), &Vector3::new(0.02 * i as f64, 0.0, 0.0)))
            .collect();
        let feats = synthetic_features(&poses, 2);
        let idx: Vec<_> = (0..40).collect();
        let out = run_vo_on_features(feats, &idx, &k(), &VoConfig::default()).unwrap();
        assert!(out.diagnostics.initialized);
        assert!(out.keyframes.len() >= 3);
        assert!(out.all_posed());
        assert_eq!(out.keyframes[0].pose.unwrap(), Pose::identity());
        let t1 = out.keyframes[1].pose.unwrap().translation.norm();
        assert!((t1 - 1.0).abs() < 1e-12);
        // centres are collinear along x
        for kf in &out.keyframes {
            let c = kf.pose.unwrap().center();
            assert!(c.y.abs() < 1e-6 && c.z.abs() < 1e-6, "{c}");
            assert!(kf.pose.unwrap().is_valid(1e-9));
        }
        // every retained point is in front of, and reprojects within 2 px in,
        // all observing keyframes
        for p in &out.map_points {
            assert!(p.observations.len() >= 2);
            for &(kid, i) in &p.observations {
                let kf = &out.keyframes[kid];
                let kp = &kf.features.keypoints[i];
                let e = reprojection_error(&kf.pose.unwrap(), &k(), &p.position, &Point2::new(kp.x, kp.y))
                    .unwrap();
                assert!(e <= 2.0);
            }
        }
    }

    #[test]
    fn deterministic() {
        let poses: Vec<_> = (0..25)
            .map(|i| {
                Pose::from_center(
                    axis_angle(&Vector3::y(), -0.01 * i as f64),
                    &Vector3::new(0.03 * i as f64, 0.0, 0.005 * i as f64),
                )
            })
            .collect();
        let idx: Vec<_> = (0..25).collect();
        let run = || run_vo_on_features(synthetic_features(&poses, 3), &idx, &k(), &VoConfig::default()).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.map_points, b.map_points);
        assert_eq!(a.diagnostics, b.diagnostics);
        let pa: Vec<_> = a.keyframes.iter().map(|k| k.pose).collect();
        let pb: Vec<_> = b.keyframes.iter().map(|k| k.pose).collect();
        assert_eq!(pa, pb);
    }

    #[test]
    fn empty_input() {
        assert!(matches!(run_vo(&[], &k(), &VoConfig::default()), Err(VoError::NoFrames)));
    }
}
