//! Viewpoint clustering: a keyframe affinity graph and dominant-set
//! extraction by replicator dynamics.
//!
//! Affinities combine camera-centre distance and relative rotation angle.
//! When poses are unavailable an appearance affinity (geometrically
//! verified match count) is used instead. Clusters are peeled off one
//! dominant set at a time; the number of clusters is never a parameter.

mod replicator;

pub use replicator::{
    extract_dominant_sets, replicator_dynamics, replicator_dynamics_observed, Cluster,
    DominantSets, DomsetParams, ReplicatorState,
};

use nalgebra::{DMatrix, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vo::{rotation_angle, Pose};
use crate::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomsetError {
    #[error("affinity matrix is {rows}x{cols} but there are {ids} node ids")]
    Shape { rows: usize, cols: usize, ids: usize },
    #[error("affinity matrix is not symmetric at ({0}, {1})")]
    Asymmetric(usize, usize),
    #[error("affinity ({0}, {1}) is negative or not finite")]
    InvalidWeight(usize, usize),
    #[error("diagonal entry {0} is not zero")]
    NonZeroDiagonal(usize),
    #[error("keyframe {0} has no pose")]
    MissingPose(usize),
}

/// Symmetric, non-negative affinity matrix with a zero diagonal, indexed
/// like `node_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph<T: Real> {
    node_ids: Vec<usize>,
    weights: DMatrix<T>,
}

impl<T: Real> AffinityGraph<T> {
    pub fn new(node_ids: Vec<usize>, weights: DMatrix<T>) -> Result<Self, DomsetError> {
        let n = node_ids.len();
        if weights.nrows() != n || weights.ncols() != n {
            return Err(DomsetError::Shape {
                rows: weights.nrows(),
                cols: weights.ncols(),
                ids: n,
            });
        }
        for i in 0..n {
            if weights[(i, i)] != T::zero() {
                return Err(DomsetError::NonZeroDiagonal(i));
            }
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < T::zero() {
                    return Err(DomsetError::InvalidWeight(i, j));
                }
                if w != weights[(j, i)] {
                    return Err(DomsetError::Asymmetric(i, j));
                }
            }
        }
        Ok(Self { node_ids, weights })
    }

    /// Graph over nodes `0..n`.
    pub fn from_matrix(weights: DMatrix<T>) -> Result<Self, DomsetError> {
        Self::new((0..weights.nrows()).collect(), weights)
    }

    pub fn len(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_ids.is_empty()
    }

    pub fn node_ids(&self) -> &[usize] {
        &self.node_ids
    }

    pub fn weights(&self) -> &DMatrix<T> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> T {
        self.weights[(i, j)]
    }

    /// Same graph with every weight multiplied by `k > 0`.
    pub fn scaled(&self, k: T) -> Self {
        Self {
            node_ids: self.node_ids.clone(),
            weights: &self.weights * k,
        }
    }

    /// Graph with nodes reordered so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.len();
        assert_eq!(perm.len(), n);
        Self {
            node_ids: perm.iter().map(|&p| self.node_ids[p]).collect(),
            weights: DMatrix::from_fn(n, n, |i, j| self.weights[(perm[i], perm[j])]),
        }
    }

    fn symmetric_from_fn(node_ids: Vec<usize>, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let n = node_ids.len();
        let mut weights = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i + 1..n {
                let w = f(i, j);
                weights[(i, j)] = w;
                weights[(j, i)] = w;
            }
        }
        Self { node_ids, weights }
    }
}

/// Kernel widths of the pose affinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    /// Position bandwidth, in units of the scene scale.
    pub sigma_pos: f64,
    /// Rotation bandwidth in radians.
    pub sigma_rot: f64,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            sigma_pos: 0.5,
            sigma_rot: std::f64::consts::FRAC_PI_3,
        }
    }
}

/// `exp(−(d_pos/(σ_p·s))²) · exp(−(d_rot/σ_r)²)` with `d_pos` the distance
/// between camera centres and `d_rot` the relative rotation angle.
pub fn pose_affinity<T: Real>(
    a: &Pose<T>,
    b: &Pose<T>,
    sigma_pos: T,
    sigma_rot: T,
    scene_scale: T,
) -> T {
    let d_pos = (a.center() - b.center()).norm();
    let d_rot = rotation_angle(&(a.rotation.transpose() * b.rotation));
    let p = d_pos / (sigma_pos * scene_scale);
    let r = d_rot / sigma_rot;
    (-(p * p)).exp() * (-(r * r)).exp()
}

/// Median distance of the points to their centroid; 1 for fewer than three
/// points or when that median is zero.
pub fn scene_scale<T: Real>(centers: &[Vector3<T>]) -> T {
    if centers.len() < 3 {
        return T::one();
    }
    let n = T::lit(centers.len() as f64);
    let centroid = centers.iter().fold(Vector3::zeros(), |a, c| a + c) / n;
    let mut d: Vec<T> = centers.iter().map(|c| (c - centroid).norm()).collect();
    d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        (d[m / 2 - 1] + d[m / 2]) * T::lit(0.5)
    };
    if med > T::zero() {
        med
    } else {
        T::one()
    }
}

/// Pose-affinity graph over keyframes given as `(id, pose)`.
pub fn build_affinity_graph<T: Real>(keyframes: &[(usize, Pose<T>)], params: &AffinityParams) -> AffinityGraph<T> {
    let centers: Vec<_> = keyframes.iter().map(|(_, p)| p.center()).collect();
    let scale = scene_scale(&centers);
    let (sp, sr) = (T::lit(params.sigma_pos), T::lit(params.sigma_rot));
    AffinityGraph::symmetric_from_fn(keyframes.iter().map(|(id, _)| *id).collect(), |i, j| {
        pose_affinity(&keyframes[i].1, &keyframes[j].1, sp, sr, scale)
    })
}

/// As [`build_affinity_graph`] for keyframes whose pose may be missing.
pub fn try_build_affinity_graph<T: Real>(
    keyframes: &[(usize, Option<Pose<T>>)],
    params: &AffinityParams,
) -> Result<AffinityGraph<T>, DomsetError> {
    let posed = keyframes
        .iter()
        .map(|(id, p)| p.map(|p| (*id, p)).ok_or(DomsetError::MissingPose(*id)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_affinity_graph(&posed, params))
}

/// Appearance affinity: verified matches over the smaller keypoint count,
/// capped at 1.
pub fn appearance_affinity<T: Real>(inliers: usize, keypoints_a: usize, keypoints_b: usize) -> T {
    let denom = keypoints_a.min(keypoints_b);
    if denom == 0 {
        return T::zero();
    }
    T::lit((inliers as f64 / denom as f64).min(1.0))
}

/// Appearance-only graph; `inliers(i, j)` gives the verified match count
/// between nodes `i < j`.
pub fn build_appearance_graph<T: Real>(
    node_ids: Vec<usize>,
    keypoint_counts: &[usize],
    mut inliers: impl FnMut(usize, usize) -> usize,
) -> AffinityGraph<T> {
    assert_eq!(node_ids.len(), keypoint_counts.len());
    AffinityGraph::symmetric_from_fn(node_ids, |i, j| {
        appearance_affinity(inliers(i, j), keypoint_counts[i], keypoint_counts[j])
    })
}
