use nalgebra::{DMatrix, Matrix2x6, Matrix3, Matrix4, Matrix6, Point2, Vector2, Vector3, Vector6};

use crate::linalg::{hartley_normalization, null_vector, skew};
use crate::media_io::CameraIntrinsics;
use crate::ransac::{ransac, RansacParams};
use crate::Real;

use super::{Pose, VoError};

pub const PNP_SAMPLE_SIZE: usize = 6;
pub const GN_MAX_ITERS: usize = 50;
pub const GN_UPDATE_TOL: f64 = 1e-10;
pub const GN_MAX_HALVINGS: usize = 10;

/// Pixel projection `K·π(R X + t)`.
pub fn project<T: Real>(
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
    x: &Vector3<T>,
) -> Result<Point2<T>, VoError> {
    let c = pose.transform(x);
    if c.z <= T::zero() {
        return Err(VoError::BehindCamera);
    }
    Ok(Point2::new(
        intrinsics.fx * c.x / c.z + intrinsics.cx,
        intrinsics.fy * c.y / c.z + intrinsics.cy,
    ))
}

/// Euclidean pixel distance between the projection of `x` and `observed`.
pub fn reprojection_error<T: Real>(
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
    x: &Vector3<T>,
    observed: &Point2<T>,
) -> Result<T, VoError> {
    Ok((project(pose, intrinsics, x)? - observed).norm())
}

/// Jacobian of the projected pixel with respect to the left-multiplicative
/// pose increment `δ = (ω, v)` of [`Pose::retract`], evaluated at `δ = 0`.
pub fn projection_jacobian<T: Real>(
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
    x: &Vector3<T>,
) -> Matrix2x6<T> {
    let c = pose.transform(x);
    let iz = T::one() / c.z;
    let iz2 = iz * iz;
    let z = T::zero();
    let d_proj = nalgebra::Matrix2x3::new(
        intrinsics.fx * iz,
        z,
        -intrinsics.fx * c.x * iz2,
        z,
        intrinsics.fy * iz,
        -intrinsics.fy * c.y * iz2,
    );
    let mut d_cam = nalgebra::Matrix3x6::zeros();
    d_cam.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&c)));
    d_cam.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
    d_proj * d_cam
}

fn total_cost<T: Real>(
    pose: &Pose<T>,
    k: &CameraIntrinsics<T>,
    points: &[Vector3<T>],
    obs: &[Point2<T>],
) -> Option<T> {
    let mut cost = T::zero();
    for (x, o) in points.iter().zip(obs) {
        let p = project(pose, k, x).ok()?;
        cost += (p - o).norm_squared();
    }
    Some(cost)
}

/// Trace of one Gauss-Newton run.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementReport<T: Real> {
    /// Total squared reprojection error before the first and after each
    /// accepted iteration.
    pub costs: Vec<T>,
    pub iterations: usize,
    pub last_update_norm: T,
    pub converged: bool,
}

/// Pose-only Gauss-Newton on the total squared reprojection error.
///
/// A step that raises the cost is halved up to ten times; if it still does
/// not help, refinement stops. The run converges once the full update norm
/// drops below `1e-10`.
pub fn refine_pose_gauss_newton<T: Real>(
    pose: &Pose<T>,
    intrinsics: &CameraIntrinsics<T>,
    points: &[Vector3<T>],
    observations: &[Point2<T>],
) -> (Pose<T>, RefinementReport<T>) {
    let mut pose = *pose;
    let mut report = RefinementReport {
        costs: Vec::new(),
        iterations: 0,
        last_update_norm: T::zero(),
        converged: false,
    };
    let Some(mut cost) = total_cost(&pose, intrinsics, points, observations) else {
        return (pose, report);
    };
    report.costs.push(cost);
    let tol = T::tol(GN_UPDATE_TOL);
    for _ in 0..GN_MAX_ITERS {
        report.iterations += 1;
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (x, o) in points.iter().zip(observations) {
            let Ok(p) = project(&pose, intrinsics, x) else {
                return (pose, report);
            };
            let r: Vector2<T> = p - o;
            let j = projection_jacobian(&pose, intrinsics, x);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let step = match h.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => match h.svd(true, true).solve(&(-g), T::tol(1e-12)) {
                Ok(s) => s,
                Err(_) => break,
            },
        };
        let norm = step.norm();
        report.last_update_norm = norm;
        if !norm.is_finite() {
            break;
        }
        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..=GN_MAX_HALVINGS {
            let cand = pose.retract(&(step * scale));
            if let Some(c) = total_cost(&cand, intrinsics, points, observations) {
                if c <= cost {
                    accepted = Some((cand, c));
                    break;
                }
            }
            scale *= T::lit(0.5);
        }
        match accepted {
            Some((p, c)) => {
                pose = p;
                cost = c;
                report.costs.push(c);
            }
            None => {
                report.converged = norm < tol;
                break;
            }
        }
        if norm < tol {
            report.converged = true;
            break;
        }
    }
    (pose, report)
}

/// Linear pose from at least six 3D–2D correspondences; the 2D points are
/// normalised image coordinates. The projection matrix is fitted by DLT and
/// its left 3×3 block projected onto the nearest scaled rotation.
pub(crate) fn dlt_pose<T: Real>(points: &[Vector3<T>], normalized: &[Point2<T>]) -> Option<Pose<T>> {
    let n = points.len();
    if n < PNP_SAMPLE_SIZE {
        return None;
    }
    // similarity conditioning of the world points
    let centroid = points.iter().fold(Vector3::zeros(), |a, p| a + p) / T::lit(n as f64);
    let mean_dist = points
        .iter()
        .fold(T::zero(), |a, p| a + (p - centroid).norm())
        / T::lit(n as f64);
    if mean_dist <= T::zero() {
        return None;
    }
    let s3 = T::lit(3f64.sqrt()) / mean_dist;
    let mut t3 = Matrix4::identity() * s3;
    t3[(3, 3)] = T::one();
    t3.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-centroid * s3));
    let t2 = hartley_normalization(normalized);

    let mut a = DMatrix::zeros(2 * n, 12);
    for (i, (x, p)) in points.iter().zip(normalized).enumerate() {
        let xw = t3 * x.push(T::one());
        let q = t2 * Vector3::new(p.x, p.y, T::one());
        let (u, v) = (q.x / q.z, q.y / q.z);
        for j in 0..4 {
            a[(2 * i, j)] = xw[j];
            a[(2 * i, 8 + j)] = -u * xw[j];
            a[(2 * i + 1, 4 + j)] = xw[j];
            a[(2 * i + 1, 8 + j)] = -v * xw[j];
        }
    }
    let (v, _, _) = null_vector(a)?;
    let p_hat = nalgebra::Matrix3x4::from_row_slice(v.as_slice());
    let mut p = t2.try_inverse()? * p_hat * t3;
    // orient so the majority of points have positive depth
    let positive = points
        .iter()
        .filter(|x| (p * x.push(T::one())).z > T::zero())
        .count();
    if 2 * positive < n {
        p = -p;
    }
    let m: Matrix3<T> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() <= T::zero() {
        return None;
    }
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let r = u * v_t;
    if r.determinant() <= T::zero() {
        return None;
    }
    let scale = svd.singular_values.sum() / T::lit(3.0);
    if scale <= T::zero() {
        return None;
    }
    let t = p.column(3) / scale;
    let pose = Pose::new(r, t);
    pose.translation.iter().all(|v| v.is_finite()).then_some(pose)
}

/// Robust pose from 3D–2D correspondences.
///
/// Six-point DLT hypotheses (plus `initial_pose`, when given) are scored by
/// reprojection error below `threshold_px`; the winner is refined with
/// [`refine_pose_gauss_newton`] on its inliers and the inlier set is
/// recomputed under the refined pose.
pub fn estimate_pose_pnp<T: Real>(
    map_points: &[Vector3<T>],
    observations: &[Point2<T>],
    intrinsics: &CameraIntrinsics<T>,
    initial_pose: Option<&Pose<T>>,
    threshold_px: T,
    seed: u64,
) -> Result<(Pose<T>, Vec<usize>), VoError> {
    estimate_pose_pnp_with(map_points, observations, intrinsics, initial_pose, threshold_px, 2000, seed)
        .map(|(p, inl, _)| (p, inl))
}

/// As [`estimate_pose_pnp`] with an explicit iteration cap, also returning
/// the refinement trace.
pub fn estimate_pose_pnp_with<T: Real>(
    map_points: &[Vector3<T>],
    observations: &[Point2<T>],
    intrinsics: &CameraIntrinsics<T>,
    initial_pose: Option<&Pose<T>>,
    threshold_px: T,
    max_iters: usize,
    seed: u64,
) -> Result<(Pose<T>, Vec<usize>, RefinementReport<T>), VoError> {
    assert_eq!(map_points.len(), observations.len());
    let n = map_points.len();
    if n < PNP_SAMPLE_SIZE {
        return Err(VoError::InsufficientCorrespondences {
            needed: PNP_SAMPLE_SIZE,
            got: n,
        });
    }
    let normalized: Vec<_> = observations.iter().map(|o| intrinsics.normalize(o)).collect();
    let inliers_of = |pose: &Pose<T>| {
        let mut inl = Vec::new();
        let mut cost = 0.0;
        for i in 0..n {
            match reprojection_error(pose, intrinsics, &map_points[i], &observations[i]) {
                Ok(e) if e < threshold_px => {
                    inl.push(i);
                    cost += e.as_f64().powi(2);
                }
                _ => cost += threshold_px.as_f64().powi(2),
            }
        }
        (inl, cost)
    };
    let params = RansacParams {
        max_iters,
        confidence: 0.99,
        seed,
    };
    let mut pts = Vec::with_capacity(PNP_SAMPLE_SIZE);
    let mut obs = Vec::with_capacity(PNP_SAMPLE_SIZE);
    let best = ransac(
        n,
        PNP_SAMPLE_SIZE,
        &params,
        initial_pose.copied(),
        |s| {
            pts.clear();
            obs.clear();
            pts.extend(s.iter().map(|&i| map_points[i]));
            obs.extend(s.iter().map(|&i| normalized[i]));
            dlt_pose(&pts, &obs)
        },
        inliers_of,
    )
    .filter(|b| b.inliers.len() >= PNP_SAMPLE_SIZE)
    .ok_or(VoError::NoConsensus)?;

    let sel_pts: Vec<_> = best.inliers.iter().map(|&i| map_points[i]).collect();
    let sel_obs: Vec<_> = best.inliers.iter().map(|&i| observations[i]).collect();
    let (refined, report) = refine_pose_gauss_newton(&best.model, intrinsics, &sel_pts, &sel_obs);
    let (inliers, _) = inliers_of(&refined);
    if inliers.len() < best.inliers.len() {
        return Ok((best.model, best.inliers, report));
    }
    Ok((refined, inliers, report))
}
