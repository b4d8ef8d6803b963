use nalgebra::{DMatrix, DVector, Matrix3, Point2, Rotation3, Vector3, Vector5};

use crate::linalg::{hartley_normalization, null_vector, skew};
use crate::media_io::CameraIntrinsics;
use crate::ransac::{ransac, RansacParams};
use crate::Real;

use super::pnp::{GN_MAX_HALVINGS, GN_MAX_ITERS, GN_UPDATE_TOL};
use super::triangulation::triangulate_normalized;
use super::{Pose, VoError};

/// A point seen in view `a` and view `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<T: Real> {
    pub a: Point2<T>,
    pub b: Point2<T>,
}

impl<T: Real> Correspondence<T> {
    pub fn new(a: Point2<T>, b: Point2<T>) -> Self {
        Self { a, b }
    }

    /// Both points mapped through `K⁻¹`.
    pub fn normalized(&self, k: &CameraIntrinsics<T>) -> Self {
        Self {
            a: k.normalize(&self.a),
            b: k.normalize(&self.b),
        }
    }
}

/// Essential matrix with the two-view constraint `x_bᵀ E x_a = 0` in
/// normalised camera coordinates. Singular values are always `(1, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix<T: Real>(Matrix3<T>);

impl<T: Real> EssentialMatrix<T> {
    /// Projects an arbitrary 3×3 matrix onto the essential manifold.
    pub fn from_matrix(m: &Matrix3<T>) -> Self {
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let s = Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), T::zero()));
        Self(u * s * v_t)
    }

    /// `E = [t]ₓ R` for the relative pose `x_b = R x_a + t`.
    pub fn from_pose(pose: &Pose<T>) -> Self {
        Self::from_matrix(&(crate::linalg::skew(&pose.translation) * pose.rotation))
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    /// First-order geometric (Sampson) distance of a normalised correspondence.
    pub fn sampson_distance(&self, c: &Correspondence<T>) -> T {
        sampson(&self.0, c)
    }
}

fn sampson<T: Real>(e: &Matrix3<T>, c: &Correspondence<T>) -> T {
    let xa = Vector3::new(c.a.x, c.a.y, T::one());
    let xb = Vector3::new(c.b.x, c.b.y, T::one());
    let ea = e * xa;
    let etb = e.transpose() * xb;
    let num = xb.dot(&ea);
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= T::zero() {
        return T::max_value().unwrap_or(T::one() / T::default_epsilon());
    }
    (num * num / den).sqrt()
}

/// Hartley-normalised eight-point estimate on normalised coordinates,
/// projected onto the essential manifold.
pub fn eight_point<T: Real>(corrs: &[Correspondence<T>]) -> Option<EssentialMatrix<T>> {
    if corrs.len() < 8 {
        return None;
    }
    let pa: Vec<_> = corrs.iter().map(|c| c.a).collect();
    let pb: Vec<_> = corrs.iter().map(|c| c.b).collect();
    let ta = hartley_normalization(&pa);
    let tb = hartley_normalization(&pb);
    let mut a = DMatrix::zeros(corrs.len(), 9);
    for (i, c) in corrs.iter().enumerate() {
        let p = crate::linalg::apply_h(&ta, &c.a);
        let q = crate::linalg::apply_h(&tb, &c.b);
        let row = [
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            T::one(),
        ];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let (v, _, _) = null_vector(a)?;
    let e_hat = Matrix3::from_row_slice(v.as_slice());
    let e = tb.transpose() * e_hat * ta;
    if e.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Some(EssentialMatrix::from_matrix(&e))
}

/// Robust essential-matrix estimate from pixel correspondences.
///
/// Hypotheses come from random 8-point samples; a correspondence is an
/// inlier when its Sampson distance, converted to pixels with the mean focal
/// length, is below `threshold_px`. The winner is re-estimated on its full
/// consensus set and the inliers are recomputed against the refit.
pub fn estimate_essential_ransac<T: Real>(
    correspondences: &[Correspondence<T>],
    intrinsics: &CameraIntrinsics<T>,
    threshold_px: T,
    max_iters: usize,
    seed: u64,
) -> Result<(EssentialMatrix<T>, Vec<usize>), VoError> {
    let normalized: Vec<_> = correspondences
        .iter()
        .map(|c| c.normalized(intrinsics))
        .collect();
    estimate_essential_ransac_normalized(
        &normalized,
        threshold_px / intrinsics.mean_focal(),
        max_iters,
        seed,
    )
}

/// As [`estimate_essential_ransac`], on correspondences already in
/// normalised coordinates with a threshold in the same units.
pub fn estimate_essential_ransac_normalized<T: Real>(
    corrs: &[Correspondence<T>],
    threshold: T,
    max_iters: usize,
    seed: u64,
) -> Result<(EssentialMatrix<T>, Vec<usize>), VoError> {
    if corrs.len() < 8 {
        return Err(VoError::InsufficientCorrespondences {
            needed: 8,
            got: corrs.len(),
        });
    }
    let inliers_of = |e: &EssentialMatrix<T>| {
        let mut inl = Vec::new();
        let mut cost = 0.0;
        for (i, c) in corrs.iter().enumerate() {
            let d = e.sampson_distance(c);
            if d < threshold {
                inl.push(i);
                cost += d.as_f64().powi(2);
            } else {
                cost += threshold.as_f64().powi(2);
            }
        }
        (inl, cost)
    };
    let params = RansacParams {
        max_iters,
        confidence: 0.99,
        seed,
    };
    let mut sample_buf = Vec::with_capacity(8);
    let best = ransac(
        corrs.len(),
        8,
        &params,
        None,
        |s| {
            sample_buf.clear();
            sample_buf.extend(s.iter().map(|&i| corrs[i]));
            eight_point(&sample_buf)
        },
        inliers_of,
    );
    let best = match best {
        Some(b) if b.inliers.len() >= 8 => b,
        Some(b) => return Err(VoError::DegenerateConfiguration(format!(
            "consensus of {} below 8",
            b.inliers.len()
        ))),
        None => return Err(VoError::DegenerateConfiguration("no valid hypothesis".into())),
    };

    // refit on the consensus set; keep the refit only if it does not shrink it
    let subset: Vec<_> = best.inliers.iter().map(|&i| corrs[i]).collect();
    let (mut e, mut inliers) = (best.model, best.inliers);
    if let Some(refit) = eight_point(&subset) {
        let (inl, _) = inliers_of(&refit);
        if inl.len() >= inliers.len() {
            e = refit;
            inliers = inl;
        }
    }
    Ok((e, inliers))
}

/// Robust Gauss-Newton polish of a relative pose `x_b = R x_a + t` on the
/// Sampson residuals of normalised correspondences, keeping `‖t‖ = 1`.
///
/// Residuals go through the Cauchy loss `s² ln(1 + (r/s)²)` with scale `s`
/// (normalised units), solved by iteratively reweighted least squares. The
/// rotation is updated by `exp(ω) R` and the translation moves in its
/// tangent plane before renormalisation. A step that raises the loss is
/// halved up to ten times; refinement stops when no step helps, the update
/// norm drops below `1e-10`, or after 50 iterations.
pub fn refine_relative_pose<T: Real>(pose: &Pose<T>, corrs: &[Correspondence<T>], scale: T) -> Pose<T> {
    if corrs.len() < 5 || scale <= T::zero() {
        return *pose;
    }
    let residuals = |p: &Pose<T>| -> DVector<T> {
        let e = skew(&p.translation) * p.rotation;
        DVector::from_iterator(corrs.len(), corrs.iter().map(|c| signed_sampson(&e, c)))
    };
    let s2 = scale * scale;
    let loss = |r: &DVector<T>| r.iter().fold(T::zero(), |acc, &x| acc + s2 * (T::one() + x * x / s2).ln());
    let h = T::default_epsilon().powf(T::lit(1.0 / 3.0));
    let mut pose = Pose::new(pose.rotation, pose.translation.normalize());
    let mut r = residuals(&pose);
    let mut current = loss(&r);
    for _ in 0..GN_MAX_ITERS {
        let mut jac = DMatrix::zeros(corrs.len(), 5);
        for k in 0..5 {
            let mut d = Vector5::zeros();
            d[k] = h;
            let diff = (residuals(&step_relative(&pose, &d)) - residuals(&step_relative(&pose, &-d))) / (h + h);
            jac.set_column(k, &diff);
        }
        let w = r.map(|x| T::one() / (T::one() + x * x / s2));
        let jtw = jac.transpose() * DMatrix::from_diagonal(&w);
        let Some(chol) = (&jtw * &jac).cholesky() else { break };
        let mut delta: Vector5<T> = -chol.solve(&(&jtw * &r)).fixed_rows::<5>(0).into_owned();
        let mut accepted = None;
        for _ in 0..=GN_MAX_HALVINGS {
            let cand = step_relative(&pose, &delta);
            let rc = residuals(&cand);
            let c = loss(&rc);
            if c <= current {
                accepted = Some((cand, rc, c));
                break;
            }
            delta /= T::lit(2.0);
        }
        let Some((cand, rc, c)) = accepted else { break };
        pose = cand;
        r = rc;
        current = c;
        if delta.norm() < T::lit(GN_UPDATE_TOL) {
            break;
        }
    }
    pose
}

fn step_relative<T: Real>(pose: &Pose<T>, d: &Vector5<T>) -> Pose<T> {
    let t = pose.translation;
    let helper = if t.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
    let b1 = t.cross(&helper).normalize();
    let b2 = t.cross(&b1);
    let rot = Rotation3::new(Vector3::new(d[0], d[1], d[2])).into_inner();
    Pose::new(rot * pose.rotation, (t + b1 * d[3] + b2 * d[4]).normalize())
}

fn signed_sampson<T: Real>(e: &Matrix3<T>, c: &Correspondence<T>) -> T {
    let xa = Vector3::new(c.a.x, c.a.y, T::one());
    let xb = Vector3::new(c.b.x, c.b.y, T::one());
    let ea = e * xa;
    let etb = e.transpose() * xb;
    let den = ea.x * ea.x + ea.y * ea.y + etb.x * etb.x + etb.y * etb.y;
    if den <= T::zero() {
        return T::zero();
    }
    xb.dot(&ea) / den.sqrt()
}

/// The four `(R, t)` factorisations of `E`, with `‖t‖ = 1`.
pub fn pose_candidates<T: Real>(e: &EssentialMatrix<T>) -> [Pose<T>; 4] {
    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    // the third singular value is zero, so flipping its vectors keeps E
    if u.determinant() < T::zero() {
        let c = -u.column(2);
        u.set_column(2, &c);
    }
    if v_t.determinant() < T::zero() {
        let r = -v_t.row(2);
        v_t.set_row(2, &r);
    }
    let (z, o) = (T::zero(), T::one());
    let w = Matrix3::new(z, -o, z, o, z, z, z, z, o);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t: Vector3<T> = u.column(2).into_owned().normalize();
    [
        Pose::new(r1, t),
        Pose::new(r1, -t),
        Pose::new(r2, t),
        Pose::new(r2, -t),
    ]
}

/// Relative pose `x_b = R x_a + t` (`‖t‖ = 1`) selected by cheirality:
/// the candidate placing the most triangulated points in front of both
/// cameras wins. Correspondences are in normalised coordinates.
pub fn decompose_essential<T: Real>(
    e: &EssentialMatrix<T>,
    correspondences: &[Correspondence<T>],
) -> Result<Pose<T>, VoError> {
    if correspondences.is_empty() {
        return Err(VoError::CheiralityFailure("no correspondences".into()));
    }
    let identity = Pose::identity();
    let counts: Vec<usize> = pose_candidates(e)
        .iter()
        .map(|cand| {
            correspondences
                .iter()
                .filter(|c| {
                    triangulate_normalized(&identity, cand, &c.a, &c.b)
                        .is_some_and(|(x, _)| x.z > T::zero() && cand.transform(&x).z > T::zero())
                })
                .count()
        })
        .collect();
    let best = *counts.iter().max().unwrap();
    if best == 0 {
        return Err(VoError::CheiralityFailure(
            "no candidate puts any point in front of both cameras".into(),
        ));
    }
    if counts.iter().filter(|&&c| c == best).count() > 1 {
        return Err(VoError::CheiralityFailure(format!(
            "ambiguous candidates, positive-depth counts {counts:?}"
        )));
    }
    let idx = counts.iter().position(|&c| c == best).unwrap();
    Ok(pose_candidates(e)[idx])
}
