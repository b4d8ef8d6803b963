use nalgebra::{DMatrix, Matrix3, Point2, Vector3};

use crate::features::{Keypoint, Match};
use crate::linalg::{apply_h, hartley_normalization, null_vector};
use crate::ransac::{ransac, RansacParams};
use crate::vo::Correspondence;
use crate::Real;

use super::StitchError;

/// Plane projective transform, scaled so that `H[2][2] = 1` (or to unit
/// Frobenius norm when that entry vanishes).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography<T: Real>(Matrix3<T>);

impl<T: Real> Homography<T> {
    /// Normalises `m`; fails for singular or non-finite matrices.
    pub fn new(m: Matrix3<T>) -> Result<Self, StitchError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(StitchError::DegenerateConfiguration("non-finite homography".into()));
        }
        let h22 = m[(2, 2)];
        let m = if h22.abs() > T::tol(1e-12) * m.norm() {
            m / h22
        } else {
            m / m.norm()
        };
        if m.determinant().abs() <= T::tol(1e-12) || m.iter().any(|v| !v.is_finite()) {
            return Err(StitchError::DegenerateConfiguration("singular homography".into()));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(dx: T, dy: T) -> Self {
        let (o, z) = (T::one(), T::zero());
        Self(Matrix3::new(o, z, dx, z, o, dy, z, z, o))
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.0
    }

    #[inline]
    pub fn apply(&self, p: &Point2<T>) -> Point2<T> {
        apply_h(&self.0, p)
    }

    pub fn inverse(&self) -> Self {
        // the constructor rejected singular matrices
        Self::new(self.0.try_inverse().expect("invertible homography")).expect("invertible homography")
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.0 * other.0).unwrap_or(Self(self.0 * other.0))
    }

    /// Forward plus backward transfer distance of `a ↦ b`.
    pub fn symmetric_transfer_error(&self, a: &Point2<T>, b: &Point2<T>) -> T {
        let inv = self.0.try_inverse().unwrap_or(Matrix3::zeros());
        let fwd = (apply_h(&self.0, a) - b).norm();
        let bwd = (apply_h(&inv, b) - a).norm();
        let e = fwd + bwd;
        if e.is_finite() {
            e
        } else {
            T::max_value().unwrap_or(T::one() / T::default_epsilon())
        }
    }

    pub fn cast<U: Real>(&self) -> Homography<U> {
        Homography(self.0.map(|v| U::lit(v.as_f64())))
    }
}

fn collinear<T: Real>(p: &Point2<T>, q: &Point2<T>, r: &Point2<T>) -> bool {
    let cross = (q.x - p.x) * (r.y - p.y) - (q.y - p.y) * (r.x - p.x);
    let scale = (q - p).norm() * (r - p).norm();
    cross.abs() <= T::tol(1e-9) * scale.max(T::tol(1e-300))
}

fn has_collinear_triple<T: Real>(pts: &[Point2<T>]) -> bool {
    let n = pts.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if collinear(&pts[i], &pts[j], &pts[k]) {
                    return true;
                }
            }
        }
    }
    false
}

/// Hartley-normalised DLT homography mapping each `a` onto its `b`.
///
/// Minimal (four-point) inputs with three collinear points on either side
/// are rejected, as are systems whose smallest singular value is not
/// separated from the next one.
pub fn estimate_homography_dlt<T: Real>(corrs: &[Correspondence<T>]) -> Result<Homography<T>, StitchError> {
    let n = corrs.len();
    if n < 4 {
        return Err(StitchError::InsufficientMatches { needed: 4, got: n });
    }
    let pa: Vec<_> = corrs.iter().map(|c| c.a).collect();
    let pb: Vec<_> = corrs.iter().map(|c| c.b).collect();
    if n == 4 && (has_collinear_triple(&pa) || has_collinear_triple(&pb)) {
        return Err(StitchError::DegenerateConfiguration("three collinear points".into()));
    }
    let ta = hartley_normalization(&pa);
    let tb = hartley_normalization(&pb);
    let z = T::zero();
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, c) in corrs.iter().enumerate() {
        let p = apply_h(&ta, &c.a);
        let q = apply_h(&tb, &c.b);
        let r1 = [-p.x, -p.y, -T::one(), z, z, z, q.x * p.x, q.x * p.y, q.x];
        let r2 = [z, z, z, -p.x, -p.y, -T::one(), q.y * p.x, q.y * p.y, q.y];
        for j in 0..9 {
            a[(2 * i, j)] = r1[j];
            a[(2 * i + 1, j)] = r2[j];
        }
    }
    let largest = a.norm();
    let (v, smin, second) = null_vector(a).ok_or_else(|| StitchError::DegenerateConfiguration("SVD failed".into()))?;
    if second - smin <= T::tol(1e-12) * largest {
        return Err(StitchError::DegenerateConfiguration("null space is not one-dimensional".into()));
    }
    let h_hat = Matrix3::from_row_slice(v.as_slice());
    let inv_tb = tb
        .try_inverse()
        .ok_or_else(|| StitchError::DegenerateConfiguration("coincident points".into()))?;
    Homography::new(inv_tb * h_hat * ta)
}

/// Robust homography from putative point correspondences.
///
/// Minimal four-point DLT hypotheses are scored by symmetric transfer
/// error below `threshold_px`; the winner is refitted by DLT on all its
/// inliers and the inlier set recomputed.
pub fn estimate_homography_ransac_points<T: Real>(
    corrs: &[Correspondence<T>],
    threshold_px: T,
    max_iters: usize,
    seed: u64,
) -> Result<(Homography<T>, Vec<usize>), StitchError> {
    if corrs.len() < 4 {
        return Err(StitchError::InsufficientMatches {
            needed: 4,
            got: corrs.len(),
        });
    }
    let inliers_of = |h: &Homography<T>| {
        let mut inl = Vec::new();
        let mut cost = 0.0;
        for (i, c) in corrs.iter().enumerate() {
            let e = h.symmetric_transfer_error(&c.a, &c.b);
            if e < threshold_px {
                inl.push(i);
                cost += e.as_f64().powi(2);
            } else {
                cost += threshold_px.as_f64().powi(2);
            }
        }
        (inl, cost)
    };
    let params = RansacParams {
        max_iters,
        confidence: 0.99,
        seed,
    };
    let mut sample = Vec::with_capacity(4);
    let best = ransac(
        corrs.len(),
        4,
        &params,
        None,
        |s| {
            sample.clear();
            sample.extend(s.iter().map(|&i| corrs[i]));
            estimate_homography_dlt(&sample).ok()
        },
        inliers_of,
    )
    .filter(|b| b.inliers.len() >= 4)
    .ok_or(StitchError::NoConsensus)?;

    let subset: Vec<_> = best.inliers.iter().map(|&i| corrs[i]).collect();
    if let Ok(refit) = estimate_homography_dlt(&subset) {
        let (inl, _) = inliers_of(&refit);
        if inl.len() >= best.inliers.len() {
            return Ok((refit, inl));
        }
    }
    Ok((best.model, best.inliers))
}

/// [`estimate_homography_ransac_points`] over descriptor matches; inlier
/// indices refer to `matches`.
pub fn estimate_homography_ransac(
    matches: &[Match],
    keypoints_a: &[Keypoint],
    keypoints_b: &[Keypoint],
    threshold_px: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(Homography<f64>, Vec<usize>), StitchError> {
    let corrs: Vec<Correspondence<f64>> = matches
        .iter()
        .map(|m| {
            let a = &keypoints_a[m.index_a];
            let b = &keypoints_b[m.index_b];
            Correspondence::new(Point2::new(a.x, a.y), Point2::new(b.x, b.y))
        })
        .collect();
    estimate_homography_ransac_points(&corrs, threshold_px, max_iters, seed)
}

/// Maps the four corners of a `w × h` image.
pub fn transformed_corners<T: Real>(h: &Homography<T>, w: usize, hgt: usize) -> [Point2<T>; 4] {
    let (w, hgt) = (T::lit(w as f64 - 1.0), T::lit(hgt as f64 - 1.0));
    let z = T::zero();
    [
        h.apply(&Point2::new(z, z)),
        h.apply(&Point2::new(w, z)),
        h.apply(&Point2::new(w, hgt)),
        h.apply(&Point2::new(z, hgt)),
    ]
}

/// Whether `h` keeps every point of a `w × h` image on the positive side of
/// the horizon (third homogeneous coordinate).
pub fn preserves_orientation<T: Real>(h: &Homography<T>, w: usize, hgt: usize) -> bool {
    let m = h.matrix();
    let (w, hgt) = (T::lit(w as f64 - 1.0), T::lit(hgt as f64 - 1.0));
    let z = T::zero();
    [(z, z), (w, z), (w, hgt), (z, hgt)]
        .iter()
        .all(|&(x, y)| (m * Vector3::new(x, y, T::one())).z > z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_h(rng: &mut impl Rng) -> Homography<f64> {
        let m = Matrix3::new(
            1.0 + rng.random_range(-0.2..0.2),
            rng.random_range(-0.2..0.2),
            rng.random_range(-50.0..50.0),
            rng.random_range(-0.2..0.2),
            1.0 + rng.random_range(-0.2..0.2),
            rng.random_range(-50.0..50.0),
            rng.random_range(-2e-4..2e-4),
            rng.random_range(-2e-4..2e-4),
            1.0,
        );
        Homography::new(m).unwrap()
    }

    fn points(rng: &mut impl Rng, n: usize) -> Vec<Point2<f64>> {
        (0..n)
            .map(|_| Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            .collect()
    }

    #[test]
    fn identity_from_fixed_points() {
        let pts = [(0.0, 0.0), (100.0, 0.0), (100.0, 80.0), (0.0, 80.0)];
        let c: Vec<_> = pts
            .iter()
            .map(|&(x, y)| Correspondence::new(Point2::new(x, y), Point2::new(x, y)))
            .collect();
        let h = estimate_homography_dlt(&c).unwrap();
        assert!((h.matrix() - Matrix3::identity()).amax() < 1e-12);
    }

    #[test]
    fn translation_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = Homography::translation(10.0, -5.0);
        let c: Vec<_> = points(&mut rng, 20)
            .into_iter()
            .map(|p| Correspondence::new(p, truth.apply(&p)))
            .collect();
        let h = estimate_homography_dlt(&c).unwrap();
        assert!((h.matrix() - truth.matrix()).amax() < 1e-9);
    }

    #[test]
    fn collinear_sources_are_degenerate() {
        let c: Vec<_> = (0..4)
            .map(|i| {
                let p = Point2::new(10.0 * i as f64, 5.0 * i as f64);
                Correspondence::new(p, Point2::new(p.x + 1.0, p.y))
            })
            .collect();
        assert!(matches!(estimate_homography_dlt(&c), Err(StitchError::DegenerateConfiguration(_))));
        // three of four collinear
        let mut c2 = c.clone();
        c2[3] = Correspondence::new(Point2::new(0.0, 50.0), Point2::new(1.0, 50.0));
        assert!(matches!(estimate_homography_dlt(&c2), Err(StitchError::DegenerateConfiguration(_))));
        // many collinear points: the null space is not unique
        let many: Vec<_> = (0..10)
            .map(|i| {
                let p = Point2::new(3.0 * i as f64, 2.0 * i as f64);
                Correspondence::new(p, p)
            })
            .collect();
        assert!(matches!(estimate_homography_dlt(&many), Err(StitchError::DegenerateConfiguration(_))));
    }

    #[test]
    fn three_matches_rejected() {
        let c = vec![Correspondence::new(Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)); 3];
        assert!(matches!(
            estimate_homography_ransac_points(&c, 3.0, 100, 0),
            Err(StitchError::InsufficientMatches { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn noiseless_ransac_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..20 {
            let truth = random_h(&mut rng);
            let c: Vec<_> = points(&mut rng, 50)
                .into_iter()
                .map(|p| Correspondence::new(p, truth.apply(&p)))
                .collect();
            let (h, inl) = estimate_homography_ransac_points(&c, 3.0, 2000, seed).unwrap();
            assert_eq!(inl.len(), 50);
            let worst = c.iter().map(|c| h.symmetric_transfer_error(&c.a, &c.b)).fold(0.0, f64::max);
            assert!(worst < 1e-6, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn planted_outliers_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..20 {
            let truth = random_h(&mut rng);
            let mut c: Vec<_> = points(&mut rng, 100)
                .into_iter()
                .map(|p| Correspondence::new(p, truth.apply(&p)))
                .collect();
            for item in c.iter_mut().take(30) {
                loop {
                    let b = Point2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                    if truth.symmetric_transfer_error(&item.a, &b) > 9.0 {
                        item.b = b;
                        break;
                    }
                }
            }
            let (_, inl) = estimate_homography_ransac_points(&c, 3.0, 2000, seed).unwrap();
            assert_eq!(inl, (30..100).collect::<Vec<_>>(), "seed {seed}");
        }
    }

    #[test]
    fn single_precision_dlt() {
        let truth = Homography::<f32>::translation(3.0, 4.0);
        let c: Vec<_> = [(0.0f32, 0.0f32), (50.0, 0.0), (50.0, 40.0), (0.0, 40.0), (20.0, 10.0)]
            .iter()
            .map(|&(x, y)| {
                let p = Point2::new(x, y);
                Correspondence::new(p, truth.apply(&p))
            })
            .collect();
        let h = estimate_homography_dlt(&c).unwrap();
        assert!((h.matrix() - truth.matrix()).amax() < 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn scaling_both_sides_leaves_h_invariant(seed in any::<u64>(), s in 0.01f64..100.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let truth = random_h(&mut rng);
            let c: Vec<_> = points(&mut rng, 12)
                .into_iter()
                .map(|p| Correspondence::new(p, truth.apply(&p)))
                .collect();
            let scaled: Vec<_> = c
                .iter()
                .map(|c| Correspondence::new(c.a * s, c.b * s))
                .collect();
            let h = estimate_homography_dlt(&c).unwrap();
            let hs = estimate_homography_dlt(&scaled).unwrap();
            // undo the scaling: H_s = S H S⁻¹
            let sm = Matrix3::new(s, 0.0, 0.0, 0.0, s, 0.0, 0.0, 0.0, 1.0);
            let back = Homography::new(sm.try_inverse().unwrap() * hs.matrix() * sm).unwrap();
            prop_assert!((back.matrix() - h.matrix()).amax() < 1e-9);
        }

        #[test]
        fn transfer_error_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_h(&mut rng);
            let inv = h.inverse();
            for _ in 0..10 {
                let a = points(&mut rng, 1)[0];
                let b = points(&mut rng, 1)[0];
                let d = h.symmetric_transfer_error(&a, &b) - inv.symmetric_transfer_error(&b, &a);
                prop_assert!(d.abs() < 1e-9);
            }
        }
    }
}
