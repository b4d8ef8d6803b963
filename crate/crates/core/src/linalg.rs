//! Small dense linear-algebra helpers used by the DLT-style estimators.

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Vector3};

use crate::Real;

/// Unit vector minimising `‖A v‖`, with the two smallest singular values.
///
/// `A` is zero-padded to at least as many rows as columns so that the SVD
/// always yields a full right basis.
pub(crate) fn null_vector<T: Real>(a: DMatrix<T>) -> Option<(DVector<T>, T, T)> {
    let cols = a.ncols();
    let a = if a.nrows() < cols {
        let mut padded = DMatrix::zeros(cols, cols);
        padded.rows_mut(0, a.nrows()).copy_from(&a);
        padded
    } else {
        a
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let sv = &svd.singular_values;
    let (mut min_i, mut second_i) = (0, 0);
    // singular values are sorted descending by nalgebra, but do not rely on it
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[i].partial_cmp(&sv[j]).unwrap_or(std::cmp::Ordering::Equal));
    if let [a0, a1, ..] = order[..] {
        min_i = a0;
        second_i = a1;
    }
    let v = v_t.row(min_i).transpose();
    Some((v, sv[min_i], sv[second_i]))
}

/// Similarity `T` moving the centroid to the origin with mean distance √2.
pub(crate) fn hartley_normalization<T: Real>(pts: &[Point2<T>]) -> Matrix3<T> {
    let n = T::lit(pts.len().max(1) as f64);
    let (mut mx, mut my) = (T::zero(), T::zero());
    for p in pts {
        mx += p.x;
        my += p.y;
    }
    mx /= n;
    my /= n;
    let mut mean_dist = T::zero();
    for p in pts {
        mean_dist += ((p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my)).sqrt();
    }
    mean_dist /= n;
    let s = if mean_dist > T::zero() {
        T::lit(std::f64::consts::SQRT_2) / mean_dist
    } else {
        T::one()
    };
    let z = T::zero();
    Matrix3::new(s, z, -s * mx, z, s, -s * my, z, z, T::one())
}

#[inline]
pub(crate) fn apply_h<T: Real>(h: &Matrix3<T>, p: &Point2<T>) -> Point2<T> {
    let v = h * Vector3::new(p.x, p.y, T::one());
    Point2::new(v.x / v.z, v.y / v.z)
}

#[inline]
pub(crate) fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}
