use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::Real;

/// Rigid world-to-camera transform: `x_cam = R · x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Pose of a camera at `center` with world-to-camera rotation `rotation`.
    pub fn from_center(rotation: Matrix3<T>, center: &Vector3<T>) -> Self {
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    /// Camera centre in world coordinates, `C = -Rᵀ t`.
    pub fn center(&self) -> Vector3<T> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn transform(&self, x: &Vector3<T>) -> Vector3<T> {
        self.rotation * x + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Left-multiplicative update by `δ = (ω, v)`:
    /// `R ← exp(ω) R`, `t ← exp(ω) t + v`.
    pub fn retract(&self, delta: &Vector6<T>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let r = Rotation3::new(omega).into_inner();
        Self {
            rotation: r * self.rotation,
            translation: r * self.translation + v,
        }
    }

    /// `‖RᵀR − I‖∞` (max-abs entry).
    pub fn orthonormality_error(&self) -> T {
        (self.rotation.transpose() * self.rotation - Matrix3::identity()).amax()
    }

    pub fn is_valid(&self, tol: T) -> bool {
        self.orthonormality_error() < tol
            && self.rotation.determinant() > T::zero()
            && self.translation.iter().all(|v| v.is_finite())
    }

    /// Projects the rotation back onto SO(3) (nearest rotation in Frobenius norm).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rotation.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * v_t;
        if r.determinant() < T::zero() {
            let mut u = u;
            let neg = -u.column(2);
            u.set_column(2, &neg);
            r = u * v_t;
        }
        Self {
            rotation: r,
            translation: self.translation,
        }
    }

    /// Angle in radians of the relative rotation `R_aᵀ R_b`.
    pub fn rotation_angle_to(&self, other: &Self) -> T {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    /// Unit quaternion `[w, x, y, z]` of the rotation, with `w ≥ 0`.
    pub fn quaternion_wxyz(&self) -> [T; 4] {
        let rot = Rotation3::from_matrix_unchecked(self.rotation);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        let s = if q.w < T::zero() { -T::one() } else { T::one() };
        [q.w * s, q.i * s, q.j * s, q.k * s]
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose {
            rotation: self.rotation.map(|v| U::lit(v.as_f64())),
            translation: self.translation.map(|v| U::lit(v.as_f64())),
        }
    }
}

/// Rotation angle `arccos(clamp((tr R − 1)/2, −1, 1))`.
pub fn rotation_angle<T: Real>(r: &Matrix3<T>) -> T {
    let c = ((r.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    c.acos()
}

/// Rotation about `axis` by `angle` radians.
pub fn axis_angle<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    Rotation3::new(axis.normalize() * angle).into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_and_inverse() {
        let r = axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.3);
        let c = Vector3::new(1.0, 2.0, 3.0);
        let p = Pose::from_center(r, &c);
        assert!((p.center() - c).norm() < 1e-12);
        let id = p.compose(&p.inverse());
        assert!((id.rotation - Matrix3::identity()).amax() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
        // world origin seen from the camera
        assert!((p.transform(&c)).norm() < 1e-12);
    }

    #[test]
    fn retract_stays_on_so3() {
        let mut p = Pose::<f64>::identity();
        for i in 0..200 {
            let d = Vector6::new(0.01 * i as f64, -0.02, 0.03, 0.1, 0.0, -0.1);
            p = p.retract(&d);
            assert!(p.is_valid(1e-9), "iteration {i}: {}", p.orthonormality_error());
        }
    }

    #[test]
    fn quaternion_of_quarter_turn() {
        let p = Pose::new(
            axis_angle(&Vector3::new(0.0, 0.0, 1.0), std::f64::consts::FRAC_PI_2),
            Vector3::zeros(),
        );
        let q = p.quaternion_wxyz();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for (a, b) in q.iter().zip([h, 0.0, 0.0, h]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(Pose::<f64>::identity().quaternion_wxyz(), [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_precision_pose() {
        let p = Pose::<f32>::new(axis_angle(&Vector3::new(1.0, 0.0, 0.0), 0.5), Vector3::new(1.0, 0.0, 0.0));
        assert!(p.is_valid(1e-5));
        let back: Pose<f64> = p.cast();
        assert!((back.rotation_angle_to(&Pose::identity()) - 0.5).abs() < 1e-6);
    }
}
