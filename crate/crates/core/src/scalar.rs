use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating-point scalar the geometry is written against: `f32` or `f64`.
///
/// Everything that needs the tight tolerances of the estimators (1e-9 pose
/// agreement, 1e-12 degeneracy tests) is exercised with `f64`; `f32` works
/// for the same code paths with proportionally looser results.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` literal into this scalar.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Degeneracy floor: `tol`, but never below a few ulps of the type.
    #[inline]
    fn tol(tol: f64) -> Self {
        let eps = Self::default_epsilon() * Self::lit(16.0);
        let t = Self::lit(tol);
        if t > eps {
            t
        } else {
            eps
        }
    }
}

impl Real for f32 {}
impl Real for f64 {}
