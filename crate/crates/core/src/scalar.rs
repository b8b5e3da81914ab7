use std::fmt::{Debug, Display, LowerExp};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Real scalar the solvers are generic over: `f32` or `f64`.
pub trait Scalar:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + LowerExp + Debug + Send + Sync + 'static
{
    /// Relative floor used by symmetry and rank tests.
    fn unit_roundoff() -> Self;
}

impl Scalar for f32 {
    fn unit_roundoff() -> Self {
        f32::EPSILON
    }
}

impl Scalar for f64 {
    fn unit_roundoff() -> Self {
        f64::EPSILON
    }
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Symmetry tolerance for a matrix whose entries have magnitude up to `scale`.
///
/// Fixed at `1e-12` for `f64`; widened proportionally to machine epsilon for
/// lower-precision scalars.
pub fn symmetry_tolerance<T: Scalar>(scale: T) -> T {
    let floor = lit::<T>(1e-12);
    let rel = T::unit_roundoff() * lit::<T>(64.0) * (T::one() + scale);
    if rel > floor {
        rel
    } else {
        floor
    }
}
