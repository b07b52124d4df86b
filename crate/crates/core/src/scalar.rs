use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar used throughout the numeric core. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the value is not representable, which
    /// cannot happen for the finite constants used in this crate.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize fits in a float")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// Tolerance for "sums to one" comparisons.
    fn weight_tolerance() -> Self;
}

impl Scalar for f32 {
    fn weight_tolerance() -> Self {
        1e-5
    }
}

impl Scalar for f64 {
    fn weight_tolerance() -> Self {
        1e-9
    }
}

/// Clamps `v` into `[0, 1]`. NaN maps to 0.
pub fn clamp_unit<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

pub fn in_unit<T: Scalar>(v: T) -> bool {
    v >= T::zero() && v <= T::one()
}
