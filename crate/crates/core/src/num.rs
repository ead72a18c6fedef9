//! Scalar abstraction shared by the closed-form models and the ensemble code.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use std::fmt::{Debug, Display};

/// Real scalar used by the generic parts of the crate: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every `Real` represents all finite `f64`
    /// values up to rounding, so this never fails.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Returns true when every value lies in the closed unit interval.
pub(crate) fn all_unit<T: Real>(values: &[T]) -> bool {
    values
        .iter()
        .all(|v| v.is_finite() && *v >= T::zero() && *v <= T::one())
}
