use core::fmt::{Debug, Display};
use core::iter::Sum;

use num_traits::Float;

/// Scalar type the network and renderer are generic over.
///
/// Training runs in `f32`; `f64` is the verification mode used by gradient
/// checks.
pub trait Real:
    Float + Debug + Display + Default + Sum + Send + Sync + core::ops::AddAssign + core::ops::SubAssign + core::ops::MulAssign + 'static
{
    /// Largest value strictly below one.
    const ONE_MINUS_ULP: Self;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;

    #[inline]
    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Real for f32 {
    const ONE_MINUS_ULP: Self = 1.0 - f32::EPSILON / 2.0;

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const ONE_MINUS_ULP: Self = 1.0 - f64::EPSILON / 2.0;

    #[inline]
    fn of(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
