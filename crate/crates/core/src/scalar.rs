//! Element types for the tensor engine.
//!
//! Everything numeric is generic over [`Scalar`] so the whole stack can run
//! in `f32` (production) or `f64` (verification mode for finite-difference
//! gradient checks, where `f32` noise would swamp the tolerance).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element of a tensor.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Copy + Send + Sync + 'static
{
    const ZERO: Self;
    const ONE: Self;

    /// Lossless for f64, rounding for f32.
    fn from_f64c(v: f64) -> Self;
    fn to_f64c(self) -> f64;

    fn sigmoid(self) -> Self {
        if self >= Self::ZERO {
            Self::ONE / (Self::ONE + (-self).exp())
        } else {
            let e = self.exp();
            e / (Self::ONE + e)
        }
    }
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64c(v: f64) -> Self {
        v as f32
    }
    fn to_f64c(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    fn from_f64c(v: f64) -> Self {
        v
    }
    fn to_f64c(self) -> f64 {
        self
    }
}

/// Shorthand cast used all over the crate for literals and counters.
#[inline]
pub fn sc<E: Scalar>(v: f64) -> E {
    E::from_f64c(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert!(0.5f64.sigmoid() > 0.5);
        assert_eq!(0f64.sigmoid(), 0.5);
        assert!((40f32).sigmoid() <= 1.0);
        assert!((-40f32).sigmoid() >= 0.0);
        assert!(((-700f64).sigmoid()).is_finite());
        assert!(((700f64).sigmoid() - 1.0).abs() < 1e-12);
    }
}
