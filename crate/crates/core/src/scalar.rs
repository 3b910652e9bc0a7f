//! Scalar abstraction for the numeric core.
//!
//! Everything numeric (formula evaluation, losses, the autodiff graph) is
//! generic over [`Scalar`] so the same code runs at f32 and f64 precision.
//! The training pipeline pins f64 through the aliases at the crate root.

use std::fmt::{Debug, Display};

/// Floating-point scalar: f32 or f64.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::NumAssignOps
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from f64 (exact for f64, rounded for f32).
    fn from_f64_lossy(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to any Scalar")
    }

    /// Conversion to f64 for logging and serialization.
    fn to_f64_lossy(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f64_round_trip_is_exact() {
        let x = 0.1f64 + 0.2;
        assert_eq!(f64::from_f64_lossy(x), x);
        assert_eq!(x.to_f64_lossy(), x);
    }

    #[test]
    fn f32_widening_round_trip_is_exact() {
        let x = 0.1f32;
        assert_eq!(f32::from_f64_lossy(x.to_f64_lossy()), x);
    }
}
