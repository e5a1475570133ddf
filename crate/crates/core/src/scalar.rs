//! Scalar abstraction for the numeric core.
//!
//! Everything numeric is generic over [`Scalar`] so the same code runs in
//! `f32` or `f64`. Concrete `f64` aliases live at the crate root; default
//! tolerances target `f64` precision.

use std::fmt;
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating-point scalar used throughout the crate.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum<Self>
    + fmt::Debug
    + fmt::Display
    + FromStr
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` literal (tolerances, constants) into the scalar type.
    fn cast(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal must be representable")
    }

    /// Convert a count into the scalar type.
    fn count(n: usize) -> Self {
        Self::from_usize(n).expect("count must be representable")
    }

    /// Lossy conversion to `f64`, used only for presentation output.
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + NumAssignOps
        + Sum<T>
        + fmt::Debug
        + fmt::Display
        + FromStr
        + Send
        + Sync
        + 'static
{
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cast_round_trips_literals() {
        assert_eq!(<f64 as Scalar>::cast(1e-8), 1e-8);
        assert_eq!(<f64 as Scalar>::count(38), 38.0);
        assert_eq!(<f32 as Scalar>::count(7), 7.0_f32);
    }
}
