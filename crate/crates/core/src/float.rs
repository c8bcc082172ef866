//! Scalar abstraction: the library is generic over the floating-point type.

use nalgebra as na;
use num_traits as nt;

/// Floating-point scalar usable throughout the library: `f32` or `f64`.
///
/// The tolerance constants in [`crate::tol`] are calibrated for `f64`; the
/// `f32` instantiation is functional but cannot meet tolerances tighter than
/// its epsilon (~1.2e-7).
pub trait Float: na::RealField + nt::FromPrimitive + Copy {
    /// Lossy conversion from an `f64` literal, for tolerances and constants.
    #[inline]
    fn c(x: f64) -> Self {
        <Self as nt::FromPrimitive>::from_f64(x).expect("constant representable")
    }

    /// Lossless widening to `f64` for reporting and serialization.
    fn to_f64(self) -> f64;
}

impl Float for f32 {
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Float for f64 {
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
