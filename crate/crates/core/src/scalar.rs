//! Scalar abstraction shared by every numeric kernel in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// Floating point type the beamformers, patterns and simulator are generic over.
///
/// Implemented for `f32` and `f64`. Reference tolerances in the test suites
/// assume `f64`; `f32` is intended for storage and quick previews.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + FftNum + Default + Display + Debug + Send + Sync
{
    /// Lossy conversion from an `f64` literal or physical constant.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite f64 representable in scalar type")
    }

    /// Conversion to `f64`.
    #[inline]
    fn f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Complex sample with a generic real part.
pub type Cx<T> = num_complex::Complex<T>;
