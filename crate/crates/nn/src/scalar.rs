//! Scalar abstraction so the tensor/layer machinery works for any float width.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Element type accepted by [`crate::Tensor`] and everything built on it.
///
/// Training code pins this to `f32` through the crate-root aliases; `f64` is
/// available for high-precision checks.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssignOps
    + Sum
    + Default
    + Copy
    + Send
    + Sync
    + Debug
    + Display
    + 'static
{
    /// Lossless widening for accumulation and reporting.
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float widens to f64")
    }

    /// Nearest representable value of `x`.
    fn cast(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 narrows to float")
    }

    /// Storage form used by weight files (little-endian `f32` payload).
    fn to_storage_f32(self) -> f32 {
        ToPrimitive::to_f32(&self).expect("float narrows to f32")
    }

    fn from_storage_f32(x: f32) -> Self {
        <Self as FromPrimitive>::from_f32(x).expect("f32 widens to float")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
