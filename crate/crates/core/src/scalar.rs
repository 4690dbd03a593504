//! Scalar abstraction over the supported float types.

use num_traits::Float;

/// Float type the numerical core is generic over.
///
/// `f32` is the working precision for training and checkpoints; `f64` exists
/// so gradient checks can run the identical code at a precision where central
/// finite differences are trustworthy.
pub trait Scalar:
    Float + num_traits::NumAssignOps + std::iter::Sum + std::fmt::Debug + std::fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn from_f32(v: f32) -> Self;
    /// Named to avoid clashing with `num_traits::ToPrimitive::to_f64`.
    fn as_f64(self) -> f64;
    fn as_f32(self) -> f32;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn as_f32(self) -> f32 {
        self as f32
    }
}
