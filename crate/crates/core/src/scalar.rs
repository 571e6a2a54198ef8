//! Element types the numeric kernels are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssignOps};

/// Floating-point element type accepted by tensors and layer kernels.
///
/// Model files always carry `f32`; `f64` instances exist for reference
/// computations and for callers that want wider accumulation end to end.
pub trait Scalar:
    Float + NumAssignOps + Sum + Copy + Default + Send + Sync + Debug + Display + 'static
{
    /// Converts a stored model value into this type.
    fn from_f32(v: f32) -> Self;

    /// Lossy conversion back to the model element type.
    fn to_f32(self) -> f32;

    /// Bit pattern widened to 64 bits, used for bitwise equality checks.
    fn to_bits_u64(self) -> u64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f32(v: f32) -> Self {
        v
    }

    #[inline]
    fn to_f32(self) -> f32 {
        self
    }

    #[inline]
    fn to_bits_u64(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f32(v: f32) -> Self {
        f64::from(v)
    }

    #[inline]
    fn to_f32(self) -> f32 {
        self as f32
    }

    #[inline]
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}
