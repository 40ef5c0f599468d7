// SPDX-License-Identifier: MIT OR Apache-2.0

//! Floating-point element type shared by every kernel and the forward pass.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Element type of tensors and weights: `f32` or `f64`.
///
/// Production runs use `f32`; `f64` instantiations serve as a higher
/// precision reference in tests.
pub trait Scalar:
    Float
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Short dtype label used in digests and reports.
    const DTYPE: &'static str;

    /// Lossy conversion from `f64`.
    fn of(x: f64) -> Self;

    /// Widening (or identity) conversion to `f64`.
    fn to_f64_lossless(self) -> f64;

    /// Little-endian byte image of a slice, used for checksums and export.
    fn to_le_bytes_vec(data: &[Self]) -> Vec<u8>;
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        f64::from(self)
    }

    fn to_le_bytes_vec(data: &[Self]) -> Vec<u8> {
        data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self
    }

    fn to_le_bytes_vec(data: &[Self]) -> Vec<u8> {
        data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}
