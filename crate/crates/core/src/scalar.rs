//! Floating-point abstraction so the whole stack runs in either `f32`
//! (training) or `f64` (gradient verification) without duplication.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

/// Element type for tensors and layers.
///
/// Everything is routed through `f64` conversions for constants and
/// accumulation-free scalar math; hot loops stay in `T` itself.
pub trait Scalar:
    Float + Sum + Debug + Display + Default + Send + Sync + Copy + 'static
{
    /// Size of one element in bytes; doubles as the checkpoint dtype tag.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Append this value to `out` in little-endian byte order.
    fn write_le(self, out: &mut Vec<u8>);

    /// Read one value from the start of `bytes` (must hold `BYTES` bytes).
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes([
            bytes[0], bytes[1], bytes[2], bytes[3], bytes[4], bytes[5], bytes[6], bytes[7],
        ])
    }
}
