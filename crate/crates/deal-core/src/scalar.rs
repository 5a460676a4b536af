//! Floating-point element abstraction.
//!
//! The engine stores features as `f32` in files and in the CLI, while tests
//! and oracles run the same code in `f64` so tolerance checks are not
//! dominated by storage precision. Everything downstream is generic over
//! this trait.

use std::fmt::Debug;

/// Element type for dense tiles, edge values, and message payloads.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Debug + Default + Send + Sync + 'static
{
    /// Serialized width in bytes (little-endian).
    const WIDTH: usize;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const WIDTH: usize = 4;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const WIDTH: usize = 8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }

    fn from_f64(v: f64) -> Self {
        v
    }

    fn to_f64(self) -> f64 {
        self
    }
}

/// Largest relative element-wise difference between two slices, using an
/// absolute difference when the reference element is tiny.
pub fn max_rel_err<T: Scalar>(got: &[T], want: &[T]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch in max_rel_err");
    let mut worst = 0.0f64;
    for (&g, &w) in got.iter().zip(want) {
        let g = g.to_f64();
        let w = w.to_f64();
        let denom = w.abs().max(1.0);
        let err = (g - w).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}
