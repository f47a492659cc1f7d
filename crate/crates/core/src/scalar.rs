//! Scalar abstraction for embedding storage.
//!
//! Keys may be stored as `f32` (the usual embedding dump format) or `f64`.
//! Distance kernels always widen to `f64` before accumulating, so the
//! probability math downstream is independent of the storage type.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point type usable as an embedding component.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossless widening to `f64`.
    fn widen(self) -> f64;

    /// Narrowing from `f64` (round to nearest for `f32`).
    fn narrow(v: f64) -> Self;
}

impl Scalar for f32 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self as f64
    }

    #[inline(always)]
    fn narrow(v: f64) -> Self {
        v as f32
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn widen(self) -> f64 {
        self
    }

    #[inline(always)]
    fn narrow(v: f64) -> Self {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widen_is_exact_for_f32() {
        let x = 0.1f32;
        assert_eq!(x.widen() as f32, x);
        assert_eq!(f32::narrow(x.widen()), x);
    }
}
