//! Scalar abstraction for the numeric core.
//!
//! Every score, embedding, and gradient in this crate is generic over
//! [`Scalar`], implemented for `f32` and `f64`. The shipped pipeline pins
//! `f64` (see the aliases at the crate root) because the gradient checks
//! compare against central finite differences, which need the headroom.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating-point scalar type the core math runs on.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Width tag embedded in persisted artifacts so an `f32` file is never
    /// reinterpreted as `f64`.
    const WIDTH: u8;

    /// Conversion from `f64` config values and literals.
    fn from_f64_lossy(x: f64) -> Self;

    /// Lossy view as `f64` for reporting and aggregation.
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const WIDTH: u8 = 4;

    fn from_f64_lossy(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        f64::from(self)
    }
}

impl Scalar for f64 {
    const WIDTH: u8 = 8;

    fn from_f64_lossy(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Dot product of two equal-length slices, accumulated in index order so
/// results are bit-reproducible.
pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = S::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Euclidean norm, accumulated in index order.
pub fn norm2<S: Scalar>(a: &[S]) -> S {
    dot(a, a).sqrt()
}
