//! Floating-point scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar the matching engine is generic over: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`, used for constants and config values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant is representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    fn of_f32(v: f32) -> Self;

    fn to_f32_lossy(self) -> f32;

    /// Default KKT tolerance for this precision.
    fn default_kkt_tol() -> Self {
        // 1e-8 for f64; f32 cannot get below a few hundred ulps.
        Self::of(1e-8).max(Self::epsilon() * Self::of(1e3))
    }
}

impl Scalar for f32 {
    fn of_f32(v: f32) -> Self {
        v
    }

    fn to_f32_lossy(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    fn of_f32(v: f32) -> Self {
        v as f64
    }

    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn squared_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a)
}

pub(crate) fn l1_norm<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc + x.abs())
}

pub(crate) fn signum<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn soft_threshold<T: Scalar>(v: T, threshold: T) -> T {
    signum(v) * (v.abs() - threshold).max(T::zero())
}
