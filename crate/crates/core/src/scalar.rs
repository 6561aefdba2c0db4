//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type the estimators run on: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + FromStr
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from `f64`; every supported scalar can represent it approximately.
    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm with scaling, so that very large or very small entries do
/// not overflow or underflow the sum of squares.
pub fn stable_norm<F: Scalar>(values: &[F]) -> F {
    let plain = values.iter().fold(F::zero(), |acc, &v| acc + v * v);
    // Rescale only when the plain sum over- or underflowed.
    if plain.is_finite() && plain > F::min_positive_value().sqrt() {
        return plain.sqrt();
    }
    let scale = values.iter().fold(F::zero(), |m, v| m.max(v.abs()));
    if scale == F::zero() || !scale.is_finite() {
        return scale;
    }
    let sum: F = values
        .iter()
        .map(|&v| {
            let r = v / scale;
            r * r
        })
        .sum();
    scale * sum.sqrt()
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}
