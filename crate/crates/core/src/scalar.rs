//! Floating-point abstraction shared by the network, optimizer and sampler.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + Debug
    + Display
    + Default
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    fn half() -> Self;

    /// Lossy conversion from `f64`; every literal in the crate goes through here.
    fn lit(v: f64) -> Self;

    fn to_f64_lossy(self) -> f64;
}

impl Scalar for f32 {
    fn half() -> Self {
        0.5
    }
    fn lit(v: f64) -> Self {
        v as f32
    }
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn half() -> Self {
        0.5
    }
    fn lit(v: f64) -> Self {
        v
    }
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Logistic sigmoid, increasing in `x`.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable log-softmax; returns `(log_probs, probs)`.
pub fn log_softmax<T: Scalar>(logits: &[T]) -> (Vec<T>, Vec<T>) {
    let max = logits
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    let sum: T = logits.iter().map(|&l| (l - max).exp()).sum();
    let log_norm = max + sum.ln();
    let log_probs: Vec<T> = logits.iter().map(|&l| l - log_norm).collect();
    let probs = log_probs.iter().map(|&lp| lp.exp()).collect();
    (log_probs, probs)
}
