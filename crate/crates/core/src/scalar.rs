//! Scalar abstractions shared by the whole crate.
//!
//! Two tiers exist. [`Scalar`] covers exact-capable number types
//! (`f32`, `f64`, `Ratio<i64>`, ...) and is enough for the impulse schedule,
//! the piecewise-constant multiplier and the hypothesis margin arithmetic.
//! [`Real`] adds transcendental functions and is required by everything that
//! integrates, interpolates or evaluates right-hand sides.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, Num, Signed, ToPrimitive};

pub trait Scalar:
    Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + Send + Sync + 'static
{
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("value representable in scalar type")
    }
}

impl<T> Scalar for T where
    T: Num + Signed + Clone + PartialOrd + Debug + FromPrimitive + Send + Sync + 'static
{
}

/// floating point: f32 or f64
pub trait Real: Scalar + Float + FloatConst + ToPrimitive + Display + Default + Copy {
    #[inline]
    fn lit(value: f64) -> Self {
        <Self as Scalar>::from_f64_lossy(value)
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Compensated (Kahan–Babuška–Neumaier) sum; deterministic for a fixed input order.
pub fn compensated_sum<S: Real>(values: impl IntoIterator<Item = S>) -> S {
    let mut sum = S::zero();
    let mut carry = S::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry = carry + ((sum - t) + v);
        } else {
            carry = carry + ((v - t) + sum);
        }
        sum = t;
    }
    sum + carry
}

/// Pairwise max reduction over a slice; index of the first maximiser is kept.
pub fn argmax_by<S: Real>(values: &[S]) -> Option<(usize, S)> {
    fn go<S: Real>(values: &[S], offset: usize) -> (usize, S) {
        if values.len() == 1 {
            return (offset, values[0]);
        }
        let mid = values.len() / 2;
        let (li, lv) = go(&values[..mid], offset);
        let (ri, rv) = go(&values[mid..], offset + mid);
        if rv > lv {
            (ri, rv)
        } else {
            (li, lv)
        }
    }
    if values.is_empty() {
        None
    } else {
        Some(go(values, 0))
    }
}
