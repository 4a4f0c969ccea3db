//! Numeric abstraction for metric arithmetic.

use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

/// A field-like number type that metric ratios are computed in.
///
/// Floating-point instantiations are what reports are written with; the
/// rational instantiation lets identities be checked exactly.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Lossless (or nearest) conversion of an item count.
    fn from_count(n: u64) -> Self;

    fn to_f64(&self) -> f64;

    fn two() -> Self {
        Self::one() + Self::one()
    }
}

impl Scalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Scalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
}

impl Scalar for Ratio<i64> {
    fn from_count(n: u64) -> Self {
        let n = i64::try_from(n).expect("count exceeds i64 range");
        Ratio::from_integer(n)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Scalar for Ratio<i128> {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(i128::from(n))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}
