//! Scalar abstraction shared by the geometry, evaluation, and clustering code.
//!
//! Everything that only needs field arithmetic and ordering is written against
//! [`Scalar`], so the same matching and AP code runs on `f32`, `f64`, or exact
//! rationals ([`Rational`]). The loss kernels need logarithms and use
//! [`num_traits::Float`] directly.

use std::fmt;

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Exact rational scalar, used by tests and oracles that need bit-exact results.
pub type Rational = Ratio<i64>;

pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    /// False for NaN and infinities. Always true for exact types.
    fn is_finite_value(self) -> bool;

    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }

    /// Lossy conversion used for formatting and logging.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f64 {
    fn is_finite_value(self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Rational {
    fn is_finite_value(self) -> bool {
        true
    }
}

#[inline]
pub fn max<T: PartialOrd>(a: T, b: T) -> T {
    if b > a {
        b
    } else {
        a
    }
}

#[inline]
pub fn min<T: PartialOrd>(a: T, b: T) -> T {
    if b < a {
        b
    } else {
        a
    }
}

/// Fixed six-decimal rendering used by every CSV writer.
pub fn fmt6<T: Scalar>(value: T) -> String {
    format!("{:.6}", value.to_f64_lossy())
}
