use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the crate (implemented for `f32` and `f64`).
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + LowerExp
    + Default
    + Send
    + Sync
    + 'static
{
}

impl<T> Real for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Sum
        + Debug
        + Display
        + LowerExp
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("f64 literal representable in scalar type")
}

/// Converts `T` into `f64` (always succeeds for the supported scalars).
#[inline]
pub fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Converts a `usize` into `T`.
#[inline]
pub fn from_usize<T: Real>(v: usize) -> T {
    T::from_usize(v).expect("usize representable in scalar type")
}

/// Tolerance floor: a few hundred ulps of 1 for the scalar type.
#[inline]
pub fn tiny<T: Real>() -> T {
    T::epsilon() * lit(256.0)
}

/// Median of three values.
#[inline]
pub fn median3<T: Real>(lo: T, v: T, hi: T) -> T {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Pairwise (cascade) summation, used for deterministic Monte Carlo merges.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        let mut s = T::zero();
        for &x in xs {
            s = s + x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lit_round_trips_in_both_precisions() {
        assert_eq!(lit::<f64>(0.25), 0.25);
        assert_eq!(lit::<f32>(0.25), 0.25f32);
    }

    #[test]
    fn median_clamps() {
        assert_eq!(median3(0.0, -1.0, 1.0), 0.0);
        assert_eq!(median3(0.0, 2.0, 1.0), 1.0);
        assert_eq!(median3(0.0, 0.5, 1.0), 0.5);
    }

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 999.0 * 1000.0 / 2.0);
    }
}
