//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::Serialize;

/// Floating-point scalar usable throughout the crate (`f32` or `f64`).
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Serialize + Send + Sync + 'static
{
    /// Default comparison tolerances for this precision.
    fn default_tolerances() -> Tolerances<Self>;

    /// Converts an `f64` literal. Every finite `f64` is representable (possibly rounded).
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar convertible to f64")
    }
}

impl Scalar for f64 {
    fn default_tolerances() -> Tolerances<Self> {
        Tolerances {
            consistency: 1e-9,
            martingale: 1e-9,
            identity: 1e-12,
            null_mass: 1e-15,
        }
    }
}

impl Scalar for f32 {
    fn default_tolerances() -> Tolerances<Self> {
        Tolerances {
            consistency: 1e-4,
            martingale: 1e-4,
            identity: 1e-5,
            null_mass: 1e-15,
        }
    }
}

/// Tolerances used by the validation and verification routines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances<T> {
    /// Relative tolerance for exchange-matrix and value-vector consistency.
    pub consistency: T,
    /// Tolerance for (super)martingale equalities on trees.
    pub martingale: T,
    /// Tolerance for pure linear-algebra identities (sums to one, round trips).
    pub identity: T,
    /// Probabilities at or below this are treated as zero for support computations.
    pub null_mass: T,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        T::default_tolerances()
    }
}

impl<T: Scalar> Tolerances<T> {
    /// Overrides the consistency and martingale tolerances with one value.
    pub fn with_check_tolerance(mut self, tol: T) -> Self {
        self.consistency = tol;
        self.martingale = tol;
        self
    }
}

/// `|a - b| <= tol * max(1, |a|, |b|)`: relative for large magnitudes, absolute near zero.
#[inline]
pub fn approx_eq<T: Scalar>(a: T, b: T, tol: T) -> bool {
    (a - b).abs() <= tol * T::one().max(a.abs()).max(b.abs())
}

/// Scaled residual `|a - b| / max(1, |a|, |b|)`, the quantity compared by [`approx_eq`].
#[inline]
pub fn scaled_residual<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / T::one().max(a.abs()).max(b.abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn approx_eq_is_relative_for_large_values() {
        assert!(approx_eq(1e12_f64, 1e12 + 1.0, 1e-9));
        assert!(!approx_eq(1.0_f64, 1.0 + 1e-6, 1e-9));
        assert!(approx_eq(0.0_f64, 1e-10, 1e-9));
    }

    #[test]
    fn f32_has_looser_defaults() {
        assert!(f32::default_tolerances().identity > 1e-7);
        assert_eq!(f64::default_tolerances().identity, 1e-12);
    }
}
