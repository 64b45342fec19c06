//! Extended nonnegative reals `[0, ∞]`.
//!
//! The product `0·∞` is undefined and reported as [`UndefinedProduct`] rather
//! than being collapsed to `NaN`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::Add;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::{approx_eq, Scalar};

/// A value in `[0, ∞]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum XReal<T> {
    Finite(T),
    Infinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("product 0·∞ is undefined")]
pub struct UndefinedProduct;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum XRealError {
    #[error("value is NaN")]
    NaN,
    #[error("value {0} is negative")]
    Negative(f64),
}

impl<T: Scalar> XReal<T> {
    pub const INFINITY: Self = XReal::Infinite;

    pub fn zero() -> Self {
        XReal::Finite(T::zero())
    }

    pub fn one() -> Self {
        XReal::Finite(T::one())
    }

    /// Wraps a raw scalar; `+inf` maps to [`XReal::Infinite`].
    pub fn new(x: T) -> Result<Self, XRealError> {
        if x.is_nan() {
            Err(XRealError::NaN)
        } else if x < T::zero() {
            Err(XRealError::Negative(x.as_f64()))
        } else if x.is_infinite() {
            Ok(XReal::Infinite)
        } else {
            Ok(XReal::Finite(x))
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, XReal::Finite(x) if x.is_zero())
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, XReal::Infinite)
    }

    pub fn is_finite(&self) -> bool {
        !self.is_infinite()
    }

    pub fn is_positive(&self) -> bool {
        !self.is_zero()
    }

    pub fn finite(&self) -> Option<T> {
        match self {
            XReal::Finite(x) => Some(*x),
            XReal::Infinite => None,
        }
    }

    /// Raw scalar view, with `∞` as `T::infinity()`.
    pub fn to_scalar(&self) -> T {
        match self {
            XReal::Finite(x) => *x,
            XReal::Infinite => T::infinity(),
        }
    }

    /// Product on `[0, ∞]`, failing exactly for `{0, ∞}`.
    pub fn mul(self, other: Self) -> Result<Self, UndefinedProduct> {
        match (self, other) {
            (XReal::Finite(a), XReal::Finite(b)) => Ok(XReal::Finite(a * b)),
            (XReal::Infinite, x) | (x, XReal::Infinite) => {
                if x.is_zero() {
                    Err(UndefinedProduct)
                } else {
                    Ok(XReal::Infinite)
                }
            }
        }
    }

    /// `1/x` with `1/0 = ∞` and `1/∞ = 0`.
    pub fn recip(self) -> Self {
        match self {
            XReal::Infinite => Self::zero(),
            XReal::Finite(x) if x.is_zero() => XReal::Infinite,
            XReal::Finite(x) => XReal::Finite(x.recip()),
        }
    }

    pub fn to_f64(self) -> XReal<f64> {
        match self {
            XReal::Finite(x) => XReal::Finite(x.as_f64()),
            XReal::Infinite => XReal::Infinite,
        }
    }

    /// Equality with relative tolerance on finite values; `∞ = ∞` exactly.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        match (self, other) {
            (XReal::Infinite, XReal::Infinite) => true,
            (XReal::Finite(a), XReal::Finite(b)) => approx_eq(*a, *b, tol),
            _ => false,
        }
    }
}

impl<T: Scalar> Add for XReal<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        match (self, rhs) {
            (XReal::Finite(a), XReal::Finite(b)) => XReal::Finite(a + b),
            _ => XReal::Infinite,
        }
    }
}

impl<T: Scalar> PartialOrd for XReal<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (XReal::Infinite, XReal::Infinite) => Some(Ordering::Equal),
            (XReal::Infinite, _) => Some(Ordering::Greater),
            (_, XReal::Infinite) => Some(Ordering::Less),
            (XReal::Finite(a), XReal::Finite(b)) => a.partial_cmp(b),
        }
    }
}

impl<T: Scalar> From<T> for XReal<T> {
    /// Panics on NaN or negative input; use [`XReal::new`] for untrusted values.
    fn from(x: T) -> Self {
        XReal::new(x).expect("nonnegative, non-NaN extended real")
    }
}

impl<T: Scalar> fmt::Display for XReal<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XReal::Finite(x) => write!(f, "{x}"),
            XReal::Infinite => f.write_str("inf"),
        }
    }
}

impl<T: Scalar> Serialize for XReal<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            XReal::Finite(x) => serializer.serialize_f64(x.as_f64()),
            XReal::Infinite => serializer.serialize_str("inf"),
        }
    }
}

/// JSON number or the string token `"inf"`, decoded to a raw `f64` (`∞` as
/// `f64::INFINITY`). Negative and NaN values pass through so that validation
/// can report them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawEntry(pub f64);

impl Serialize for RawEntry {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::INFINITY {
            serializer.serialize_str("inf")
        } else {
            serializer.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for RawEntry {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct RawVisitor;

        impl Visitor<'_> for RawVisitor {
            type Value = RawEntry;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<RawEntry, E> {
                Ok(RawEntry(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<RawEntry, E> {
                Ok(RawEntry(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<RawEntry, E> {
                Ok(RawEntry(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<RawEntry, E> {
                match v {
                    "inf" | "Infinity" | "+inf" => Ok(RawEntry(f64::INFINITY)),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }

        deserializer.deserialize_any(RawVisitor)
    }
}

impl<'de, T: Scalar> Deserialize<'de> for XReal<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = RawEntry::deserialize(deserializer)?;
        XReal::new(T::lit(raw.0)).map_err(de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type X = XReal<f64>;

    #[test]
    fn zero_times_infinity_is_an_error() {
        assert_eq!(X::zero().mul(X::INFINITY), Err(UndefinedProduct));
        assert_eq!(X::INFINITY.mul(X::zero()), Err(UndefinedProduct));
        assert_eq!(X::Finite(2.0).mul(X::INFINITY), Ok(X::INFINITY));
        assert_eq!(X::Finite(2.0).mul(X::Finite(3.0)), Ok(X::Finite(6.0)));
    }

    #[test]
    fn reciprocal_swaps_zero_and_infinity() {
        assert_eq!(X::zero().recip(), X::INFINITY);
        assert_eq!(X::INFINITY.recip(), X::zero());
        assert_eq!(X::Finite(4.0).recip(), X::Finite(0.25));
    }

    #[test]
    fn rejects_negative_and_nan() {
        assert!(X::new(-1.0).is_err());
        assert!(X::new(f64::NAN).is_err());
        assert_eq!(X::new(f64::INFINITY), Ok(X::INFINITY));
    }

    #[test]
    fn json_inf_token() {
        let v: Vec<X> = serde_json::from_str(r#"[1, 0.5, "inf"]"#).unwrap();
        assert_eq!(v, vec![X::one(), X::Finite(0.5), X::INFINITY]);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[1.0,0.5,"inf"]"#);
        assert!(serde_json::from_str::<X>(r#""nan""#).is_err());
    }

    #[test]
    fn ordering_puts_infinity_last() {
        assert!(X::INFINITY > X::Finite(1e300));
        assert!(X::zero() < X::Finite(1e-300));
    }
}
