//! Exchange matrices, value vectors and the basket numéraire.
//!
//! `entries[i][j]` is the price of currency `j` in units of currency `i`.
//! The Rust API uses 0-based currency indices; serialized reports use
//! 1-based indices.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{ValidationReport, Violation};
use crate::scalar::{approx_eq, Scalar};
use crate::xreal::{RawEntry, XReal, XRealError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExchangeError {
    #[error("matrix must have at least one currency")]
    Empty,
    #[error("matrix is not square: row {row} has {len} entries, expected {d}")]
    NotSquare { row: usize, len: usize, d: usize },
    #[error("entry ({i}, {j}): {source}")]
    InvalidEntry {
        i: usize,
        j: usize,
        #[source]
        source: XRealError,
    },
    #[error("exchange matrix is inconsistent ({} violations)", .0.violations.len())]
    Inconsistent(ValidationReport),
    #[error("price vector component {index} must be positive and finite")]
    InvalidPrice { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("currency index {index} out of range for d = {d}")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("basket prices invalid: {0}")]
    InvalidBasket(String),
    #[error("value vector is inconsistent with the exchange matrix ({} violations)", .0.violations.len())]
    InconsistentValueVector(ValidationReport),
    #[error("claim is infinite in active currency {currency}; basket payoff undefined")]
    InfiniteActiveEntry { currency: usize },
    #[error("basket evaluations of the claim disagree across active currencies")]
    EvaluationsDisagree,
    #[error("exchange rate ({i}, {j}) is indeterminate: both currencies have zero basket price")]
    Indeterminate { i: usize, j: usize },
}

/// A validated `d × d` exchange matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeMatrix<T> {
    d: usize,
    entries: Vec<XReal<T>>,
}

fn check_grid<T: Scalar>(grid: &[Vec<T>]) -> Result<Vec<XReal<T>>, ExchangeError> {
    let d = grid.len();
    if d == 0 {
        return Err(ExchangeError::Empty);
    }
    let mut out = Vec::with_capacity(d * d);
    for (i, row) in grid.iter().enumerate() {
        if row.len() != d {
            return Err(ExchangeError::NotSquare { row: i + 1, len: row.len(), d });
        }
        for (j, &x) in row.iter().enumerate() {
            let v = XReal::new(x).map_err(|source| ExchangeError::InvalidEntry {
                i: i + 1,
                j: j + 1,
                source,
            })?;
            out.push(v);
        }
    }
    Ok(out)
}

fn consistency_violations<T: Scalar>(d: usize, e: &[XReal<T>], tol: T) -> Vec<Violation> {
    let at = |i: usize, j: usize| e[i * d + j];
    let mut violations = Vec::new();
    for i in 0..d {
        if at(i, i) != XReal::one() {
            violations.push(Violation::Diagonal {
                i: i + 1,
                value: at(i, i).to_f64(),
            });
        }
    }
    for i in 0..d {
        for j in 0..d {
            if at(i, j).is_zero() != at(j, i).is_infinite() {
                violations.push(Violation::Reciprocal { i: i + 1, j: j + 1 });
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let Ok(product) = at(i, j).mul(at(j, k)) else {
                    continue;
                };
                if !product.approx_eq(&at(i, k), tol) {
                    violations.push(Violation::Consistency {
                        i: i + 1,
                        j: j + 1,
                        k: k + 1,
                        product: product.to_f64(),
                        direct: at(i, k).to_f64(),
                    });
                }
            }
        }
    }
    violations
}

/// Checks the exchange-matrix axioms on a raw grid (`f64::INFINITY` encodes `∞`).
///
/// Products `0·∞` are skipped; defined products are compared to the direct
/// rate with relative tolerance `tol`.
pub fn validate_exchange_matrix_with<T: Scalar>(
    grid: &[Vec<T>],
    tol: T,
) -> Result<ValidationReport, ExchangeError> {
    let entries = check_grid(grid)?;
    Ok(ValidationReport::from_violations(consistency_violations(
        grid.len(),
        &entries,
        tol,
    )))
}

/// [`validate_exchange_matrix_with`] at the default consistency tolerance.
pub fn validate_exchange_matrix<T: Scalar>(grid: &[Vec<T>]) -> Result<ValidationReport, ExchangeError> {
    validate_exchange_matrix_with(grid, T::default_tolerances().consistency)
}

impl<T: Scalar> ExchangeMatrix<T> {
    pub fn new(grid: &[Vec<T>]) -> Result<Self, ExchangeError> {
        Self::new_with_tolerance(grid, T::default_tolerances().consistency)
    }

    pub fn new_with_tolerance(grid: &[Vec<T>], tol: T) -> Result<Self, ExchangeError> {
        let entries = check_grid(grid)?;
        let d = grid.len();
        let report = ValidationReport::from_violations(consistency_violations(d, &entries, tol));
        if !report.ok {
            return Err(ExchangeError::Inconsistent(report));
        }
        Ok(Self { d, entries })
    }

    /// Ratio matrix `s[i][j] = x[j] / x[i]` of positive finite prices.
    pub fn from_price_vector(x: &[T]) -> Result<Self, ExchangeError> {
        if x.is_empty() {
            return Err(ExchangeError::Empty);
        }
        if let Some(index) = x.iter().position(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(ExchangeError::InvalidPrice { index: index + 1 });
        }
        let d = x.len();
        let mut entries = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                entries.push(if i == j {
                    XReal::one()
                } else {
                    XReal::Finite(x[j] / x[i])
                });
            }
        }
        Ok(Self { d, entries })
    }

    /// Constant-rate 1×1 identity, or any `d` with all currencies at par.
    pub fn at_par(d: usize) -> Self {
        Self { d, entries: vec![XReal::one(); d * d] }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> XReal<T> {
        self.entries[i * self.d + j]
    }

    pub fn row(&self, i: usize) -> &[XReal<T>] {
        &self.entries[i * self.d..(i + 1) * self.d]
    }

    /// Price of the basket in units of currency `i`.
    pub fn row_sum(&self, i: usize) -> XReal<T> {
        self.row(i).iter().fold(XReal::zero(), |acc, &x| acc + x)
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.row(i).iter().all(XReal::is_finite)
    }

    /// Currencies with a finite row sum, in increasing order. Never empty.
    pub fn active_set(&self) -> Vec<usize> {
        (0..self.d).filter(|&i| self.is_active(i)).collect()
    }

    /// Smallest `i` with `s[i][j] <= 1` for all `j`.
    pub fn strongest_currency(&self) -> usize {
        self.strongest_currency_with(T::default_tolerances().consistency)
    }

    /// As [`Self::strongest_currency`], accepting entries up to `1 + tol` as
    /// "at most one" so that floating cross rates of equal currencies tie.
    pub fn strongest_currency_with(&self, tol: T) -> usize {
        let bound = XReal::Finite(T::one() + tol);
        (0..self.d)
            .find(|&i| self.row(i).iter().all(|x| *x <= bound))
            .unwrap_or_else(|| {
                // Unreachable for a consistent matrix; fall back to the
                // smallest row sum.
                let mut best = 0;
                for i in 1..self.d {
                    if self.row_sum(i) < self.row_sum(best) {
                        best = i;
                    }
                }
                best
            })
    }

    pub fn basket_prices(&self) -> BasketPrices<T> {
        let raw: Vec<T> = (0..self.d)
            .map(|i| match self.row_sum(i).recip() {
                XReal::Finite(x) => x,
                XReal::Infinite => unreachable!("row sum is at least the unit diagonal"),
            })
            .collect();
        // Tolerance-consistent matrices may leave O(tol) slack in the sum.
        let total: T = raw.iter().copied().sum();
        BasketPrices { prices: raw.into_iter().map(|x| x / total).collect() }
    }

    /// Column `i`: the value of one unit of currency `i` in every currency.
    pub fn unit_claim(&self, i: usize) -> Result<ValueVector<T>, ExchangeError> {
        if i >= self.d {
            return Err(ExchangeError::IndexOutOfRange { index: i, d: self.d });
        }
        Ok(ValueVector((0..self.d).map(|j| self.get(j, i)).collect()))
    }

    pub fn to_grid(&self) -> Vec<Vec<T>> {
        (0..self.d)
            .map(|i| self.row(i).iter().map(XReal::to_scalar).collect())
            .collect()
    }

    pub fn to_json(&self) -> MatrixJson {
        MatrixJson {
            d: Some(self.d),
            entries: (0..self.d)
                .map(|i| self.row(i).iter().map(|x| RawEntry(x.to_scalar().as_f64())).collect())
                .collect(),
        }
    }
}

/// JSON encoding `{"d": n, "entries": [[...]]}` with `"inf"` for `∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    pub entries: Vec<Vec<RawEntry>>,
}

impl MatrixJson {
    /// Raw grid, after checking the declared `d` against the entry count.
    pub fn grid<T: Scalar>(&self) -> Result<Vec<Vec<T>>, ExchangeError> {
        if let Some(d) = self.d {
            if d != self.entries.len() {
                return Err(ExchangeError::DimensionMismatch { expected: d, got: self.entries.len() });
            }
        }
        Ok(self
            .entries
            .iter()
            .map(|row| row.iter().map(|e| T::lit(e.0)).collect())
            .collect())
    }
}

/// Basket-quoted currency prices `S̄_i = 1 / Σ_j s[i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BasketPrices<T> {
    prices: Vec<T>,
}

impl<T: Scalar> BasketPrices<T> {
    pub fn new(prices: Vec<T>) -> Result<Self, ExchangeError> {
        Self::new_with_tolerance(prices, T::default_tolerances().identity)
    }

    pub fn new_with_tolerance(prices: Vec<T>, tol: T) -> Result<Self, ExchangeError> {
        if prices.is_empty() {
            return Err(ExchangeError::Empty);
        }
        for (i, p) in prices.iter().enumerate() {
            if !(p.is_finite() && *p >= T::zero() && *p <= T::one()) {
                return Err(ExchangeError::InvalidBasket(format!(
                    "component {} = {} outside [0, 1]",
                    i + 1,
                    p
                )));
            }
        }
        let total: T = prices.iter().copied().sum();
        if (total - T::one()).abs() > tol {
            return Err(ExchangeError::InvalidBasket(format!("components sum to {total}")));
        }
        Ok(Self { prices })
    }

    pub fn d(&self) -> usize {
        self.prices.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.prices
    }

    #[inline]
    pub fn get(&self, i: usize) -> T {
        self.prices[i]
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.prices[i] > T::zero()
    }

    pub fn recover_rates(&self) -> RecoveredRates<T> {
        recover_rates(self)
    }
}

/// Cross rates recovered from basket prices. Entries between two currencies
/// that both have zero basket price are not determined and are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredRates<T> {
    d: usize,
    entries: Vec<Option<XReal<T>>>,
}

/// `s[i][j] = b[j] / b[i]`, with `0/b = 0` and `b/0 = ∞` for `b > 0`.
pub fn recover_rates<T: Scalar>(b: &BasketPrices<T>) -> RecoveredRates<T> {
    let d = b.d();
    let mut entries = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let (bi, bj) = (b.get(i), b.get(j));
            let e = if i == j {
                Some(XReal::one())
            } else if bi.is_zero() && bj.is_zero() {
                None
            } else if bi.is_zero() {
                Some(XReal::Infinite)
            } else {
                Some(XReal::Finite(bj / bi))
            };
            entries.push(e);
        }
    }
    RecoveredRates { d, entries }
}

impl<T: Scalar> RecoveredRates<T> {
    pub fn get(&self, i: usize, j: usize) -> Option<XReal<T>> {
        self.entries[i * self.d + j]
    }

    /// 1-based `(i, j)` pairs left undetermined.
    pub fn indeterminate(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if self.get(i, j).is_none() {
                    out.push((i + 1, j + 1));
                }
            }
        }
        out
    }

    /// The recovered matrix, when every entry is determined.
    pub fn matrix(&self) -> Result<ExchangeMatrix<T>, ExchangeError> {
        if let Some(&(i, j)) = self.indeterminate().first() {
            return Err(ExchangeError::Indeterminate { i, j });
        }
        Ok(ExchangeMatrix {
            d: self.d,
            entries: self.entries.iter().map(|e| e.expect("determined")).collect(),
        })
    }

    /// Completes the matrix by quoting every pair of zero-priced currencies at
    /// par (rate 1). This is one consistent completion among many; callers
    /// opt into it explicitly.
    pub fn resolve_at_par(&self) -> ExchangeMatrix<T> {
        ExchangeMatrix {
            d: self.d,
            entries: self.entries.iter().map(|e| e.unwrap_or_else(XReal::one)).collect(),
        }
    }
}

/// A `d`-vector of extended reals; entry `i` is the price in units of currency `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent, bound(serialize = "T: Scalar", deserialize = "T: Scalar"))]
pub struct ValueVector<T>(pub Vec<XReal<T>>);

impl<T: Scalar> ValueVector<T> {
    pub fn zeros(d: usize) -> Self {
        Self(vec![XReal::zero(); d])
    }

    pub fn d(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, i: usize) -> XReal<T> {
        self.0[i]
    }

    /// The value vector paying `payoff` basket units under `m`: `payoff / S̄_i`
    /// in each currency (`∞` for devalued currencies when `payoff > 0`).
    pub fn from_basket_payoff(m: &ExchangeMatrix<T>, payoff: T) -> Self {
        let b = m.basket_prices();
        Self(
            (0..m.d())
                .map(|i| {
                    if payoff.is_zero() {
                        XReal::zero()
                    } else if b.is_active(i) {
                        XReal::Finite(payoff / b.get(i))
                    } else {
                        XReal::Infinite
                    }
                })
                .collect(),
        )
    }
}

pub fn validate_value_vector_with<T: Scalar>(
    m: &ExchangeMatrix<T>,
    v: &ValueVector<T>,
    tol: T,
) -> Result<ValidationReport, ExchangeError> {
    if v.d() != m.d() {
        return Err(ExchangeError::DimensionMismatch { expected: m.d(), got: v.d() });
    }
    let mut violations = Vec::new();
    for i in 0..m.d() {
        for j in 0..m.d() {
            let Ok(lhs) = m.get(i, j).mul(v.get(j)) else {
                continue;
            };
            if !lhs.approx_eq(&v.get(i), tol) {
                violations.push(Violation::ValueVector {
                    i: i + 1,
                    j: j + 1,
                    product: lhs.to_f64(),
                    value: v.get(i).to_f64(),
                });
            }
        }
    }
    Ok(ValidationReport::from_violations(violations))
}

/// Checks `s[i][j]·v[j] = v[i]` wherever the product is defined.
pub fn validate_value_vector<T: Scalar>(
    m: &ExchangeMatrix<T>,
    v: &ValueVector<T>,
) -> Result<ValidationReport, ExchangeError> {
    validate_value_vector_with(m, v, T::default_tolerances().consistency)
}

/// Basket payoff `C̄ = (1/|𝔄|) Σ_{j∈𝔄} S̄_j C_j` of a claim at maturity.
///
/// Every active-currency evaluation `S̄_i C_i` must agree; a claim that is
/// infinite in an active currency is rejected.
pub fn basket_claim_value<T: Scalar>(m: &ExchangeMatrix<T>, c: &ValueVector<T>) -> Result<T, ExchangeError> {
    let tol = T::default_tolerances().consistency;
    let report = validate_value_vector_with(m, c, tol)?;
    if !report.ok {
        return Err(ExchangeError::InconsistentValueVector(report));
    }
    let b = m.basket_prices();
    let active = m.active_set();
    let mut evaluations = Vec::with_capacity(active.len());
    for &i in &active {
        match c.get(i) {
            XReal::Finite(x) => evaluations.push(b.get(i) * x),
            XReal::Infinite => return Err(ExchangeError::InfiniteActiveEntry { currency: i + 1 }),
        }
    }
    let n = T::from_usize(evaluations.len()).expect("count fits scalar");
    let mean = evaluations.iter().copied().sum::<T>() / n;
    if evaluations.iter().any(|&e| !approx_eq(e, mean, tol)) {
        return Err(ExchangeError::EvaluationsDisagree);
    }
    Ok(mean)
}
