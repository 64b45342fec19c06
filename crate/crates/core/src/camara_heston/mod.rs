//! Two-currency diffusion with devaluation jumps.
//!
//! Under `Q_1` the rate `S_12(t) = spot·exp(σW_1(t) − σ²t/2 + μ_1 t)·1{t < τ_2}` with
//! `τ_2 ~ Exp(λ_2)` independent of `W_1`. Under `Q_2` the rate
//! `S_21(t) = exp(σW_2(t) − σ²t/2 − μ_2 t)·1{t < τ_1}/spot` with `τ_1 ~ Exp(λ_1)`.
//! The two measures are consistent iff `λ_2 − λ_1 = μ_1 = μ_2`; each rate is a
//! supermartingale iff `λ_2 ≥ μ_1` and `λ_1 ≥ −μ_2`.
//!
//! The aggregated price of a claim paying `C_1` in currency 1 and `C_2` in currency 2 on
//! the devaluation of currency 1 is `S̄_1(0)·E^{Q_1}[C_1] + S̄_2(0)·E^{Q_2}[C_2·1{τ_1 ≤ T}]`,
//! in basket units.
//!
//! `λ = 0` is accepted and gives the no-jump limit.

mod mc;
mod normal;

pub use mc::{
    mc_price, simulate_paths, DevaluationInsurance, ExchangeCall, ExchangePut, LegEstimate,
    MCEstimate, Measure, PathBatch, SurvivalBond, TwoCurrencyClaim, CHUNK_PATHS,
};
pub use normal::norm_cdf;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{scaled_residual, Scalar};

/// Model parameters. JSON keys: `spot`, `sigma`, `mu1`, `mu2`, `lambda1`, `lambda2`, `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CHParams<T> {
    /// Currency-1 units per unit of currency 2 at time 0.
    pub spot: T,
    pub sigma: T,
    pub mu1: T,
    pub mu2: T,
    /// Intensity of the devaluation of currency 1 under `Q_2`.
    pub lambda1: T,
    /// Intensity of the devaluation of currency 2 under `Q_1`.
    pub lambda2: T,
    #[serde(rename = "T")]
    pub horizon: T,
}

impl<T: Scalar> CHParams<T> {
    /// Parameters satisfying the consistency constraint, with `μ_1 = μ_2 = λ_2 − λ_1`.
    pub fn consistent(spot: T, sigma: T, lambda1: T, lambda2: T, horizon: T) -> Self {
        let mu = lambda2 - lambda1;
        Self { spot, sigma, mu1: mu, mu2: mu, lambda1, lambda2, horizon }
    }

    /// `(S̄_1(0), S̄_2(0)) = (1, spot)/(1 + spot)`.
    pub fn basket_weights(&self) -> (T, T) {
        let total = T::one() + self.spot;
        (T::one() / total, self.spot / total)
    }

    /// `Q_2(τ_1 ≤ T)`.
    pub fn devaluation_prob_1(&self) -> T {
        -(-self.lambda1 * self.horizon).exp_m1()
    }

    /// `Q_1(τ_2 ≤ T)`.
    pub fn devaluation_prob_2(&self) -> T {
        -(-self.lambda2 * self.horizon).exp_m1()
    }

    fn fields(&self) -> [(&'static str, T); 7] {
        [
            ("spot", self.spot),
            ("sigma", self.sigma),
            ("mu1", self.mu1),
            ("mu2", self.mu2),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("T", self.horizon),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    /// Positivity and nondegeneracy of the individual parameters.
    Domain,
    /// `λ_2 − λ_1 = μ_1 = μ_2`.
    Consistency,
    /// `λ_1 ≥ −μ_2` and `λ_2 ≥ μ_1`.
    Supermartingale,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::Domain => "domain constraint",
            Constraint::Consistency => "consistency constraint",
            Constraint::Supermartingale => "supermartingale constraint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamViolation {
    pub constraint: Constraint,
    pub detail: String,
}

impl fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} violated: {}", self.constraint, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub ok: bool,
    pub violations: Vec<ParamViolation>,
}

impl ParamReport {
    pub fn violates(&self, c: Constraint) -> bool {
        self.violations.iter().any(|v| v.constraint == c)
    }
}

impl fmt::Display for ParamReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok {
            return f.write_str("parameters valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CHError {
    #[error("parameter `{field}` is not finite")]
    NonFinite { field: &'static str },
    #[error("invalid parameters: {0}")]
    Invalid(ParamReport),
    #[error("strike must be finite and nonnegative, got {0}")]
    InvalidStrike(f64),
    #[error("{what} must be at least 1")]
    InvalidCount { what: &'static str },
    #[error("claim payoff must be finite and nonnegative, got {0}")]
    InvalidPayoff(f64),
}

/// Checks the domain, consistency and supermartingale constraints.
///
/// Equalities are compared with the scalar's identity tolerance (`1e-12` for `f64`),
/// inequalities allow the same slack.
pub fn validate_params<T: Scalar>(p: &CHParams<T>) -> Result<ParamReport, CHError> {
    for (field, v) in p.fields() {
        if !v.is_finite() {
            return Err(CHError::NonFinite { field });
        }
    }
    let tol = T::default_tolerances().identity;
    let mut violations = Vec::new();
    let mut push = |constraint, detail: String| violations.push(ParamViolation { constraint, detail });

    if p.spot <= T::zero() {
        push(Constraint::Domain, format!("spot = {} must be positive", p.spot));
    }
    if p.sigma == T::zero() {
        push(Constraint::Domain, "sigma must be nonzero".into());
    }
    if p.horizon <= T::zero() {
        push(Constraint::Domain, format!("T = {} must be positive", p.horizon));
    }
    if p.lambda1 < T::zero() {
        push(Constraint::Domain, format!("lambda1 = {} must be nonnegative", p.lambda1));
    }
    if p.lambda2 < T::zero() {
        push(Constraint::Domain, format!("lambda2 = {} must be nonnegative", p.lambda2));
    }

    let gap = p.lambda2 - p.lambda1;
    if scaled_residual(gap, p.mu1) > tol {
        push(
            Constraint::Consistency,
            format!("lambda2 - lambda1 = {gap} differs from mu1 = {}", p.mu1),
        );
    }
    if scaled_residual(p.mu1, p.mu2) > tol {
        push(Constraint::Consistency, format!("mu1 = {} differs from mu2 = {}", p.mu1, p.mu2));
    }
    if p.lambda2 < p.mu1 - tol {
        push(
            Constraint::Supermartingale,
            format!("lambda2 = {} is below mu1 = {}", p.lambda2, p.mu1),
        );
    }
    if p.lambda1 < -p.mu2 - tol {
        push(
            Constraint::Supermartingale,
            format!("lambda1 = {} is below -mu2 = {}", p.lambda1, -p.mu2),
        );
    }
    Ok(ParamReport { ok: violations.is_empty(), violations })
}

fn ensure_valid<T: Scalar>(p: &CHParams<T>) -> Result<(), CHError> {
    let report = validate_params(p)?;
    if report.ok {
        Ok(())
    } else {
        Err(CHError::Invalid(report))
    }
}

fn ensure_strike<T: Scalar>(k: T) -> Result<(), CHError> {
    if k.is_finite() && k >= T::zero() {
        Ok(())
    } else {
        Err(CHError::InvalidStrike(k.as_f64()))
    }
}

/// `(d_1, d_2)`; `d_1 = +∞` at `K = 0`. A negative `σ` enters through `|σ|`.
fn d_terms<T: Scalar>(p: &CHParams<T>, k: T) -> (T, T) {
    let vol = p.sigma.abs() * p.horizon.sqrt();
    if k == T::zero() {
        return (T::infinity(), T::infinity());
    }
    let half = T::lit(0.5);
    let d1 = ((p.spot / k).ln() + (p.lambda2 - p.lambda1 + half * p.sigma * p.sigma) * p.horizon) / vol;
    (d1, d1 - vol)
}

/// `a·Φ(x)` with `0·Φ(·) = 0`.
fn weighted_cdf<T: Scalar>(a: T, x: T) -> T {
    if a == T::zero() {
        T::zero()
    } else {
        a * norm_cdf(x)
    }
}

/// `E^{Q_1}[(S_12(T) − K)⁺]` in currency-1 units.
pub fn classical_call<T: Scalar>(p: &CHParams<T>, k: T) -> Result<T, CHError> {
    ensure_valid(p)?;
    ensure_strike(k)?;
    Ok(classical_call_unchecked(p, k))
}

fn classical_call_unchecked<T: Scalar>(p: &CHParams<T>, k: T) -> T {
    let (d1, d2) = d_terms(p, k);
    let surv1 = (-p.lambda1 * p.horizon).exp();
    let surv2 = (-p.lambda2 * p.horizon).exp();
    weighted_cdf(p.spot * surv1, d1) - weighted_cdf(k * surv2, d2)
}

/// `E^{Q_1}[(K − S_12(T))⁺]` in currency-1 units. On `{τ_2 ≤ T}` the put pays `K`.
pub fn classical_put<T: Scalar>(p: &CHParams<T>, k: T) -> Result<T, CHError> {
    ensure_valid(p)?;
    ensure_strike(k)?;
    Ok(classical_put_unchecked(p, k))
}

fn classical_put_unchecked<T: Scalar>(p: &CHParams<T>, k: T) -> T {
    if k == T::zero() {
        return T::zero();
    }
    let (d1, d2) = d_terms(p, k);
    let surv1 = (-p.lambda1 * p.horizon).exp();
    let surv2 = (-p.lambda2 * p.horizon).exp();
    k * p.devaluation_prob_2() + weighted_cdf(k * surv2, -d2) - weighted_cdf(p.spot * surv1, -d1)
}

/// Aggregated value, in basket units, of the option to exchange `K` units of currency 1
/// for one unit of currency 2.
pub fn price_exchange_option<T: Scalar>(p: &CHParams<T>, k: T) -> Result<T, CHError> {
    ensure_valid(p)?;
    ensure_strike(k)?;
    let (s1, s2) = p.basket_weights();
    Ok(s1 * classical_call_unchecked(p, k) + s2 * p.devaluation_prob_1())
}

/// Aggregated value of the put: `(K − S_12(T))⁺` on survival, nothing on the devaluation
/// of currency 1.
pub fn price_exchange_put<T: Scalar>(p: &CHParams<T>, k: T) -> Result<T, CHError> {
    ensure_valid(p)?;
    ensure_strike(k)?;
    let (s1, _) = p.basket_weights();
    Ok(s1 * classical_put_unchecked(p, k))
}

/// The exchange option's price in currency-1 units, split into the `Q_1` expectation and
/// the devaluation correction `spot·Q_2(τ_1 ≤ T)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PriceDecomposition<T> {
    pub classical: T,
    pub correction: T,
    pub total: T,
}

pub fn decompose_price<T: Scalar>(p: &CHParams<T>, k: T) -> Result<PriceDecomposition<T>, CHError> {
    ensure_valid(p)?;
    ensure_strike(k)?;
    let classical = classical_call_unchecked(p, k);
    let correction = p.spot * p.devaluation_prob_1();
    Ok(PriceDecomposition { classical, correction, total: classical + correction })
}

/// Put-call parity under the aggregated measure and under `Q_1` alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParityReport<T> {
    pub strike: T,
    pub call: T,
    pub put: T,
    /// `S̄_2(0) − K·S̄_1(0)`.
    pub forward: T,
    /// `call − put − forward`; zero up to rounding.
    pub aggregated_residual: T,
    pub aggregated_ok: bool,
    pub classical_call: T,
    pub classical_put: T,
    /// `[call_1 − put_1] − [spot − K]` under `Q_1`, equal to `−spot·Q_2(τ_1 ≤ T)`.
    pub classical_gap: T,
    pub correction: T,
    /// `|classical_gap + correction|`.
    pub gap_residual: T,
}

pub fn parity_report<T: Scalar>(p: &CHParams<T>, k: T) -> Result<ParityReport<T>, CHError> {
    ensure_valid(p)?;
    ensure_strike(k)?;
    let tol = T::default_tolerances().identity;
    let (s1, s2) = p.basket_weights();
    let classical_call = classical_call_unchecked(p, k);
    let classical_put = classical_put_unchecked(p, k);
    let call = s1 * classical_call + s2 * p.devaluation_prob_1();
    let put = s1 * classical_put;
    let forward = s2 - k * s1;
    let aggregated_residual = call - put - forward;
    let classical_gap = (classical_call - classical_put) - (p.spot - k);
    let correction = p.spot * p.devaluation_prob_1();
    Ok(ParityReport {
        strike: k,
        call,
        put,
        forward,
        aggregated_residual,
        aggregated_ok: aggregated_residual.abs() <= tol * (T::one() + k),
        classical_call,
        classical_put,
        classical_gap,
        correction,
        gap_residual: (classical_gap + correction).abs(),
    })
}

/// Density `dQ/dP` restricted to the devaluation time, for a change of intensity from
/// `lambda_p` to `lambda`: `e^{(λ_P − λ)(T∧τ)}·(λ/λ_P)^{1{τ ≤ T}}`.
///
/// Under `P` with `τ ~ Exp(λ_P)` the reweighted law of `τ` on `[0, T]` is `Exp(λ)`.
pub fn intensity_density<T: Scalar>(lambda_p: T, lambda: T, tau: T, horizon: T) -> T {
    let stop = tau.min(horizon);
    let base = ((lambda_p - lambda) * stop).exp();
    if tau <= horizon {
        base * lambda / lambda_p
    } else {
        base
    }
}
