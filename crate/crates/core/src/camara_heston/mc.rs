//! Monte Carlo pricing under the two currency measures.
//!
//! Paths are split into fixed chunks of [`CHUNK_PATHS`]. Chunk `c` of measure `m` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `2c + m`, so results do not depend on the
//! number of worker threads. Chunk statistics are merged in chunk order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{ensure_valid, CHError, CHParams};
use crate::scalar::Scalar;

pub const CHUNK_PATHS: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Measure {
    Q1,
    Q2,
}

impl Measure {
    fn stream(self, chunk: usize) -> u64 {
        2 * chunk as u64
            + match self {
                Measure::Q1 => 0,
                Measure::Q2 => 1,
            }
    }
}

fn chunk_rng(seed: u64, measure: Measure, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(measure.stream(chunk));
    rng
}

fn chunks(n: usize) -> impl IndexedParallelIterator<Item = (usize, usize)> {
    let count = n.div_ceil(CHUNK_PATHS);
    (0..count).into_par_iter().map(move |c| (c, CHUNK_PATHS.min(n - c * CHUNK_PATHS)))
}

/// Simulated paths of `S_12` under `Q_1` or `S_21` under `Q_2` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathBatch<T> {
    pub measure: Measure,
    pub times: Vec<T>,
    /// `paths[p][t]` is the rate at `times[t]`; zero from the devaluation onwards.
    pub paths: Vec<Vec<T>>,
    /// Devaluation time of the other currency when it falls in `[0, T]`.
    pub devaluation: Vec<Option<T>>,
}

impl<T: Scalar> PathBatch<T> {
    pub fn terminal(&self) -> impl Iterator<Item = T> + '_ {
        self.paths.iter().map(|p| *p.last().expect("grid has at least two points"))
    }

    pub fn devalued_count(&self) -> usize {
        self.devaluation.iter().filter(|d| d.is_some()).count()
    }
}

/// Exact simulation: lognormal increments on the grid and an exponential devaluation time.
pub fn simulate_paths<T: Scalar>(
    p: &CHParams<T>,
    measure: Measure,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathBatch<T>, CHError> {
    ensure_valid(p)?;
    if n_paths == 0 {
        return Err(CHError::InvalidCount { what: "n_paths" });
    }
    if n_steps == 0 {
        return Err(CHError::InvalidCount { what: "n_steps" });
    }
    let horizon = p.horizon.as_f64();
    let sigma = p.sigma.as_f64();
    let (start, drift, lambda) = match measure {
        Measure::Q1 => (p.spot.as_f64(), p.mu1.as_f64(), p.lambda2.as_f64()),
        Measure::Q2 => (1.0 / p.spot.as_f64(), -p.mu2.as_f64(), p.lambda1.as_f64()),
    };
    let dt = horizon / n_steps as f64;
    let step_drift = (drift - 0.5 * sigma * sigma) * dt;
    let step_vol = sigma * dt.sqrt();
    let times: Vec<T> = (0..=n_steps).map(|i| T::lit(i as f64 * dt)).collect();

    let per_chunk: Vec<Vec<(Vec<T>, Option<T>)>> = chunks(n_paths)
        .map(|(c, len)| {
            let mut rng = chunk_rng(seed, measure, c);
            (0..len)
                .map(|_| {
                    let e: f64 = rng.sample(Exp1);
                    let tau = if lambda > 0.0 { e / lambda } else { f64::INFINITY };
                    let mut x = start;
                    let mut path = Vec::with_capacity(n_steps + 1);
                    path.push(T::lit(x));
                    for i in 1..=n_steps {
                        let z: f64 = rng.sample(StandardNormal);
                        x *= (step_drift + step_vol * z).exp();
                        let alive = (i as f64 * dt) < tau;
                        path.push(if alive { T::lit(x) } else { T::zero() });
                    }
                    (path, (tau <= horizon).then(|| T::lit(tau)))
                })
                .collect()
        })
        .collect();
    let (paths, devaluation) = per_chunk.into_iter().flatten().unzip();
    Ok(PathBatch { measure, times, paths, devaluation })
}

/// A claim paying `C_1` in currency 1 and, on the devaluation of currency 1, `C_2` in
/// currency 2. Both payoffs must be finite and nonnegative.
pub trait TwoCurrencyClaim<T>: Sync {
    /// `C_1` as a function of `S_12(T)`, which is zero once currency 2 has devalued.
    fn survival_payoff(&self, s12: T) -> T;
    /// `C_2`, paid when currency 1 has devalued (so `S_21(T) = 0`).
    fn devaluation_payoff(&self) -> T;
}

/// Right to exchange `strike` units of currency 1 for one unit of currency 2.
#[derive(Debug, Clone, Copy)]
pub struct ExchangeCall<T> {
    pub strike: T,
}

impl<T: Scalar> TwoCurrencyClaim<T> for ExchangeCall<T> {
    fn survival_payoff(&self, s12: T) -> T {
        (s12 - self.strike).max(T::zero())
    }
    fn devaluation_payoff(&self) -> T {
        // (1 − K·S_21(T))⁺ with S_21(T) = 0
        T::one()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ExchangePut<T> {
    pub strike: T,
}

impl<T: Scalar> TwoCurrencyClaim<T> for ExchangePut<T> {
    fn survival_payoff(&self, s12: T) -> T {
        (self.strike - s12).max(T::zero())
    }
    fn devaluation_payoff(&self) -> T {
        T::zero()
    }
}

/// One unit of currency 1.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalBond;

impl<T: Scalar> TwoCurrencyClaim<T> for SurvivalBond {
    fn survival_payoff(&self, _: T) -> T {
        T::one()
    }
    fn devaluation_payoff(&self) -> T {
        T::zero()
    }
}

/// One unit of currency 2 if currency 1 devalues.
#[derive(Debug, Clone, Copy)]
pub struct DevaluationInsurance;

impl<T: Scalar> TwoCurrencyClaim<T> for DevaluationInsurance {
    fn survival_payoff(&self, _: T) -> T {
        T::zero()
    }
    fn devaluation_payoff(&self) -> T {
        T::one()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LegEstimate<T> {
    pub mean: T,
    pub se: T,
}

/// Monte Carlo price in basket units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate<T> {
    pub estimate: T,
    pub se: T,
    pub paths: usize,
    pub seed: u64,
    /// `E^{Q_1}[C_1]`.
    pub survival: LegEstimate<T>,
    /// `E^{Q_2}[C_2·1{τ_1 ≤ T}]`.
    pub devaluation: LegEstimate<T>,
}

/// Count, mean and sum of squared deviations.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, o: Moments) -> Moments {
        if self.n == 0.0 {
            return o;
        }
        let n = self.n + o.n;
        let delta = o.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * o.n / n,
            m2: self.m2 + o.m2 + delta * delta * self.n * o.n / n,
        }
    }

    fn se(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0)).sqrt() / self.n.sqrt()
    }
}

fn check_payoff<T: Scalar>(v: T) -> Result<f64, CHError> {
    let x = v.as_f64();
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(CHError::InvalidPayoff(x))
    }
}

fn leg<T: Scalar, F>(n_paths: usize, seed: u64, measure: Measure, draw: F) -> Result<Moments, CHError>
where
    F: Fn(&mut ChaCha8Rng) -> Result<f64, CHError> + Sync,
{
    let parts: Vec<Result<Moments, CHError>> = chunks(n_paths)
        .map(|(c, len)| {
            let mut rng = chunk_rng(seed, measure, c);
            let mut m = Moments::default();
            for _ in 0..len {
                m.push(draw(&mut rng)?);
            }
            Ok(m)
        })
        .collect();
    parts.into_iter().try_fold(Moments::default(), |acc, m| Ok(acc.merge(m?)))
}

/// Prices `claim` from `n_paths` samples under each of `Q_1` and `Q_2`.
///
/// Only terminal values are sampled. Moments are accumulated in `f64`.
pub fn mc_price<T: Scalar, C: TwoCurrencyClaim<T> + ?Sized>(
    p: &CHParams<T>,
    claim: &C,
    n_paths: usize,
    seed: u64,
) -> Result<MCEstimate<T>, CHError> {
    ensure_valid(p)?;
    if n_paths == 0 {
        return Err(CHError::InvalidCount { what: "n_paths" });
    }
    let horizon = p.horizon.as_f64();
    let sigma = p.sigma.as_f64();
    let spot = p.spot.as_f64();
    let drift = (p.mu1.as_f64() - 0.5 * sigma * sigma) * horizon;
    let vol = sigma * horizon.sqrt();
    let (lambda1, lambda2) = (p.lambda1.as_f64(), p.lambda2.as_f64());

    let survival = leg::<T, _>(n_paths, seed, Measure::Q1, |rng| {
        let e: f64 = rng.sample(Exp1);
        let z: f64 = rng.sample(StandardNormal);
        let s12 = if e < lambda2 * horizon { 0.0 } else { spot * (drift + vol * z).exp() };
        check_payoff(claim.survival_payoff(T::lit(s12)))
    })?;
    let c2 = check_payoff(claim.devaluation_payoff())?;
    let devaluation = leg::<T, _>(n_paths, seed, Measure::Q2, |rng| {
        let e: f64 = rng.sample(Exp1);
        Ok(if e <= lambda1 * horizon { c2 } else { 0.0 })
    })?;

    let (s1, s2) = p.basket_weights();
    let (s1, s2) = (s1.as_f64(), s2.as_f64());
    let estimate = s1 * survival.mean + s2 * devaluation.mean;
    let se = (s1 * survival.se()).hypot(s2 * devaluation.se());
    Ok(MCEstimate {
        estimate: T::lit(estimate),
        se: T::lit(se),
        paths: n_paths,
        seed,
        survival: LegEstimate { mean: T::lit(survival.mean), se: T::lit(survival.se()) },
        devaluation: LegEstimate { mean: T::lit(devaluation.mean), se: T::lit(devaluation.se()) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camara_heston::{price_exchange_option, price_exchange_put};

    fn base() -> CHParams<f64> {
        CHParams::consistent(1.0, 0.2, 0.05, 0.10, 1.0)
    }

    fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, (v / n).sqrt())
    }

    #[test]
    fn terminal_mean_under_q1() {
        let p = base();
        let b = simulate_paths(&p, Measure::Q1, 100_000, 4, 7).unwrap();
        let xs: Vec<f64> = b.terminal().collect();
        let (m, se) = mean_se(&xs);
        assert!((m - (-0.05f64).exp()).abs() < 3.0 * se, "{m} ± {se}");
        let freq = b.devalued_count() as f64 / 100_000.0;
        let q = 1.0 - (-0.1f64).exp();
        assert!((freq - q).abs() < 3.0 * (q * (1.0 - q) / 100_000.0).sqrt());
        // zero after the devaluation time
        for (path, tau) in b.paths.iter().zip(&b.devaluation) {
            if tau.is_some() {
                assert_eq!(*path.last().unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn terminal_mean_under_q2() {
        let p = CHParams::consistent(1.5, 0.3, 0.2, 0.1, 1.0);
        let b = simulate_paths(&p, Measure::Q2, 100_000, 1, 11).unwrap();
        let xs: Vec<f64> = b.terminal().collect();
        let (m, se) = mean_se(&xs);
        // E[S_21(T)] = e^{−μ_2 T − λ_1 T}/spot = e^{−λ_2 T}/spot
        assert!((m - (-0.1f64).exp() / 1.5).abs() < 3.0 * se);
    }

    #[test]
    fn small_volatility_concentrates() {
        let p = CHParams::consistent(1.3, 1e-6, 0.0, 0.0, 1.0);
        let b = simulate_paths(&p, Measure::Q1, 1000, 3, 1).unwrap();
        assert!(b.terminal().all(|x: f64| (x - 1.3).abs() < 1e-4));
    }

    #[test]
    fn exchange_option_matches_closed_form() {
        let p = base();
        for k in [0.8, 1.0, 1.2] {
            let mc = mc_price(&p, &ExchangeCall { strike: k }, 200_000, 42).unwrap();
            let cf = price_exchange_option(&p, k).unwrap();
            assert!((mc.estimate - cf).abs() < 3.0 * mc.se, "K={k}: {} ± {} vs {cf}", mc.estimate, mc.se);
            let put = mc_price(&p, &ExchangePut { strike: k }, 200_000, 43).unwrap();
            let cf = price_exchange_put(&p, k).unwrap();
            assert!((put.estimate - cf).abs() < 3.0 * put.se);
        }
    }

    #[test]
    fn bond_and_insurance() {
        let p = base();
        let (s1, s2) = p.basket_weights();
        let bond = mc_price(&p, &SurvivalBond, 10_000, 3).unwrap();
        assert!((bond.estimate - s1).abs() < 1e-15);
        assert_eq!(bond.se, 0.0);
        let ins = mc_price(&p, &DevaluationInsurance, 200_000, 3).unwrap();
        let want = s2 * (1.0 - (-0.05f64).exp());
        assert!((ins.estimate - want).abs() < 3.0 * ins.se);
    }

    #[test]
    fn deterministic() {
        let p = base();
        let claim = ExchangeCall { strike: 1.0 };
        let a = mc_price(&p, &claim, 3 * CHUNK_PATHS + 17, 99).unwrap();
        let b = mc_price(&p, &claim, 3 * CHUNK_PATHS + 17, 99).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.se.to_bits(), b.se.to_bits());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = pool.install(|| mc_price(&p, &claim, 3 * CHUNK_PATHS + 17, 99).unwrap());
        assert_eq!(a.estimate.to_bits(), c.estimate.to_bits());
        let d = mc_price(&p, &claim, 3 * CHUNK_PATHS + 17, 100).unwrap();
        assert_ne!(a.estimate, d.estimate);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = base();
        assert!(matches!(mc_price(&p, &SurvivalBond, 0, 1), Err(CHError::InvalidCount { .. })));
        assert!(matches!(simulate_paths(&p, Measure::Q1, 1, 0, 1), Err(CHError::InvalidCount { .. })));
        struct Negative;
        impl TwoCurrencyClaim<f64> for Negative {
            fn survival_payoff(&self, _: f64) -> f64 {
                -1.0
            }
            fn devaluation_payoff(&self) -> f64 {
                0.0
            }
        }
        assert!(matches!(mc_price(&p, &Negative, 10, 1), Err(CHError::InvalidPayoff(_))));
    }
}
