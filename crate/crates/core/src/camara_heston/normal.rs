//! Standard normal distribution function.

use crate::scalar::Scalar;

/// `Φ(x) = erfc(-x/√2) / 2`, evaluated in `f64`. `Φ(±∞)` is exact.
pub fn norm_cdf<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    T::lit(0.5 * libm::erfc(-x / std::f64::consts::SQRT_2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // values from the closed form at exactly representable points
        assert_eq!(norm_cdf(0.0_f64), 0.5);
        assert_eq!(norm_cdf(f64::INFINITY), 1.0);
        assert_eq!(norm_cdf(f64::NEG_INFINITY), 0.0);
        assert!((norm_cdf(1.0_f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((norm_cdf(-2.0_f64) - 0.022_750_131_948_179_2).abs() < 1e-15);
        assert!(norm_cdf(-37.0_f64) > 0.0);
    }

    #[test]
    fn symmetric() {
        for k in 0..200 {
            let x = -10.0 + 0.1 * k as f64;
            assert!((norm_cdf(x) + norm_cdf(-x) - 1.0).abs() < 1e-15);
        }
    }
}
