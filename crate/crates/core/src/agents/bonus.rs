//! Exploration bonuses.

use crate::error::{invalid, Result};

/// Hoeffding-style bonus `min{ scale * 2 sqrt(H^2 iota / n), 1/(1-gamma) }`.
///
/// An empty stage (`n_stage == 0`) gets the full value bound.
pub fn hoeffding_bonus(n_stage: u64, horizon: u64, iota: f64, scale: f64, value_bound: f64) -> f64 {
    if n_stage == 0 {
        return value_bound;
    }
    let h = horizon as f64;
    (scale * 2.0 * (h * h * iota / n_stage as f64).sqrt()).min(value_bound)
}

/// Raw accumulators feeding the variance-aware bonus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinStats {
    /// Sum of advantage samples in the current type-I stage.
    pub mu_check: f64,
    /// Sum of squared advantage samples in the current type-I stage.
    pub sigma_check: f64,
    pub n_check: u64,
    /// Lifetime sum of reference values at the next state.
    pub mu_ref: f64,
    /// Lifetime sum of squared reference values.
    pub sigma_ref: f64,
    pub n_total: u64,
}

/// Constants of the variance-aware bonus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinParams {
    pub horizon: u64,
    pub iota: f64,
    pub scale: f64,
    pub value_bound: f64,
    /// Coefficient on the `H iota / n` terms.
    pub tail_coeff: f64,
}

/// Empirical variance `sum_sq / n - (sum / n)^2`, floored at zero.
fn empirical_variance(sum: f64, sum_sq: f64, n: f64) -> f64 {
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0)
}

/// Variance-aware type-I bonus built from the stage advantage statistics and
/// the lifetime reference statistics.
pub fn bernstein_bonus(stats: &BernsteinStats, params: &BernsteinParams) -> Result<f64> {
    if stats.n_check == 0 {
        return Ok(params.value_bound);
    }
    if stats.n_total < stats.n_check {
        return invalid(format!(
            "total count {} is below the stage count {}",
            stats.n_total, stats.n_check
        ));
    }
    let (n, n_check) = (stats.n_total as f64, stats.n_check as f64);
    let (h, iota) = (params.horizon as f64, params.iota);

    let var_check = empirical_variance(stats.mu_check, stats.sigma_check, n_check);
    let var_ref = empirical_variance(stats.mu_ref, stats.sigma_ref, n);
    let variance_term =
        2.0 * std::f64::consts::SQRT_2 * ((var_check / n_check * iota).sqrt() + (var_ref / n * iota).sqrt());
    let iota34 = iota.powf(0.75);
    let mid_term = 7.0 * (h * iota34 / n.powf(0.75) + h * iota34 / n_check.powf(0.75));
    let tail_term = params.tail_coeff * (h * iota / n + h * iota / n_check);

    Ok((params.scale * (variance_term + mid_term + tail_term)).min(params.value_bound))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hoeffding_examples() {
        assert!((hoeffding_bonus(400, 5, 4.0, 1.0, 2.0) - 1.0).abs() < 1e-12);
        assert_eq!(hoeffding_bonus(1, 5, 4.0, 1.0, 2.0), 2.0);
        assert_eq!(hoeffding_bonus(0, 5, 4.0, 1.0, 2.0), 2.0);
        assert_eq!(hoeffding_bonus(7, 5, 4.0, 0.0, 2.0), 0.0);
    }

    fn params(scale: f64, value_bound: f64) -> BernsteinParams {
        BernsteinParams {
            horizon: 2,
            iota: 1.0,
            scale,
            value_bound,
            tail_coeff: 4.0,
        }
    }

    #[test]
    fn bernstein_zero_variance() {
        // advantages all 0.3, reference values all 1.5
        let stats = BernsteinStats {
            mu_check: 16.0 * 0.3,
            sigma_check: 16.0 * 0.09,
            n_check: 16,
            mu_ref: 16.0 * 1.5,
            sigma_ref: 16.0 * 2.25,
            n_total: 16,
        };
        let uncapped = bernstein_bonus(&stats, &params(1.0, 100.0)).unwrap();
        assert!((uncapped - 4.5).abs() < 1e-9, "{uncapped}");
        assert_eq!(bernstein_bonus(&stats, &params(1.0, 2.0)).unwrap(), 2.0);
        assert_eq!(bernstein_bonus(&stats, &params(0.0, 2.0)).unwrap(), 0.0);
    }

    #[test]
    fn bernstein_conventions_and_errors() {
        let empty = BernsteinStats {
            mu_check: 0.0,
            sigma_check: 0.0,
            n_check: 0,
            mu_ref: 0.0,
            sigma_ref: 0.0,
            n_total: 3,
        };
        assert_eq!(bernstein_bonus(&empty, &params(1.0, 3.0)).unwrap(), 3.0);
        let bad = BernsteinStats {
            n_check: 5,
            n_total: 4,
            ..empty
        };
        assert!(bernstein_bonus(&bad, &params(1.0, 3.0)).is_err());
    }

    #[test]
    fn bernstein_variance_term() {
        // stage advantages {0, 1} x 8: variance 0.25; reference constant
        let stats = BernsteinStats {
            mu_check: 8.0,
            sigma_check: 8.0,
            n_check: 16,
            mu_ref: 16.0,
            sigma_ref: 16.0,
            n_total: 16,
        };
        let got = bernstein_bonus(&stats, &params(1.0, 100.0)).unwrap();
        let expected = 2.0 * 2f64.sqrt() * (0.25f64 / 16.0).sqrt() + 4.5;
        assert!((got - expected).abs() < 1e-12);
    }
}
