//! Goodness-of-fit statistics for the Monte Carlo verifiers.
//!
//! Everything reports a [`ChiSquare`] with the statistic, the degrees of
//! freedom actually used, and the upper-tail p-value. Bins with zero
//! expected probability are excluded from the statistic, but any observed
//! count landing in such a bin is evidence of an impossible event, so the
//! p-value collapses to 0.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("observed and expected lengths differ: {observed} vs {expected}")]
    LengthMismatch { observed: usize, expected: usize },
    #[error("no samples")]
    EmptySample,
    #[error("expected probabilities sum to {sum}, expected 1 within 1e-9")]
    BadProbabilities { sum: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

impl ChiSquare {
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

fn upper_tail(statistic: f64, df: usize) -> f64 {
    if !statistic.is_finite() {
        return 0.0;
    }
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(statistic)
}

/// Pearson chi-square test of observed counts against a fixed law.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> Result<ChiSquare, StatsError> {
    if observed.len() != expected_probs.len() {
        return Err(StatsError::LengthMismatch {
            observed: observed.len(),
            expected: expected_probs.len(),
        });
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(StatsError::EmptySample);
    }
    let prob_sum: f64 = expected_probs.iter().sum();
    if (prob_sum - 1.0).abs() > 1e-9 {
        return Err(StatsError::BadProbabilities { sum: prob_sum });
    }

    let mut statistic = 0.0;
    let mut used_bins = 0usize;
    for (&obs, &p) in observed.iter().zip(expected_probs.iter()) {
        if p > 0.0 {
            let expected = p * total as f64;
            let diff = obs as f64 - expected;
            statistic += diff * diff / expected;
            used_bins += 1;
        } else if obs > 0 {
            // Mass observed on an impossible outcome.
            statistic = f64::INFINITY;
        }
    }
    let df = used_bins.saturating_sub(1);
    Ok(ChiSquare { statistic, df, p_value: upper_tail(statistic, df) })
}

/// Two-sample chi-square test of homogeneity on a 2 x k contingency table.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> Result<ChiSquare, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { observed: a.len(), expected: b.len() });
    }
    let total_a: u64 = a.iter().sum();
    let total_b: u64 = b.iter().sum();
    if total_a == 0 || total_b == 0 {
        return Err(StatsError::EmptySample);
    }
    let grand = (total_a + total_b) as f64;

    let mut statistic = 0.0;
    let mut used_cols = 0usize;
    for (&oa, &ob) in a.iter().zip(b.iter()) {
        let col = oa + ob;
        if col == 0 {
            continue;
        }
        used_cols += 1;
        let ea = total_a as f64 * col as f64 / grand;
        let eb = total_b as f64 * col as f64 / grand;
        statistic += (oa as f64 - ea).powi(2) / ea + (ob as f64 - eb).powi(2) / eb;
    }
    let df = used_cols.saturating_sub(1);
    Ok(ChiSquare { statistic, df, p_value: upper_tail(statistic, df) })
}

/// Standard error of an empirical proportion under the hypothesized p.
pub fn proportion_se(p: f64, samples: u64) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit_has_zero_statistic() {
        let c = chi_square_gof(&[50, 50], &[0.5, 0.5]).unwrap();
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.df, 1);
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn hand_computed_statistic_and_p_value() {
        // (55-50)^2/50 + (45-50)^2/50 = 1; P(chi2_1 > 1) = 0.317310508.
        let c = chi_square_gof(&[55, 45], &[0.5, 0.5]).unwrap();
        assert!((c.statistic - 1.0).abs() < 1e-12);
        assert!((c.p_value - 0.3173105078629141).abs() < 1e-9);
    }

    #[test]
    fn gross_mismatch_is_rejected() {
        let c = chi_square_gof(&[90, 10], &[0.5, 0.5]).unwrap();
        assert!((c.statistic - 64.0).abs() < 1e-12);
        assert!(c.p_value < 1e-10);
        assert!(!c.passes(0.001));
    }

    #[test]
    fn impossible_outcome_gives_zero_p() {
        let c = chi_square_gof(&[99, 1], &[1.0, 0.0]).unwrap();
        assert_eq!(c.p_value, 0.0);
    }

    #[test]
    fn zero_probability_bins_are_skipped() {
        let c = chi_square_gof(&[100, 0, 100], &[0.5, 0.0, 0.5]).unwrap();
        assert_eq!(c.df, 1);
        assert_eq!(c.statistic, 0.0);
    }

    #[test]
    fn single_live_bin_is_trivially_accepted() {
        let c = chi_square_gof(&[100], &[1.0]).unwrap();
        assert_eq!(c.df, 0);
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn gof_validates_input() {
        assert!(matches!(
            chi_square_gof(&[1, 2], &[1.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(chi_square_gof(&[0, 0], &[0.5, 0.5]), Err(StatsError::EmptySample)));
        assert!(matches!(
            chi_square_gof(&[1, 1], &[0.7, 0.7]),
            Err(StatsError::BadProbabilities { .. })
        ));
    }

    #[test]
    fn two_sample_identical_counts_pass() {
        let c = chi_square_two_sample(&[30, 70], &[30, 70]).unwrap();
        assert_eq!(c.statistic, 0.0);
        assert_eq!(c.df, 1);
        assert_eq!(c.p_value, 1.0);
    }

    #[test]
    fn two_sample_hand_computed() {
        // Table [[10, 20], [20, 10]]: expected 15 everywhere,
        // statistic = 4 * 25/15 = 20/3; P(chi2_1 > 6.6667) = 0.0098.
        let c = chi_square_two_sample(&[10, 20], &[20, 10]).unwrap();
        assert!((c.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert!((c.p_value - 0.009823274507519235).abs() < 1e-9);
    }

    #[test]
    fn two_sample_skips_empty_columns() {
        let c = chi_square_two_sample(&[5, 0, 5], &[4, 0, 6]).unwrap();
        assert_eq!(c.df, 1);
    }

    #[test]
    fn proportion_se_matches_formula() {
        assert!((proportion_se(0.5, 100) - 0.05).abs() < 1e-15);
        assert_eq!(proportion_se(0.0, 100), 0.0);
    }
}
