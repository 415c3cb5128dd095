//! Small statistics helpers for reports and acceptance checks.

use crate::error::{Error, Result};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance `(1/n) sum (x - mean)^2`.
pub fn population_variance(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance with the n-1 denominator.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Normal-approximation 95% confidence half-width over per-seed values.
pub fn ci95_half_width(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    1.96 * (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// One-sided paired t-test for `mean(diffs) > 0`.
///
/// Returns `(t, p)` where small `p` favors a positive mean difference.
/// Degenerate spread (all diffs equal) resolves by sign.
pub fn paired_one_sided_t(diffs: &[f64]) -> Result<(f64, f64)> {
    if diffs.len() < 2 {
        return Err(Error::InvalidArgument(
            "paired t-test needs at least 2 pairs".to_string(),
        ));
    }
    let n = diffs.len() as f64;
    let m = mean(diffs);
    let var = sample_variance(diffs);
    if var == 0.0 {
        return Ok(if m > 0.0 {
            (f64::INFINITY, 0.0)
        } else if m < 0.0 {
            (f64::NEG_INFINITY, 1.0)
        } else {
            (0.0, 0.5)
        });
    }
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0)
        .map_err(|e| Error::InvalidArgument(format!("t distribution: {e}")))?;
    Ok((t, 1.0 - dist.cdf(t)))
}

/// Chi-square goodness-of-fit p-value against a uniform distribution over
/// `k` categories, given observed counts.
pub fn chi_square_uniform_p(counts: &[u64]) -> Result<f64> {
    let k = counts.len();
    if k < 2 {
        return Err(Error::InvalidArgument(
            "chi-square needs at least 2 categories".to_string(),
        ));
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no observations".to_string()));
    }
    let expected = total as f64 / k as f64;
    let statistic: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((k - 1) as f64)
        .map_err(|e| Error::InvalidArgument(format!("chi-square distribution: {e}")))?;
    Ok(1.0 - dist.cdf(statistic))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_forms() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((population_variance(&xs) - 1.25).abs() < 1e-12);
        assert!((sample_variance(&xs) - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn t_test_directions() {
        let (_, p_up) = paired_one_sided_t(&[0.1, 0.2, 0.15, 0.12, 0.09]).unwrap();
        assert!(p_up < 0.01);
        let (_, p_down) = paired_one_sided_t(&[-0.1, -0.2, -0.15, -0.12, -0.09]).unwrap();
        assert!(p_down > 0.99);
        let (_, p_flat) = paired_one_sided_t(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(p_flat, 0.5);
    }

    #[test]
    fn chi_square_uniform_counts() {
        let p = chi_square_uniform_p(&[100, 101, 99, 100]).unwrap();
        assert!(p > 0.9);
        let p = chi_square_uniform_p(&[400, 0, 0, 0]).unwrap();
        assert!(p < 1e-6);
    }
}
