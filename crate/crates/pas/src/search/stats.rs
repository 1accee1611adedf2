//! Statistics for comparing path scores: the two-proportion chi-square
//! statistic and Spearman rank correlation.

use crate::{Error, Result};

/// Chi-square statistic (1 degree of freedom) for two success rates measured
/// on `n` samples each: 2n(s1−s2)² / ((s1+s2)(2−s1−s2)).
///
/// Equal rates give 0, including the degenerate endpoints where both rates
/// are 0 or 1 (the raw formula would divide by zero there).
pub fn chi_square_stat(n: usize, s1: f64, s2: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&s1) || !(0.0..=1.0).contains(&s2) {
        return Err(Error::invalid(format!(
            "success rates must be in [0, 1], got {s1} and {s2}"
        )));
    }
    if s1 == s2 {
        return Ok(0.0);
    }
    let sum = s1 + s2;
    Ok(2.0 * n as f64 * (s1 - s2).powi(2) / (sum * (2.0 - sum)))
}

/// Upper-tail chi-square critical values, 1 degree of freedom.
const THRESHOLDS: &[(f64, f64)] = &[(0.90, 2.706), (0.95, 3.841), (0.99, 6.635)];

pub fn chi_square_threshold(level: f64) -> Result<f64> {
    THRESHOLDS
        .iter()
        .find(|(l, _)| (l - level).abs() < 1e-9)
        .map(|&(_, t)| t)
        .ok_or_else(|| {
            Error::Configuration(format!(
                "no chi-square threshold tabulated for confidence level {level}"
            ))
        })
}

/// Significance decision at the given confidence level; the threshold is
/// inclusive (a statistic exactly at the critical value counts).
pub fn is_significant(stat: f64, level: f64) -> Result<bool> {
    Ok(stat >= chi_square_threshold(level)?)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average rank over the tie group (1-based ranks)
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(
            "spearman needs two equally sized samples of at least 2",
        ));
    }
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        var_x += (a - mean).powi(2);
        var_y += (b - mean).powi(2);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Err(Error::invalid("spearman undefined for constant input"));
    }
    Ok(cov / (var_x.sqrt() * var_y.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_equal_rates_are_zero() {
        assert_eq!(chi_square_stat(200, 0.5, 0.5).unwrap(), 0.0);
        assert_eq!(chi_square_stat(200, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(chi_square_stat(200, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn chi_square_formula_values() {
        let stat = chi_square_stat(200, 0.5, 0.6).unwrap();
        assert!((stat - 4.0404).abs() < 0.001, "stat {stat}");
        let stat = chi_square_stat(200, 0.35, 0.20).unwrap();
        assert!((stat - 11.285).abs() < 0.001, "stat {stat}");
    }

    #[test]
    fn significance_boundary_is_inclusive() {
        assert!(is_significant(3.841, 0.95).unwrap());
        assert!(!is_significant(0.0, 0.95).unwrap());
        assert!(is_significant(4.0404, 0.95).unwrap());
        assert!(!is_significant(3.840, 0.95).unwrap());
    }

    #[test]
    fn unknown_level_is_rejected() {
        assert!(is_significant(1.0, 0.123).is_err());
    }

    #[test]
    fn spearman_perfect_and_inverse() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&xs, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&xs, &[8.0, 6.0, 4.0, 2.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_handles_ties_with_average_ranks() {
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [1.0, 2.0, 3.0, 4.0];
        let rho = spearman(&xs, &ys).unwrap();
        assert!(rho > 0.9 && rho < 1.0);
    }
}
