//! Augmented Dickey-Fuller unit-root test (constant, no trend).
//!
//! Regression: `Δx_t = α + β x_{t-1} + Σ_{i=1..p} γ_i Δx_{t-i} + ε_t`,
//! statistic `β̂ / se(β̂)`, rejected in the left tail.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dickey-Fuller quantiles (1%, 5%, 10%) for the constant-only case by
/// series length. Generated by `examples/df_critical_values.rs`; the last
/// row is the large-sample limit.
// 1000000 replications per row
const DF_TABLE: [(f64, [f64; 3]); 6] = [
    (25.0, [-3.7294, -2.9904, -2.6340]),
    (50.0, [-3.5776, -2.9230, -2.5988]),
    (100.0, [-3.4967, -2.8889, -2.5816]),
    (250.0, [-3.4584, -2.8740, -2.5740]),
    (500.0, [-3.4461, -2.8696, -2.5707]),
    (f64::INFINITY, [-3.4298, -2.8618, -2.5664]),
];

pub const SIGNIFICANCE_LEVELS: [f64; 3] = [0.01, 0.05, 0.10];
pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdfResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub significance: f64,
    pub lags: usize,
    /// True when the unit root is rejected, i.e. the series is treated as
    /// stationary.
    pub reject_unit_root: bool,
}

/// Schwert's rule `floor(12 (N/100)^(1/4))`.
pub fn schwert_lags(n: usize) -> usize {
    (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize
}

/// Critical value at `significance` for a series of length `n`, linear in
/// `1/n` between table rows.
pub fn critical_value(n: usize, significance: f64) -> Result<f64> {
    let col = SIGNIFICANCE_LEVELS
        .iter()
        .position(|s| (s - significance).abs() < 1e-12)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "significance must be one of 0.01, 0.05, 0.10, got {significance}"
            ))
        })?;
    let inv = 1.0 / n as f64;
    let point = |row: usize| (1.0 / DF_TABLE[row].0, DF_TABLE[row].1[col]);
    // rows are ordered by decreasing 1/n; pick the bracketing segment
    let seg = (0..DF_TABLE.len() - 1)
        .find(|&i| inv >= point(i + 1).0)
        .unwrap_or(DF_TABLE.len() - 2);
    let (x0, y0) = point(seg);
    let (x1, y1) = point(seg + 1);
    Ok(y1 + (y0 - y1) * (inv - x1) / (x0 - x1))
}

/// OLS fit of the ADF regression, exposed for inspection.
#[derive(Debug, Clone)]
pub struct AdfRegression {
    /// `[α, β, γ_1..γ_p]`, with the level regressor centered on the series
    /// mean (which leaves β and its standard error unchanged).
    pub coefficients: Vec<f64>,
    pub std_error_beta: f64,
    pub residuals: Vec<f64>,
    pub lags: usize,
    /// First regression row corresponds to `t = first_t`.
    pub first_t: usize,
    /// Centered series used to build the regressors.
    pub centered: Vec<f64>,
}

impl AdfRegression {
    /// Value of regressor `col` at time `t` (0 = constant, 1 = level,
    /// `1 + i` = lagged difference `i`).
    pub fn regressor(&self, col: usize, t: usize) -> f64 {
        let x = &self.centered;
        match col {
            0 => 1.0,
            1 => x[t - 1],
            i => x[t - (i - 1)] - x[t - i],
        }
    }

    pub fn statistic(&self) -> f64 {
        self.coefficients[1] / self.std_error_beta
    }
}

pub fn adf_regression(series: &[f64], lags: usize) -> Result<AdfRegression> {
    let n = series.len();
    if n < 20 + lags {
        return Err(Error::SeriesTooShort {
            needed: 20 + lags,
            got: n,
        });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let var = x.iter().map(|v| v * v).sum::<f64>();
    if !(var > 0.0) || !var.is_finite() {
        return Err(Error::ZeroVariance);
    }
    // d[t] = x[t] - x[t-1] for t >= 1; d[0] unused
    let mut d = vec![0.0; n];
    for t in 1..n {
        d[t] = x[t] - x[t - 1];
    }
    if d[1..].iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroVariance);
    }

    let p = lags;
    let first_t = p + 1;
    let nobs = n - first_t;
    let k = p + 2;
    if nobs <= k {
        return Err(Error::SeriesTooShort {
            needed: first_t + k + 1,
            got: n,
        });
    }
    // column slices over t = first_t..n
    let level = &x[first_t - 1..n - 1];
    let lagged = |i: usize| &d[first_t - i..n - i];
    let target = &d[first_t..n];

    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    xtx[(0, 0)] = nobs as f64;
    xtx[(0, 1)] = level.iter().sum();
    xtx[(1, 1)] = dot(level, level);
    xty[0] = target.iter().sum();
    xty[1] = dot(level, target);
    for i in 1..=p {
        let col = lagged(i);
        xtx[(0, 1 + i)] = col.iter().sum();
        xtx[(1, 1 + i)] = dot(level, col);
        xty[1 + i] = dot(col, target);
    }
    // lagged-difference block: entries on each diagonal differ only by the
    // terms entering and leaving the shifted window
    for lag in 0..p {
        let mut s = dot(lagged(1), lagged(1 + lag));
        xtx[(2, 2 + lag)] = s;
        for i in 2..=p - lag {
            let j = i + lag;
            s += d[first_t - i] * d[first_t - j] - d[n - i] * d[n - j];
            xtx[(1 + i, 1 + j)] = s;
        }
    }
    for r in 0..k {
        for c in 0..r {
            xtx[(r, c)] = xtx[(c, r)];
        }
    }

    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidArgument("singular ADF design matrix".into()))?;
    let coef = chol.solve(&xty);
    let mut unit = DVector::<f64>::zeros(k);
    unit[1] = 1.0;
    let inv_beta = chol.solve(&unit)[1];

    let mut residuals = Vec::with_capacity(nobs);
    let mut sse = 0.0;
    for (row, t) in (first_t..n).enumerate() {
        let mut fitted = coef[0] + coef[1] * level[row];
        for i in 1..=p {
            fitted += coef[1 + i] * d[t - i];
        }
        let e = target[row] - fitted;
        sse += e * e;
        residuals.push(e);
    }
    let s2 = sse / (nobs - k) as f64;
    let std_error_beta = (s2 * inv_beta).sqrt();
    if !(std_error_beta > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(AdfRegression {
        coefficients: coef.iter().cloned().collect(),
        std_error_beta,
        residuals,
        lags: p,
        first_t,
        centered: x,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// ADF test with the lag order from [`schwert_lags`], capped at `max_lag`.
pub fn adf_test(series: &[f64], max_lag: Option<usize>, significance: f64) -> Result<AdfResult> {
    let mut lags = schwert_lags(series.len());
    if let Some(cap) = max_lag {
        lags = lags.min(cap);
    }
    let critical_value = critical_value(series.len(), significance)?;
    let reg = adf_regression(series, lags)?;
    let statistic = reg.statistic();
    Ok(AdfResult {
        statistic,
        critical_value,
        significance,
        lags,
        reject_unit_root: statistic < critical_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::PortableRng;

    fn random_walk(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = PortableRng::new(seed);
        let mut x = -30.0;
        (0..n)
            .map(|_| {
                x += rng.normal();
                x
            })
            .collect()
    }

    fn ar1(n: usize, phi: f64, seed: u64) -> Vec<f64> {
        let mut rng = PortableRng::new(seed);
        let mut x = 0.0;
        (0..n)
            .map(|_| {
                x = phi * x + rng.normal();
                x - 25.0
            })
            .collect()
    }

    /// Straightforward OLS on the explicit design, for cross-checking the
    /// windowed normal equations.
    fn naive_stat(series: &[f64], p: usize) -> f64 {
        let n = series.len();
        let first = p + 1;
        let rows = n - first;
        let k = p + 2;
        let mut design = DMatrix::<f64>::zeros(rows, k);
        let mut y = DVector::<f64>::zeros(rows);
        for (r, t) in (first..n).enumerate() {
            design[(r, 0)] = 1.0;
            design[(r, 1)] = series[t - 1];
            for i in 1..=p {
                design[(r, 1 + i)] = series[t - i] - series[t - i - 1];
            }
            y[r] = series[t] - series[t - 1];
        }
        let qr = design.clone().qr();
        let coef = qr.r().solve_upper_triangular(&(qr.q().transpose() * &y)).unwrap();
        let resid = &y - &design * &coef;
        let s2 = resid.dot(&resid) / (rows - k) as f64;
        let inv = (design.transpose() * &design).try_inverse().unwrap();
        coef[1] / (s2 * inv[(1, 1)]).sqrt()
    }

    #[test]
    fn windowed_normal_equations_match_direct_ols() {
        for (p, seed) in [(0, 1), (1, 2), (4, 3), (9, 4)] {
            let x = ar1(400, 0.7, seed);
            let fast = adf_regression(&x, p).unwrap().statistic();
            let slow = naive_stat(&x, p);
            assert!((fast - slow).abs() < 1e-9 * slow.abs().max(1.0), "p={p}: {fast} vs {slow}");
        }
    }

    #[test]
    fn constant_series_has_zero_variance() {
        assert_eq!(adf_test(&[-10.0; 200], None, 0.05).unwrap_err(), Error::ZeroVariance);
    }

    #[test]
    fn short_series_rejected() {
        let x = ar1(25, 0.5, 1);
        assert!(matches!(adf_test(&x, Some(10), 0.05), Err(Error::SeriesTooShort { .. })));
        assert!(adf_test(&x, Some(2), 0.05).is_ok());
    }

    #[test]
    fn unsupported_significance() {
        assert!(adf_test(&ar1(500, 0.5, 1), None, 0.2).is_err());
    }

    #[test]
    fn critical_values_interpolate() {
        assert!((critical_value(100, 0.05).unwrap() - DF_TABLE[2].1[1]).abs() < 1e-12);
        let mid = critical_value(1000, 0.01).unwrap();
        assert!(mid < DF_TABLE[4].1[0] && mid > DF_TABLE[5].1[0] || mid > DF_TABLE[4].1[0] && mid < DF_TABLE[5].1[0]);
        assert!((critical_value(usize::MAX, 0.10).unwrap() - DF_TABLE[5].1[2]).abs() < 1e-9);
        assert!(critical_value(20, 0.05).unwrap().is_finite());
    }

    #[test]
    fn level_shift_invariance() {
        let x = ar1(2000, 0.8, 9);
        let shifted: Vec<f64> = x.iter().map(|v| v + 100.0).collect();
        let a = adf_test(&x, None, 0.05).unwrap().statistic;
        let b = adf_test(&shifted, None, 0.05).unwrap().statistic;
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn residuals_orthogonal_to_regressors() {
        let x = ar1(3000, 0.6, 4);
        let reg = adf_regression(&x, 6).unwrap();
        let n = x.len() as f64;
        for col in 0..reg.lags + 2 {
            let s: f64 = reg
                .residuals
                .iter()
                .enumerate()
                .map(|(row, e)| e * reg.regressor(col, reg.first_t + row))
                .sum();
            assert!((s / n).abs() < 1e-6, "col {col}: {s}");
        }
    }

    #[test]
    fn verdicts_on_textbook_processes() {
        let walk_kept = (0..100)
            .filter(|&s| !adf_test(&random_walk(2000, s), None, 0.05).unwrap().reject_unit_root)
            .count();
        assert!(walk_kept >= 90, "{walk_kept}");
        let ar_rejected = (0..100)
            .filter(|&s| adf_test(&ar1(2000, 0.5, 1000 + s), None, 0.05).unwrap().reject_unit_root)
            .count();
        assert!(ar_rejected >= 95, "{ar_rejected}");
    }
}
