//! Small statistics helpers shared by the threshold calibrations.

/// Lower empirical `alpha`-quantile (inverse of the empirical CDF): the
/// smallest sample `v` with at least `ceil(alpha * n)` samples `<= v`.
/// `alpha = 1` gives the maximum.
///
/// Panics on an empty slice or on NaN samples.
pub fn quantile(values: &[f64], alpha: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile sample"));
    quantile_sorted(&sorted, alpha)
}

pub fn quantile_sorted(sorted: &[f64], alpha: f64) -> f64 {
    let n = sorted.len();
    let k = ((alpha.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample autocorrelation at `lag` (biased estimator).
pub fn autocorrelation(values: &[f64], lag: usize) -> f64 {
    let n = values.len();
    if lag >= n {
        return 0.0;
    }
    let mu = mean(values);
    let var: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|t| (values[t] - mu) * (values[t + lag] - mu)).sum();
    cov / var
}
