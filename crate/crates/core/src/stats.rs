//! Small descriptive-statistics helpers shared across modules.

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Variance with the `n - 1` denominator; 0 for fewer than two values.
pub fn sample_variance(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64
}

pub fn sample_sd(x: &[f64]) -> f64 {
    sample_variance(x).sqrt()
}

/// Variance with the `n` denominator.
pub fn population_variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / x.len() as f64
}

/// Pearson correlation, or `None` when either input is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Sample autocorrelation at `lag` (biased estimator, as used by `acf`).
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = mean(x);
    let denom: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    if denom == 0.0 || lag >= n {
        return 0.0;
    }
    let num: f64 = (lag..n).map(|t| (x[t] - m) * (x[t - lag] - m)).sum();
    num / denom
}

/// Sample cross-correlation between `x[t - lag]` and `y[t]`, normalised by
/// the full-sample standard deviations (the `ccf` convention).
pub fn cross_correlation(x: &[f64], y: &[f64], lag: usize) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len();
    if lag >= n {
        return 0.0;
    }
    let (mx, my) = (mean(x), mean(y));
    let sx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>();
    let sy: f64 = y.iter().map(|v| (v - my).powi(2)).sum::<f64>();
    if sx == 0.0 || sy == 0.0 {
        return 0.0;
    }
    let num: f64 = (lag..n).map(|t| (x[t - lag] - mx) * (y[t] - my)).sum();
    num / (sx.sqrt() * sy.sqrt())
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let h = (v.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Standard normal upper 2.5% point.
pub const Z_975: f64 = 1.959963984540054;

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - mean).powi(2) / var
}
