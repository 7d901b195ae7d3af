//! Seasonal-trend decomposition by LOESS.
//!
//! A direct implementation of the inner/outer loop procedure of Cleveland
//! et al. (1990) with every smoother evaluated at every point (no jumps).
//! Degrees follow the common defaults: locally constant cycle-subseries
//! smoothing, locally linear trend and low-pass smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StlParams {
    /// Seasonal period.
    pub period: usize,
    /// LOESS span for the cycle-subseries (seasonal) smoother.
    pub seasonal_span: usize,
    /// LOESS span for the trend smoother.
    pub trend_span: usize,
    /// LOESS span for the low-pass filter.
    pub lowpass_span: usize,
    pub inner: usize,
    pub outer: usize,
    pub seasonal_degree: usize,
    pub trend_degree: usize,
    pub lowpass_degree: usize,
}

fn next_odd(x: usize) -> usize {
    if x % 2 == 1 {
        x
    } else {
        x + 1
    }
}

impl StlParams {
    /// The fixed configuration used for weekly case counts, generalised to
    /// any period. For a 52-week season this is `n_s = 155`, `n_t = 25`,
    /// `n_l = 53`, one inner and fifteen outer (robustness) iterations.
    pub fn for_period(period: usize) -> Self {
        let period = period.max(2);
        StlParams {
            period,
            seasonal_span: next_odd((3 * period).saturating_sub(1)).max(7),
            trend_span: next_odd((0.48 * period as f64).ceil() as usize).max(3),
            lowpass_span: next_odd(period),
            inner: 1,
            outer: 15,
            seasonal_degree: 0,
            trend_degree: 1,
            lowpass_degree: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlDecomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
    /// Robustness weights from the final pass.
    pub weights: Vec<f64>,
}

impl StlDecomposition {
    /// `max(0, 1 - Var(R) / Var(S + R))`.
    pub fn seasonal_strength(&self) -> f64 {
        let sr: Vec<f64> = self.seasonal.iter().zip(&self.remainder).map(|(s, r)| s + r).collect();
        let v_sr = crate::stats::sample_variance(&sr);
        if v_sr <= 0.0 {
            return 0.0;
        }
        (1.0 - crate::stats::sample_variance(&self.remainder) / v_sr).max(0.0)
    }
}

/// Decomposes `y` additively into trend, seasonal and remainder.
pub fn stl(y: &[f64], params: &StlParams) -> Result<StlDecomposition> {
    let n = y.len();
    let np = params.period;
    if np < 2 {
        return Err(Error::InvalidInput("STL period must be at least 2".into()));
    }
    if n < 2 * np + 1 {
        return Err(Error::TooShort {
            needed: 2 * np + 1,
            got: n,
        });
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("STL input at index {i}")));
    }
    for span in [params.seasonal_span, params.trend_span, params.lowpass_span] {
        if span < 3 || span % 2 == 0 {
            return Err(Error::InvalidInput(format!(
                "STL spans must be odd and at least 3, got {span}"
            )));
        }
    }
    let mut trend = vec![0.0; n];
    let mut seasonal = vec![0.0; n];
    let mut rw = vec![1.0; n];
    let mut use_rw = false;
    let mut k = 0;
    loop {
        inner_loop(y, params, use_rw, &rw, &mut seasonal, &mut trend);
        k += 1;
        if k > params.outer {
            break;
        }
        let fit: Vec<f64> = trend.iter().zip(&seasonal).map(|(t, s)| t + s).collect();
        robustness_weights(y, &fit, &mut rw);
        use_rw = true;
    }
    if params.outer == 0 {
        rw.iter_mut().for_each(|w| *w = 1.0);
    }
    let remainder = (0..n).map(|i| y[i] - trend[i] - seasonal[i]).collect();
    Ok(StlDecomposition {
        trend,
        seasonal,
        remainder,
        weights: rw,
    })
}

fn inner_loop(y: &[f64], p: &StlParams, use_rw: bool, rw: &[f64], seasonal: &mut [f64], trend: &mut [f64]) {
    let n = y.len();
    let np = p.period;
    for _ in 0..p.inner {
        let detrended: Vec<f64> = (0..n).map(|i| y[i] - trend[i]).collect();
        let cycle = cycle_subseries(&detrended, np, p.seasonal_span, p.seasonal_degree, use_rw, rw);
        let low = low_pass(&cycle, np);
        let low = loess_all(&low, p.lowpass_span, p.lowpass_degree, None);
        for i in 0..n {
            seasonal[i] = cycle[np + i] - low[i];
        }
        let deseason: Vec<f64> = (0..n).map(|i| y[i] - seasonal[i]).collect();
        let smoothed = loess_all(&deseason, p.trend_span, p.trend_degree, use_rw.then_some(rw));
        trend.copy_from_slice(&smoothed);
    }
}

/// Smooths each cycle-subseries and extends it one period at both ends.
/// Returns a series of length `n + 2 * np`.
fn cycle_subseries(x: &[f64], np: usize, span: usize, degree: usize, use_rw: bool, rw: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n + 2 * np];
    for j in 0..np {
        let sub: Vec<f64> = (j..n).step_by(np).map(|i| x[i]).collect();
        let sub_w: Vec<f64> = (j..n).step_by(np).map(|i| rw[i]).collect();
        let k = sub.len();
        let weights = use_rw.then_some(sub_w.as_slice());
        let smooth = loess_all(&sub, span, degree, weights);
        // positions are 1-based: evaluate at 0 and k + 1
        let right = span.min(k);
        let before = loess_at(&sub, span, degree, 0.0, 1, right, weights).unwrap_or(smooth[0]);
        let left = if k >= span { k - span + 1 } else { 1 };
        let after = loess_at(&sub, span, degree, (k + 1) as f64, left, k, weights).unwrap_or(smooth[k - 1]);
        out[j] = before;
        for (m, v) in smooth.iter().enumerate() {
            out[(m + 1) * np + j] = *v;
        }
        out[(k + 1) * np + j] = after;
    }
    out
}

fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let m = x.len() - len + 1;
    let mut out = Vec::with_capacity(m);
    let mut sum: f64 = x[..len].iter().sum();
    out.push(sum / len as f64);
    for i in 1..m {
        sum += x[i + len - 1] - x[i - 1];
        out.push(sum / len as f64);
    }
    out
}

/// Moving averages of length np, np, 3 applied to a series of length
/// `n + 2 np`, giving length `n`.
fn low_pass(x: &[f64], np: usize) -> Vec<f64> {
    let a = moving_average(x, np);
    let b = moving_average(&a, np);
    moving_average(&b, 3)
}

/// LOESS fit evaluated at each integer position `1..=n`.
fn loess_all(y: &[f64], span: usize, degree: usize, rw: Option<&[f64]>) -> Vec<f64> {
    let n = y.len();
    let mut out = vec![0.0; n];
    if span >= n {
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = loess_at(y, span, degree, (i + 1) as f64, 1, n, rw).unwrap_or(y[i]);
        }
        return out;
    }
    let half = span.div_ceil(2);
    let mut left = 1;
    let mut right = span;
    for i in 1..=n {
        if i > half && right != n {
            left += 1;
            right += 1;
        }
        out[i - 1] = loess_at(y, span, degree, i as f64, left, right, rw).unwrap_or(y[i - 1]);
    }
    out
}

/// Local polynomial (degree 0 or 1) estimate at `xs` from points
/// `left..=right` (1-based) with tricube weights. `None` when all weights
/// vanish.
fn loess_at(
    y: &[f64],
    span: usize,
    degree: usize,
    xs: f64,
    left: usize,
    right: usize,
    rw: Option<&[f64]>,
) -> Option<f64> {
    let n = y.len();
    let range = n as f64 - 1.0;
    let mut h = (xs - left as f64).max(right as f64 - xs);
    if span > n {
        h += ((span - n) / 2) as f64;
    }
    let h9 = 0.999 * h;
    let h1 = 0.001 * h;
    let mut w = vec![0.0; right - left + 1];
    let mut total = 0.0;
    for (idx, j) in (left..=right).enumerate() {
        let r = (j as f64 - xs).abs();
        if r <= h9 {
            let mut wj = if r <= h1 { 1.0 } else { (1.0 - (r / h).powi(3)).powi(3) };
            if let Some(rw) = rw {
                wj *= rw[j - 1];
            }
            w[idx] = wj;
            total += wj;
        }
    }
    if total <= 0.0 {
        return None;
    }
    w.iter_mut().for_each(|v| *v /= total);
    if h > 0.0 && degree > 0 {
        let a: f64 = (left..=right).zip(&w).map(|(j, wj)| wj * j as f64).sum();
        let b = xs - a;
        let c: f64 = (left..=right).zip(&w).map(|(j, wj)| wj * (j as f64 - a).powi(2)).sum();
        if c.sqrt() > 0.001 * range {
            let b = b / c;
            for (idx, j) in (left..=right).enumerate() {
                w[idx] *= b * (j as f64 - a) + 1.0;
            }
        }
    }
    Some((left..=right).zip(&w).map(|(j, wj)| wj * y[j - 1]).sum())
}

fn robustness_weights(y: &[f64], fit: &[f64], rw: &mut [f64]) {
    let n = y.len();
    let r: Vec<f64> = (0..n).map(|i| (y[i] - fit[i]).abs()).collect();
    let mut sorted = r.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m1 = n / 2;
    let m2 = n - m1 - 1;
    let cmad = 3.0 * (sorted[m1] + sorted[m2]);
    let c9 = 0.999 * cmad;
    let c1 = 0.001 * cmad;
    for i in 0..n {
        rw[i] = if r[i] <= c1 {
            1.0
        } else if r[i] <= c9 {
            (1.0 - (r[i] / cmad).powi(2)).powi(2)
        } else {
            0.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn weekly_parameters() {
        let p = StlParams::for_period(52);
        assert_eq!(
            (p.seasonal_span, p.trend_span, p.lowpass_span, p.inner, p.outer),
            (155, 25, 53, 1, 15)
        );
    }

    #[test]
    fn additive_identity() {
        let y: Vec<f64> = (0..342)
            .map(|t| 50.0 + 0.1 * t as f64 + 10.0 * (2.0 * PI * t as f64 / 52.0).sin() + ((t * 7919) % 13) as f64)
            .collect();
        let d = stl(&y, &StlParams::for_period(52)).unwrap();
        for i in 0..y.len() {
            assert!((d.trend[i] + d.seasonal[i] + d.remainder[i] - y[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn pure_seasonal_is_captured() {
        let y: Vec<f64> = (0..342).map(|t| 10.0 + (2.0 * PI * t as f64 / 52.0).sin()).collect();
        let d = stl(&y, &StlParams::for_period(52)).unwrap();
        let vr = crate::stats::sample_variance(&d.remainder);
        assert!(vr < 0.01 * crate::stats::sample_variance(&y), "{vr}");
        assert!(d.seasonal_strength() > 0.99);
    }

    #[test]
    fn too_short() {
        assert!(stl(&[1.0; 20], &StlParams::for_period(12)).is_err());
    }
}
