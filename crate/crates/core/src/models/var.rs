//! Vector autoregression of the case series with selected component scores,
//! estimated equation by equation with an intercept.
//!
//! Candidate (subset, lag order) pairs are compared on one estimation
//! sample that starts after the longest lag considered, so their
//! likelihoods cover the same weeks. The winner is re-estimated on every
//! week its own lag order allows.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sarimax::score_subsets;
use super::{Forecast, ModelId};
use crate::data::WeekIndex;
use crate::dimred::ScoreMatrix;
use crate::error::{Error, Result};
use crate::stats::Z_975;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy)]
pub struct VarConfig {
    pub max_lag: usize,
}

impl Default for VarConfig {
    fn default() -> Self {
        VarConfig { max_lag: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarFit {
    pub lag: usize,
    /// Response labels, the case series first.
    pub labels: Vec<String>,
    pub intercept: Vec<f64>,
    /// `coefficients[i][r][c]`: effect of variable `c` at lag `i + 1` on
    /// variable `r`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
    /// Innovation covariance (maximum-likelihood denominator).
    pub sigma: Vec<Vec<f64>>,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    /// Largest eigenvalue modulus of the companion matrix; below one for a
    /// stable system.
    pub spectral_radius: f64,
    /// Response series over the fitted history, one per label.
    pub history: Vec<Vec<f64>>,
    pub candidates_tried: usize,
}

/// `K = p (k + 1) + 2` with `k` the length of the response vector.
pub fn var_param_count(lag: usize, k: usize) -> usize {
    lag * (k + 1) + 2
}

struct Estimated {
    intercept: Vec<f64>,
    coefficients: Vec<Vec<Vec<f64>>>,
    sigma: DMatrix<f64>,
    loglik: f64,
}

/// Least-squares VAR(`lag`) on responses `series` using targets at times
/// `start..n`.
fn estimate(series: &[&[f64]], lag: usize, start: usize) -> Option<Estimated> {
    let k = series.len();
    let n = series[0].len();
    debug_assert!(start >= lag);
    let t_len = n.checked_sub(start)?;
    let width = 1 + k * lag;
    if t_len <= width {
        return None;
    }
    let z = DMatrix::from_fn(t_len, width, |i, j| {
        if j == 0 {
            1.0
        } else {
            let (l, c) = ((j - 1) / k + 1, (j - 1) % k);
            series[c][start + i - l]
        }
    });
    let y = DMatrix::from_fn(t_len, k, |i, c| series[c][start + i]);
    let ztz = z.transpose() * &z;
    let zty = z.transpose() * &y;
    let b = match ztz.clone().cholesky() {
        Some(ch) => ch.solve(&zty),
        None => {
            let svd = ztz.svd(true, true);
            let tol = svd.singular_values.max() * 1e-12;
            svd.solve(&zty, tol).ok()?
        }
    };
    let resid = &y - &z * &b;
    let sigma = resid.transpose() * &resid / t_len as f64;
    let det = sigma.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let t = t_len as f64;
    let kf = k as f64;
    let loglik = -0.5 * t * (kf * LN_2PI + det.ln() + kf);
    let intercept = (0..k).map(|r| b[(0, r)]).collect();
    let coefficients = (0..lag)
        .map(|i| {
            (0..k)
                .map(|r| (0..k).map(|c| b[(1 + i * k + c, r)]).collect())
                .collect()
        })
        .collect();
    Some(Estimated {
        intercept,
        coefficients,
        sigma,
        loglik,
    })
}

fn companion_radius(coefficients: &[Vec<Vec<f64>>]) -> f64 {
    let p = coefficients.len();
    let k = coefficients[0].len();
    let m = DMatrix::from_fn(k * p, k * p, |r, c| {
        if r < k {
            coefficients[c / k][r][c % k]
        } else if c == r - k {
            1.0
        } else {
            0.0
        }
    });
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn build(labels: Vec<String>, history: Vec<Vec<f64>>, lag: usize, est: Estimated, tried: usize) -> VarFit {
    let k = labels.len();
    let n_params = var_param_count(lag, k);
    let sigma = (0..k).map(|r| (0..k).map(|c| est.sigma[(r, c)]).collect()).collect();
    VarFit {
        lag,
        labels,
        spectral_radius: companion_radius(&est.coefficients),
        intercept: est.intercept,
        coefficients: est.coefficients,
        sigma,
        loglik: est.loglik,
        n_params,
        aic: -2.0 * est.loglik + 2.0 * n_params as f64,
        history,
        candidates_tried: tried,
    }
}

/// Fits a VAR(`lag`) of `y` with the given score columns on every usable
/// week.
pub fn var_fit(y: &[f64], scores: &ScoreMatrix, lag: usize) -> Result<VarFit> {
    if lag == 0 {
        return Err(Error::InvalidInput("VAR lag order must be at least 1".into()));
    }
    let (labels, history) = responses(y, scores, &(0..scores.n_components()).collect::<Vec<_>>())?;
    let refs: Vec<&[f64]> = history.iter().map(|c| c.as_slice()).collect();
    let est = estimate(&refs, lag, lag)
        .ok_or_else(|| Error::Estimation(format!("VAR({lag}) is not estimable on {} weeks", y.len())))?;
    Ok(build(labels, history, lag, est, 1))
}

fn responses(y: &[f64], scores: &ScoreMatrix, subset: &[usize]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let n = y.len();
    if scores.n_components() > 0 && scores.n_weeks() < n {
        return Err(Error::TooShort {
            needed: n,
            got: scores.n_weeks(),
        });
    }
    let mut labels = vec!["cases".to_string()];
    let mut history = vec![y.to_vec()];
    for &i in subset {
        labels.push(scores.labels[i].clone());
        history.push(scores.columns[i][..n].to_vec());
    }
    Ok((labels, history))
}

/// Every non-empty subset of the score columns with every lag order up to
/// `config.max_lag`, compared by AIC on a common sample. The lag ceiling is
/// lowered, with a log message, when the series is too short for it.
pub fn var_auto(y: &[f64], scores: &ScoreMatrix, config: &VarConfig) -> Result<VarFit> {
    let n = y.len();
    let k_max = scores.n_components() + 1;
    let mut max_lag = config.max_lag.max(1);
    // the widest candidate needs more targets than regressors, twice over
    while max_lag > 1 && n < max_lag + 2 * (1 + k_max * max_lag) {
        max_lag -= 1;
    }
    if max_lag < config.max_lag {
        log::info!(
            "VAR lag ceiling lowered from {} to {max_lag} for {n} weeks",
            config.max_lag
        );
    }
    let subsets = score_subsets(scores.n_components());
    let mut grid: Vec<(usize, Vec<usize>)> = Vec::new();
    for s in &subsets {
        for lag in 1..=max_lag {
            grid.push((lag, s.clone()));
        }
    }
    let tried = grid.len();
    let scored: Vec<Option<f64>> = grid
        .par_iter()
        .map(|(lag, subset)| {
            let (_, history) = responses(y, scores, subset).ok()?;
            let refs: Vec<&[f64]> = history.iter().map(|c| c.as_slice()).collect();
            let est = estimate(&refs, *lag, max_lag)?;
            let aic = -2.0 * est.loglik + 2.0 * var_param_count(*lag, subset.len() + 1) as f64;
            aic.is_finite().then_some(aic)
        })
        .collect();
    let best = scored
        .iter()
        .enumerate()
        .filter_map(|(i, a)| a.map(|a| (i, a)))
        .min_by(|(i, a), (j, b)| a.total_cmp(b).then(i.cmp(j)))
        .map(|(i, _)| i);
    let Some(best) = best else {
        return Err(Error::Estimation(format!(
            "no VAR candidate was estimable ({tried} tried)"
        )));
    };
    let (lag, subset) = &grid[best];
    let (labels, history) = responses(y, scores, subset)?;
    let refs: Vec<&[f64]> = history.iter().map(|c| c.as_slice()).collect();
    let est = estimate(&refs, *lag, *lag)
        .ok_or_else(|| Error::Estimation("selected VAR is not estimable on the full sample".into()))?;
    Ok(build(labels, history, *lag, est, tried))
}

impl VarFit {
    pub fn n_obs(&self) -> usize {
        self.history[0].len()
    }

    pub fn cutoff(&self) -> WeekIndex {
        WeekIndex::from_offset(self.n_obs() - 1)
    }

    /// Same responses and lag order, re-estimated on a longer window.
    pub fn refit(&self, y: &[f64], scores: &ScoreMatrix) -> Result<VarFit> {
        let subset: Vec<usize> = self.labels[1..]
            .iter()
            .map(|l| {
                scores
                    .labels
                    .iter()
                    .position(|k| k == l)
                    .ok_or_else(|| Error::InvalidInput(format!("score column {l:?} is missing")))
            })
            .collect::<Result<_>>()?;
        let (labels, history) = responses(y, scores, &subset)?;
        let refs: Vec<&[f64]> = history.iter().map(|c| c.as_slice()).collect();
        let est = estimate(&refs, self.lag, self.lag)
            .ok_or_else(|| Error::Estimation("VAR is not estimable on the new window".into()))?;
        Ok(build(labels, history, self.lag, est, self.candidates_tried))
    }

    /// Point forecasts of every response for steps `1..=h`.
    pub fn predict(&self, h: usize) -> Vec<Vec<f64>> {
        let k = self.labels.len();
        let mut path: Vec<Vec<f64>> = (0..self.n_obs())
            .map(|t| self.history.iter().map(|c| c[t]).collect())
            .collect();
        for _ in 0..h {
            let t = path.len();
            let next: Vec<f64> = (0..k)
                .map(|r| {
                    let mut v = self.intercept[r];
                    for (i, a) in self.coefficients.iter().enumerate() {
                        let past = &path[t - 1 - i];
                        v += a[r].iter().zip(past).map(|(c, x)| c * x).sum::<f64>();
                    }
                    v
                })
                .collect();
            path.push(next);
        }
        path.split_off(self.n_obs())
    }

    /// Forecast-error variance of the case series for steps `1..=h`, from
    /// the moving-average weights `Psi_j = sum_i A_i Psi_{j-i}`.
    pub fn case_variances(&self, h: usize) -> Vec<f64> {
        let k = self.labels.len();
        let a: Vec<DMatrix<f64>> = self
            .coefficients
            .iter()
            .map(|m| DMatrix::from_fn(k, k, |r, c| m[r][c]))
            .collect();
        let sigma = DMatrix::from_fn(k, k, |r, c| self.sigma[r][c]);
        let mut psi: Vec<DMatrix<f64>> = vec![DMatrix::identity(k, k)];
        for j in 1..h {
            let mut m = DMatrix::zeros(k, k);
            for i in 1..=j.min(a.len()) {
                m += &a[i - 1] * &psi[j - i];
            }
            psi.push(m);
        }
        let mut acc = 0.0;
        psi.iter()
            .map(|p| {
                acc += (p * &sigma * p.transpose())[(0, 0)];
                acc
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        super::to_fit_json("var", self)
    }

    pub fn from_json(text: &str) -> Result<VarFit> {
        super::from_fit_json("var", text)
    }
}

/// Case-series forecast `h` weeks ahead with a normal interval.
pub fn var_forecast(fit: &VarFit, h: usize) -> Result<Forecast> {
    if h == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    let point = fit.predict(h)[h - 1][0];
    let sd = fit.case_variances(h)[h - 1].max(0.0).sqrt();
    Forecast::clamped(
        ModelId::VarPca,
        fit.cutoff(),
        h,
        point,
        point - Z_975 * sd,
        point + Z_975 * sd,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_count_is_248() {
        let grid: usize = score_subsets(5).len() * VarConfig::default().max_lag;
        assert_eq!(grid, 248);
        assert_eq!(var_param_count(2, 3), 10);
    }

    #[test]
    fn companion_of_diagonal_system() {
        let a = vec![vec![vec![0.5, 0.0], vec![0.0, -0.8]]];
        assert!((companion_radius(&a) - 0.8).abs() < 1e-12);
    }
}
