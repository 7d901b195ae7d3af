//! Seasonal ARIMA with optional regression terms: exact and conditional
//! likelihoods, multi-start estimation and forecasting.
//!
//! Regression coefficients (the intercept and any exogenous scores) are
//! profiled out of the likelihood by generalised least squares, so the
//! optimiser only sees the ARMA parameters.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::kalman::{self, Arma};
use super::poly;
use super::{Forecast, ModelId};
use crate::data::{TimeSeries, WeekIndex};
use crate::error::{Error, Result};
use crate::optim::{self, BfgsOptions};
use crate::preprocess::{difference, BoxCox};
use crate::stats::Z_975;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const SIGMA2_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SarimaOrder {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    pub seasonal_p: usize,
    pub seasonal_d: usize,
    pub seasonal_q: usize,
    pub season: usize,
    pub intercept: bool,
}

impl SarimaOrder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        d: usize,
        q: usize,
        seasonal_p: usize,
        seasonal_d: usize,
        seasonal_q: usize,
        season: usize,
        intercept: bool,
    ) -> Result<Self> {
        let order = SarimaOrder {
            p,
            d,
            q,
            seasonal_p,
            seasonal_d,
            seasonal_q,
            season,
            intercept,
        };
        order.validate()?;
        Ok(order)
    }

    /// Non-seasonal ARMA(p, q) without differencing.
    pub fn arma(p: usize, q: usize, intercept: bool) -> Self {
        SarimaOrder {
            p,
            d: 0,
            q,
            seasonal_p: 0,
            seasonal_d: 0,
            seasonal_q: 0,
            season: 1,
            intercept,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p > 5 || self.q > 5 {
            return Err(Error::InvalidInput(format!("{self}: p and q must be at most 5")));
        }
        if self.seasonal_p > 2 || self.seasonal_q > 2 {
            return Err(Error::InvalidInput(format!("{self}: P and Q must be at most 2")));
        }
        if self.d > 2 || self.seasonal_d > 1 {
            return Err(Error::InvalidInput(format!("{self}: d <= 2 and D <= 1 required")));
        }
        if self.season == 0 {
            return Err(Error::InvalidInput("season length must be at least 1".into()));
        }
        Ok(())
    }

    pub fn arma_count(&self) -> usize {
        self.p + self.q + self.seasonal_p + self.seasonal_q
    }

    /// Parameter count `p + q + P + Q + o` used by AIC.
    pub fn n_params(&self) -> usize {
        self.arma_count() + usize::from(self.intercept)
    }

    /// Observations consumed by differencing.
    pub fn lost_to_differencing(&self) -> usize {
        self.d + self.season * self.seasonal_d
    }

    /// Length of the expanded autoregressive polynomial.
    pub(crate) fn ar_span(&self) -> usize {
        self.p + self.season * self.seasonal_p
    }
}

impl fmt::Display for SarimaOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{})({},{},{})[{}]",
            self.p, self.d, self.q, self.seasonal_p, self.seasonal_d, self.seasonal_q, self.season
        )?;
        if self.intercept {
            f.write_str(" with intercept")?;
        }
        Ok(())
    }
}

/// Coefficients of `phi(B) Phi(B^S) w_t = delta + theta(B) Theta(B^S) e_t`
/// where `w` is the differenced, transformed series and `e_t ~ N(0, sigma2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaParams {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub seasonal_phi: Vec<f64>,
    pub seasonal_theta: Vec<f64>,
    pub delta: f64,
    pub sigma2: f64,
}

impl SarimaParams {
    pub fn white_noise(sigma2: f64) -> Self {
        SarimaParams {
            phi: vec![],
            theta: vec![],
            seasonal_phi: vec![],
            seasonal_theta: vec![],
            delta: 0.0,
            sigma2,
        }
    }

    pub(crate) fn arma(&self, season: usize) -> Arma {
        Arma {
            ar: poly::expand_ar(&self.phi, &self.seasonal_phi, season),
            ma: poly::expand_ma(&self.theta, &self.seasonal_theta, season),
        }
    }

    /// `phi(1) Phi(1)`: converts between the intercept and the mean.
    fn ar_at_one(&self) -> f64 {
        (1.0 - self.phi.iter().sum::<f64>()) * (1.0 - self.seasonal_phi.iter().sum::<f64>())
    }

    /// Mean of the differenced series implied by the intercept.
    pub fn mean(&self) -> f64 {
        if self.delta == 0.0 {
            0.0
        } else {
            self.delta / self.ar_at_one()
        }
    }

    /// Whether every lag-polynomial factor keeps its roots at modulus
    /// above `radius`. Fits close to the unit circle are unreliable.
    pub(crate) fn roots_clear_of(&self, radius: f64) -> bool {
        let neg = |v: &[f64]| -> Vec<f64> { v.iter().map(|c| -c).collect() };
        poly::roots_outside(&self.phi, radius)
            && poly::roots_outside(&self.seasonal_phi, radius)
            && poly::roots_outside(&neg(&self.theta), radius)
            && poly::roots_outside(&neg(&self.seasonal_theta), radius)
    }

    fn check(&self, order: &SarimaOrder) -> Result<()> {
        let shape = (
            self.phi.len(),
            self.theta.len(),
            self.seasonal_phi.len(),
            self.seasonal_theta.len(),
        );
        if shape != (order.p, order.q, order.seasonal_p, order.seasonal_q) {
            return Err(Error::InvalidInput(format!(
                "parameter lengths {shape:?} do not match order {order}"
            )));
        }
        if !order.intercept && self.delta != 0.0 {
            return Err(Error::InvalidInput(format!("{order} has no intercept")));
        }
        let all = self
            .phi
            .iter()
            .chain(&self.theta)
            .chain(&self.seasonal_phi)
            .chain(&self.seasonal_theta)
            .chain([&self.delta, &self.sigma2]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SARIMA parameters".into()));
        }
        if self.sigma2 <= 0.0 {
            return Err(Error::InvalidInput("innovation variance must be positive".into()));
        }
        if !poly::is_stationary(&self.phi) || !poly::is_stationary(&self.seasonal_phi) {
            return Err(Error::InvalidInput("autoregressive part is not stationary".into()));
        }
        if !poly::is_invertible(&self.theta) || !poly::is_invertible(&self.seasonal_theta) {
            return Err(Error::InvalidInput("moving-average part is not invertible".into()));
        }
        Ok(())
    }
}

/// Exact Gaussian log-likelihood of the differenced series under `params`.
/// `y_transformed` is the series after any Box-Cox transform.
pub fn sarima_loglik(y_transformed: &TimeSeries, order: &SarimaOrder, params: &SarimaParams) -> Result<f64> {
    order.validate()?;
    params.check(order)?;
    let w = difference(y_transformed.values(), order.d, order.seasonal_d, order.season);
    if w.is_empty() {
        return Err(Error::TooShort {
            needed: order.lost_to_differencing() + 1,
            got: y_transformed.len(),
        });
    }
    let mu = params.mean();
    let centred: Vec<f64> = w.iter().map(|v| v - mu).collect();
    let f = kalman::filter(&params.arma(order.season), &[&centred])?;
    let ssq: f64 = f.std_innov[0].iter().map(|e| e * e).sum();
    let n = w.len() as f64;
    let ll = -0.5 * (n * LN_2PI + n * params.sigma2.ln() + f.sum_log_f + ssq / params.sigma2);
    if ll.is_finite() {
        Ok(ll)
    } else {
        Err(Error::NonFinite("log-likelihood".into()))
    }
}

/// Likelihood used while estimating.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Exact likelihood through the Kalman filter.
    Exact,
    /// Conditional sum of squares, conditioning on the first `p + S P`
    /// differenced values.
    Css,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of starting points tried: zero, Hannan-Rissanen, jittered.
    pub restarts: usize,
    pub bfgs: BfgsOptions,
    /// Seed for the jittered start.
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 3,
            bfgs: BfgsOptions::default(),
            seed: 0x5eed_a11a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Log-likelihood at the starting point of the winning run.
    pub start_loglik: f64,
    pub converged: bool,
    pub starts_tried: usize,
    pub evaluations: usize,
}

/// A fitted SARIMA model together with the (transformed) history it was
/// fitted to, so it can forecast and be re-estimated on a longer window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaFit {
    pub order: SarimaOrder,
    pub params: SarimaParams,
    pub transform: BoxCox,
    pub loglik: f64,
    /// Parameter count K.
    pub n_params: usize,
    pub aic: f64,
    pub diagnostics: FitDiagnostics,
    /// Series on the transformed scale, starting at week 1.
    pub history: Vec<f64>,
}

impl SarimaFit {
    pub fn n_obs(&self) -> usize {
        self.history.len()
    }

    pub fn cutoff(&self) -> WeekIndex {
        WeekIndex::from_offset(self.history.len() - 1)
    }

    /// One-step prediction errors of the differenced series.
    pub fn residuals(&self) -> Result<Vec<f64>> {
        let w = difference(&self.history, self.order.d, self.order.seasonal_d, self.order.season);
        let mu = self.params.mean();
        let centred: Vec<f64> = w.iter().map(|v| v - mu).collect();
        let arma = self.params.arma(self.order.season);
        let f = kalman::filter(&arma, &[&centred])?;
        Ok(f.raw_innov.into_iter().next().unwrap_or_default())
    }

    /// Same order, transform and parameters with a longer history. The
    /// parameters are not re-estimated.
    pub fn extend(&self, y: &[f64]) -> Result<SarimaFit> {
        let history = self.transform.forward(y)?;
        let problem = Problem::new(self.order, &history, &[])?;
        let arma = self.params.arma(self.order.season);
        let prof = problem.profile(&arma, Method::Exact)?;
        let mut fit = self.clone();
        fit.history = history;
        fit.params.sigma2 = prof.sigma2;
        if self.order.intercept {
            fit.params.delta = prof.beta[0] * self.params.ar_at_one();
        }
        fit.loglik = prof.loglik;
        fit.aic = -2.0 * prof.loglik + 2.0 * fit.n_params as f64;
        Ok(fit)
    }

    /// Re-estimates the parameters on a longer window, starting from the
    /// current values. Falls back to a full multi-start fit if the warm
    /// start does not converge.
    pub fn refit(&self, y: &[f64], options: &FitOptions) -> Result<SarimaFit> {
        let history = self.transform.forward(y)?;
        let problem = Problem::new(self.order, &history, &[])?;
        let warm = free_from_params(&self.params);
        let est = problem.estimate(Method::Exact, &[warm], &options.bfgs);
        let est = match est {
            Ok(e) if e.converged => e,
            _ => problem.estimate(Method::Exact, &problem.starts(options), &options.bfgs)?,
        };
        Ok(build_fit(self.order, self.transform, history, &est))
    }

    pub fn to_json(&self) -> Result<String> {
        super::to_fit_json("sarima", self)
    }

    pub fn from_json(text: &str) -> Result<SarimaFit> {
        super::from_fit_json("sarima", text)
    }
}

/// Fits `order` by maximum likelihood after applying `transform`.
pub fn sarima_fit(y: &TimeSeries, order: &SarimaOrder, transform: BoxCox) -> Result<SarimaFit> {
    fit_with(y.values(), order, transform, Method::Exact, &FitOptions::default())
}

pub(crate) fn fit_with(
    y: &[f64],
    order: &SarimaOrder,
    transform: BoxCox,
    method: Method,
    options: &FitOptions,
) -> Result<SarimaFit> {
    order.validate()?;
    let history = transform.forward(y)?;
    let problem = Problem::new(*order, &history, &[])?;
    let est = problem.estimate(method, &problem.starts(options), &options.bfgs)?;
    Ok(build_fit(*order, transform, history, &est))
}

pub(crate) fn build_fit(order: SarimaOrder, transform: BoxCox, history: Vec<f64>, est: &Estimate) -> SarimaFit {
    let mut params = est.params.clone();
    if order.intercept {
        params.delta = est.beta[0] * params.ar_at_one();
    }
    let k = order.n_params();
    SarimaFit {
        order,
        params,
        transform,
        loglik: est.loglik,
        n_params: k,
        aic: -2.0 * est.loglik + 2.0 * k as f64,
        diagnostics: FitDiagnostics {
            start_loglik: est.start_loglik,
            converged: est.converged,
            starts_tried: est.starts_tried,
            evaluations: est.evaluations,
        },
        history,
    }
}

/// Forecast `h` weeks past the end of the fitted history.
pub fn sarima_forecast(fit: &SarimaFit, h: usize) -> Result<Forecast> {
    let paths = forecast_paths(&fit.order, &fit.params, &fit.history, &[], &[], fit.params.mean(), h)?;
    interval_forecast(ModelId::Sarima, fit.cutoff(), h, &fit.transform, &paths)
}

/// Means and variances on the transformed scale for steps `1..=h`.
#[derive(Debug, Clone)]
pub(crate) struct Paths {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

pub(crate) fn interval_forecast(
    model: ModelId,
    cutoff: WeekIndex,
    h: usize,
    transform: &BoxCox,
    paths: &Paths,
) -> Result<Forecast> {
    let m = paths.means[h - 1];
    let sd = paths.variances[h - 1].max(0.0).sqrt();
    Forecast::clamped(
        model,
        cutoff,
        h,
        transform.inverse_value(m),
        transform.inverse_value(m - Z_975 * sd),
        transform.inverse_value(m + Z_975 * sd),
    )
}

/// Coefficients `pi_i` of `(1-B)^d (1-B^S)^D = 1 - sum pi_i B^i`.
fn integration_weights(order: &SarimaOrder) -> Vec<f64> {
    let mut poly_d = vec![1.0];
    for _ in 0..order.d {
        poly_d = poly::multiply(&poly_d, &[1.0, -1.0]);
    }
    for _ in 0..order.seasonal_d {
        let mut s = vec![0.0; order.season + 1];
        s[0] = 1.0;
        s[order.season] = -1.0;
        poly_d = poly::multiply(&poly_d, &s);
    }
    poly_d[1..].iter().map(|c| -c).collect()
}

/// Forecast means and variances of the transformed level series.
///
/// `regressors` are level-scale columns covering the history and the `h`
/// future weeks; `beta` are their coefficients and `mu` the mean of the
/// differenced noise.
pub(crate) fn forecast_paths(
    order: &SarimaOrder,
    params: &SarimaParams,
    history: &[f64],
    regressors: &[Vec<f64>],
    beta: &[f64],
    mu: f64,
    h: usize,
) -> Result<Paths> {
    if h == 0 {
        return Err(Error::InvalidInput("forecast horizon must be at least 1".into()));
    }
    let n = history.len();
    let loss = order.lost_to_differencing();
    if n <= loss {
        return Err(Error::TooShort {
            needed: loss + 1,
            got: n,
        });
    }
    let w = difference(history, order.d, order.seasonal_d, order.season);
    let dreg: Vec<Vec<f64>> = regressors
        .iter()
        .map(|z| {
            debug_assert_eq!(z.len(), n + h);
            difference(z, order.d, order.seasonal_d, order.season)
        })
        .collect();
    let fitted_mean = |t: usize| -> f64 { mu + dreg.iter().zip(beta).map(|(z, b)| b * z[t]).sum::<f64>() };
    let noise: Vec<f64> = (0..w.len()).map(|t| w[t] - fitted_mean(t)).collect();
    let arma = params.arma(order.season);
    let filt = kalman::filter(&arma, &[&noise])?;
    let p_next = kalman::predicted_covariance(&arma, noise.len())?;
    let (m, cov) = kalman::forecast(&arma, &filt.next_state[0], &p_next, h);
    let w_future: Vec<f64> = (0..h).map(|i| m[i] + fitted_mean(w.len() + i)).collect();

    let pi = integration_weights(order);
    let mut levels = history.to_vec();
    for (i, wf) in w_future.iter().enumerate() {
        let t = n + i;
        let v = wf + pi.iter().enumerate().map(|(k, c)| c * levels[t - 1 - k]).sum::<f64>();
        levels.push(v);
    }
    // psi weights of 1 / (differencing polynomial)
    let mut psi = vec![0.0; h];
    for j in 0..h {
        psi[j] = if j == 0 {
            1.0
        } else {
            (1..=j.min(pi.len())).map(|i| pi[i - 1] * psi[j - i]).sum()
        };
    }
    let variances = (0..h)
        .map(|j| {
            let mut v = 0.0;
            for k in 0..=j {
                for l in 0..=j {
                    v += psi[j - k] * psi[j - l] * cov[k][l];
                }
            }
            v * params.sigma2
        })
        .collect();
    Ok(Paths {
        means: levels[n..].to_vec(),
        variances,
    })
}

// ---------------------------------------------------------------------------
// estimation engine

/// A differenced response with differenced regression columns.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub order: SarimaOrder,
    pub w: Vec<f64>,
    /// Intercept column first when the order has one.
    pub xreg: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Profile {
    pub loglik: f64,
    pub beta: Vec<f64>,
    pub sigma2: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Estimate {
    pub params: SarimaParams,
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub start_loglik: f64,
    pub converged: bool,
    pub starts_tried: usize,
    pub evaluations: usize,
}

pub(crate) fn free_from_params(p: &SarimaParams) -> Vec<f64> {
    let mut u = poly::ar_to_free(&p.phi);
    u.extend(poly::ma_to_free(&p.theta));
    u.extend(poly::ar_to_free(&p.seasonal_phi));
    u.extend(poly::ma_to_free(&p.seasonal_theta));
    u
}

pub(crate) fn params_from_free(order: &SarimaOrder, u: &[f64]) -> SarimaParams {
    let (a, rest) = u.split_at(order.p);
    let (b, rest) = rest.split_at(order.q);
    let (sa, sb) = rest.split_at(order.seasonal_p);
    SarimaParams {
        phi: poly::ar_from_free(a),
        theta: poly::ma_from_free(b),
        seasonal_phi: poly::ar_from_free(sa),
        seasonal_theta: poly::ma_from_free(sb),
        delta: 0.0,
        sigma2: 1.0,
    }
}

/// Least squares via SVD; `None` if the system is degenerate.
pub(crate) fn least_squares(cols: &[&[f64]], y: &[f64]) -> Option<Vec<f64>> {
    let k = cols.len();
    if k == 0 {
        return Some(vec![]);
    }
    let n = y.len();
    if n < k {
        return None;
    }
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    let svd = x.svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return None;
    }
    let b = svd.solve(&DVector::from_column_slice(y), smax * 1e-10).ok()?;
    let v: Vec<f64> = b.iter().copied().collect();
    v.iter().all(|c| c.is_finite()).then_some(v)
}

impl Problem {
    /// Differences `x` and each regressor column and appends the intercept.
    pub fn new(order: SarimaOrder, x: &[f64], regressors: &[&[f64]]) -> Result<Self> {
        let w = difference(x, order.d, order.seasonal_d, order.season);
        let needed = order.lost_to_differencing() + order.n_params() + regressors.len() + 2;
        if x.len() < needed {
            return Err(Error::TooShort { needed, got: x.len() });
        }
        let mut xreg = Vec::with_capacity(regressors.len() + 1);
        if order.intercept {
            xreg.push(vec![1.0; w.len()]);
        }
        for z in regressors {
            xreg.push(difference(z, order.d, order.seasonal_d, order.season));
        }
        Ok(Problem { order, w, xreg })
    }

    /// Profile log-likelihood at the given ARMA polynomials with regression
    /// coefficients and innovation variance concentrated out.
    pub fn profile(&self, arma: &Arma, method: Method) -> Result<Profile> {
        let (resp, cols, n_eff, sum_log_f) = match method {
            Method::Exact => {
                let mut series: Vec<&[f64]> = vec![&self.w];
                series.extend(self.xreg.iter().map(|c| c.as_slice()));
                let f = kalman::filter(arma, &series)?;
                let mut it = f.std_innov.into_iter();
                let resp = it.next().unwrap_or_default();
                (resp, it.collect::<Vec<_>>(), self.w.len(), f.sum_log_f)
            }
            Method::Css => {
                let ncond = self.order.ar_span();
                let resp = css_residuals(arma, &self.w, ncond);
                let cols = self.xreg.iter().map(|c| css_residuals(arma, c, ncond)).collect();
                (resp, cols, self.w.len() - ncond, 0.0)
            }
        };
        let col_refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let beta =
            least_squares(&col_refs, &resp).ok_or_else(|| Error::Estimation("degenerate regression columns".into()))?;
        let ssq: f64 = (0..resp.len())
            .map(|t| {
                let fit: f64 = cols.iter().zip(&beta).map(|(c, b)| c[t] * b).sum();
                (resp[t] - fit).powi(2)
            })
            .sum();
        let n = n_eff as f64;
        let sigma2 = (ssq / n).max(SIGMA2_FLOOR);
        let loglik = -0.5 * n * (LN_2PI + sigma2.ln() + 1.0) - 0.5 * sum_log_f;
        if !loglik.is_finite() {
            return Err(Error::NonFinite("profile log-likelihood".into()));
        }
        Ok(Profile { loglik, beta, sigma2 })
    }

    /// Conditional residual variance over `w[from..]` at fixed parameters
    /// and regression coefficients, for comparing candidates on a common
    /// sample.
    pub fn css_tail_variance(&self, params: &SarimaParams, beta: &[f64], from: usize) -> f64 {
        let arma = params.arma(self.order.season);
        let ncond = self.order.ar_span();
        debug_assert!(from >= ncond && from < self.w.len());
        let resp = css_residuals(&arma, &self.w, ncond);
        let cols: Vec<Vec<f64>> = self.xreg.iter().map(|c| css_residuals(&arma, c, ncond)).collect();
        let ssq: f64 = (from - ncond..resp.len())
            .map(|t| {
                let fit: f64 = cols.iter().zip(beta).map(|(c, b)| c[t] * b).sum();
                (resp[t] - fit).powi(2)
            })
            .sum();
        ssq / (self.w.len() - from) as f64
    }

    fn effective_len(&self, method: Method) -> usize {
        match method {
            Method::Exact => self.w.len(),
            Method::Css => self.w.len().saturating_sub(self.order.ar_span()),
        }
    }

    /// Zero start, Hannan-Rissanen start and a jittered start, truncated to
    /// `options.restarts`.
    pub fn starts(&self, options: &FitOptions) -> Vec<Vec<f64>> {
        let k = self.order.arma_count();
        let zero = vec![0.0; k];
        let mut starts = vec![zero.clone()];
        if k == 0 {
            return starts;
        }
        let hr = self.hannan_rissanen();
        if let Some(hr) = &hr {
            starts.push(hr.clone());
        }
        let base = hr.unwrap_or(zero);
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let noise = Normal::new(0.0, 0.3).expect("valid normal");
        starts.push(base.iter().map(|v| v + noise.sample(&mut rng)).collect());
        starts.truncate(options.restarts.max(1));
        starts
    }

    /// Two-stage regression estimate of the ARMA coefficients mapped to the
    /// unconstrained scale.
    fn hannan_rissanen(&self) -> Option<Vec<f64>> {
        let o = &self.order;
        let s = o.season;
        let mean = if o.intercept { crate::stats::mean(&self.w) } else { 0.0 };
        let u: Vec<f64> = self.w.iter().map(|v| v - mean).collect();
        let n = u.len();
        let ar_lags: Vec<usize> = (1..=o.p).chain((1..=o.seasonal_p).map(|j| j * s)).collect();
        let ma_lags: Vec<usize> = (1..=o.q).chain((1..=o.seasonal_q).map(|j| j * s)).collect();
        let has_dup = |lags: &[usize]| {
            let mut v = lags.to_vec();
            v.sort_unstable();
            v.windows(2).any(|w| w[0] == w[1])
        };
        if has_dup(&ar_lags) || has_dup(&ma_lags) {
            return None;
        }
        let max_ar = ar_lags.iter().copied().max().unwrap_or(0);
        let max_ma = ma_lags.iter().copied().max().unwrap_or(0);
        let long_order = if ma_lags.is_empty() {
            0
        } else {
            (max_ar.max(max_ma) + 3).min(n / 3)
        };
        let resid = if ma_lags.is_empty() {
            vec![0.0; n]
        } else {
            let m = long_order;
            if m == 0 {
                return None;
            }
            let lagged: Vec<Vec<f64>> = (1..=m).map(|l| u[m - l..n - l].to_vec()).collect();
            let refs: Vec<&[f64]> = lagged.iter().map(|c| c.as_slice()).collect();
            let coef = least_squares(&refs, &u[m..])?;
            let mut e = vec![0.0; n];
            for t in m..n {
                e[t] = u[t] - (0..m).map(|j| coef[j] * lagged[j][t - m]).sum::<f64>();
            }
            e
        };
        let start = max_ar.max(max_ma) + long_order;
        let ncols = ar_lags.len() + ma_lags.len();
        if n <= start + ncols + 5 {
            return None;
        }
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(ncols);
        for &l in &ar_lags {
            cols.push(u[start - l..n - l].to_vec());
        }
        for &l in &ma_lags {
            cols.push(resid[start - l..n - l].to_vec());
        }
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        let coef = least_squares(&refs, &u[start..])?;
        let (ar, ma) = coef.split_at(ar_lags.len());
        let (phi, sphi) = ar.split_at(o.p);
        let (theta, stheta) = ma.split_at(o.q);
        let mut free = poly::ar_to_free(phi);
        free.extend(poly::ma_to_free(theta));
        free.extend(poly::ar_to_free(sphi));
        free.extend(poly::ma_to_free(stheta));
        Some(free)
    }

    /// Maximises the profile likelihood from each start and keeps the best
    /// converged run (or the best run if none converged).
    pub fn estimate(&self, method: Method, starts: &[Vec<f64>], bfgs: &BfgsOptions) -> Result<Estimate> {
        let n_eff = self.effective_len(method);
        if n_eff <= self.xreg.len() + 1 {
            return Err(Error::TooShort {
                needed: self.xreg.len() + 2,
                got: n_eff,
            });
        }
        let scale = n_eff as f64;
        let objective = |u: &[f64]| -> f64 {
            let params = params_from_free(&self.order, u);
            match self.profile(&params.arma(self.order.season), method) {
                Ok(p) => -p.loglik / scale,
                Err(_) => f64::INFINITY,
            }
        };
        let mut best: Option<(optim::Minimum, bool)> = None;
        let mut evaluations = 0;
        for x0 in starts {
            let m = optim::minimize(objective, x0, bfgs);
            evaluations += m.evaluations;
            if !m.f.is_finite() {
                continue;
            }
            let better = match &best {
                None => true,
                Some((b, b_conv)) => (m.converged && !b_conv) || (m.converged == *b_conv && m.f < b.f),
            };
            if better {
                let conv = m.converged;
                best = Some((m, conv));
            }
        }
        let (m, converged) =
            best.ok_or_else(|| Error::Estimation(format!("no finite likelihood for {}", self.order)))?;
        let mut params = params_from_free(&self.order, &m.x);
        let prof = self.profile(&params.arma(self.order.season), method)?;
        params.sigma2 = prof.sigma2;
        Ok(Estimate {
            params,
            beta: prof.beta,
            loglik: prof.loglik,
            start_loglik: -m.f_start * scale,
            converged,
            starts_tried: starts.len(),
            evaluations,
        })
    }
}

/// Conditional residuals: zero before `ncond`, then the ARMA recursion.
fn css_residuals(arma: &Arma, w: &[f64], ncond: usize) -> Vec<f64> {
    let n = w.len();
    let ar: Vec<(usize, f64)> = arma
        .ar
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| (i + 1, *c))
        .collect();
    let ma: Vec<(usize, f64)> = arma
        .ma
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| (i + 1, *c))
        .collect();
    let mut e = vec![0.0; n];
    for t in ncond..n {
        let mut v = w[t];
        for &(l, c) in &ar {
            v -= c * w[t - l];
        }
        for &(l, c) in &ma {
            if t >= ncond + l {
                v -= c * e[t - l];
            }
        }
        e[t] = v;
    }
    e.drain(..ncond.min(n));
    e
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ts(v: &[f64]) -> TimeSeries {
        TimeSeries::new("y", v.to_vec()).unwrap()
    }

    #[test]
    fn white_noise_loglik_closed_form() {
        let order = SarimaOrder::arma(0, 0, false);
        let ll = sarima_loglik(&ts(&[0.5, -0.3]), &order, &SarimaParams::white_noise(1.0)).unwrap();
        let oracle = -2.0 * 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * (0.25 + 0.09);
        assert_relative_eq!(ll, oracle, epsilon = 1e-12);
    }

    #[test]
    fn order_display_and_counts() {
        let o = SarimaOrder::new(1, 0, 2, 1, 0, 1, 52, true).unwrap();
        assert_eq!(o.to_string(), "(1,0,2)(1,0,1)[52] with intercept");
        assert_eq!(o.n_params(), 6);
        assert!(SarimaOrder::new(6, 0, 0, 0, 0, 0, 52, false).is_err());
        assert!(SarimaOrder::new(0, 0, 0, 0, 2, 0, 52, false).is_err());
    }

    #[test]
    fn rejects_nonstationary_params() {
        let order = SarimaOrder::arma(1, 0, false);
        let mut p = SarimaParams::white_noise(1.0);
        p.phi = vec![1.2];
        assert!(sarima_loglik(&ts(&[1.0, 2.0, 3.0]), &order, &p).is_err());
    }

    #[test]
    fn integration_weights_of_seasonal_and_first_difference() {
        let o = SarimaOrder::new(0, 1, 0, 0, 1, 0, 4, false).unwrap();
        // (1-B)(1-B^4) = 1 - B - B^4 + B^5
        assert_eq!(integration_weights(&o), vec![1.0, 0.0, 0.0, 1.0, -1.0]);
    }

    #[test]
    fn css_residuals_of_ar1() {
        let arma = Arma {
            ar: vec![0.5],
            ma: vec![],
        };
        let e = css_residuals(&arma, &[1.0, 2.0, 4.0], 1);
        assert_eq!(e, vec![1.5, 3.0]);
    }

    #[test]
    fn least_squares_recovers_line() {
        let x: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let ones = vec![1.0; 10];
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let b = least_squares(&[&ones, &x], &y).unwrap();
        assert_relative_eq!(b[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(b[1], 3.0, epsilon = 1e-10);
    }
}
