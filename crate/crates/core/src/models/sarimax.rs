//! Regression on component scores with seasonal ARIMA errors.
//!
//! The regression coefficients are concentrated out of the likelihood by
//! generalised least squares at every trial value of the error-model
//! parameters. Alternating a GLS step with an error-model step converges
//! to the same joint optimum; profiling reaches it in one optimisation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sarima::{
    build_fit, forecast_paths, free_from_params, interval_forecast, Estimate, FitOptions, Method, Problem, SarimaFit,
    SarimaOrder,
};
use super::search::{sarima_auto_with, search_orders, SearchConfig, ROOT_MARGIN};
use super::{Forecast, ModelId};
use crate::data::TimeSeries;
use crate::dimred::{Reduction, ScoreMatrix};
use crate::error::{Error, Result};
use crate::preprocess::{BoxCox, DifferenceOrders};

#[derive(Debug, Clone, Copy)]
#[derive(Default)]
pub struct SarimaxConfig {
    pub search: SearchConfig,
    /// Keep the orders of the plain SARIMA fit for every subset instead of
    /// searching the grid again per subset.
    pub reuse_orders: bool,
}


#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SarimaxFit {
    pub model: ModelId,
    /// Error model. Its `loglik` is the joint likelihood; its `aic` and
    /// `n_params` count the error-model parameters only.
    pub errors: SarimaFit,
    pub beta: Vec<f64>,
    /// Labels of the score columns the coefficients apply to.
    pub labels: Vec<String>,
    /// The selected score columns over the fitted history.
    pub regressors: Vec<Vec<f64>>,
    pub loglik: f64,
    pub n_params: usize,
    pub aic: f64,
    /// Set when no subset could be fitted and the plain SARIMA fit stands
    /// in.
    pub fallback: bool,
    pub subsets_tried: usize,
}

impl SarimaxFit {
    pub fn n_obs(&self) -> usize {
        self.errors.n_obs()
    }

    /// Re-profiles the coefficients and innovation variance on a longer
    /// window, keeping the order and ARMA parameters.
    pub fn extend(&self, y: &[f64], scores: &ScoreMatrix) -> Result<SarimaxFit> {
        let x = self.errors.transform.forward(y)?;
        let regressors = columns_by_label(scores, &self.labels, x.len())?;
        let refs: Vec<&[f64]> = regressors.iter().map(|c| c.as_slice()).collect();
        let order = self.errors.order;
        let problem = Problem::new(order, &x, &refs)?;
        let prof = problem.profile(&self.errors.params.arma(order.season), Method::Exact)?;
        let mut est = Estimate {
            params: self.errors.params.clone(),
            beta: prof.beta,
            loglik: prof.loglik,
            start_loglik: prof.loglik,
            converged: true,
            starts_tried: 0,
            evaluations: 1,
        };
        est.params.sigma2 = prof.sigma2;
        let mut fit = assemble(
            self.model,
            order,
            self.errors.transform,
            x,
            regressors,
            self.labels.clone(),
            &est,
        );
        fit.fallback = self.fallback;
        fit.subsets_tried = self.subsets_tried;
        Ok(fit)
    }

    /// Re-estimates on a longer window from the current parameters, with a
    /// multi-start fallback.
    pub fn refit(&self, y: &[f64], scores: &ScoreMatrix, options: &FitOptions) -> Result<SarimaxFit> {
        let x = self.errors.transform.forward(y)?;
        let regressors = columns_by_label(scores, &self.labels, x.len())?;
        let refs: Vec<&[f64]> = regressors.iter().map(|c| c.as_slice()).collect();
        let order = self.errors.order;
        let problem = Problem::new(order, &x, &refs)?;
        let warm = free_from_params(&self.errors.params);
        let est = match problem.estimate(Method::Exact, &[warm], &options.bfgs) {
            Ok(e) if e.converged => e,
            _ => problem.estimate(Method::Exact, &problem.starts(options), &options.bfgs)?,
        };
        let mut fit = assemble(
            self.model,
            order,
            self.errors.transform,
            x,
            regressors,
            self.labels.clone(),
            &est,
        );
        fit.fallback = self.fallback;
        fit.subsets_tried = self.subsets_tried;
        Ok(fit)
    }

    pub fn to_json(&self) -> Result<String> {
        super::to_fit_json("sarimax", self)
    }

    pub fn from_json(text: &str) -> Result<SarimaxFit> {
        super::from_fit_json("sarimax", text)
    }
}

fn model_for(method: Reduction) -> ModelId {
    match method {
        Reduction::Pca => ModelId::SarimaxPca,
        Reduction::Pls => ModelId::SarimaxPls,
    }
}

/// The first `n` values of the named score columns.
fn columns_by_label(scores: &ScoreMatrix, labels: &[String], n: usize) -> Result<Vec<Vec<f64>>> {
    labels
        .iter()
        .map(|l| {
            let i = scores
                .labels
                .iter()
                .position(|k| k == l)
                .ok_or_else(|| Error::InvalidInput(format!("score column {l:?} is missing")))?;
            let c = &scores.columns[i];
            if c.len() < n {
                return Err(Error::TooShort {
                    needed: n,
                    got: c.len(),
                });
            }
            Ok(c[..n].to_vec())
        })
        .collect()
}

fn assemble(
    model: ModelId,
    order: SarimaOrder,
    transform: BoxCox,
    x: Vec<f64>,
    regressors: Vec<Vec<f64>>,
    labels: Vec<String>,
    est: &Estimate,
) -> SarimaxFit {
    let beta = est.beta[usize::from(order.intercept)..].to_vec();
    let errors = build_fit(order, transform, x, est);
    let n_params = order.n_params() + beta.len();
    SarimaxFit {
        model,
        loglik: est.loglik,
        aic: -2.0 * est.loglik + 2.0 * n_params as f64,
        n_params,
        errors,
        beta,
        labels,
        regressors,
        fallback: false,
        subsets_tried: 0,
    }
}

/// Non-empty subsets of `k` columns as position lists, in bitmask order.
pub fn score_subsets(k: usize) -> Vec<Vec<usize>> {
    (1u32..(1 << k))
        .map(|mask| (0..k).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}

/// Searches every non-empty subset of the score columns with the Box-Cox
/// parameter estimated from `y`.
pub fn sarimax_auto(y: &TimeSeries, scores: &ScoreMatrix, season: usize) -> Result<SarimaxFit> {
    sarimax_auto_with(y.values(), scores, season, None, None, &SarimaxConfig::default())
}

/// Subset search over regression-with-SARIMA-errors models.
///
/// `base` is a plain SARIMA fit of the same series. It supplies the
/// transform and differencing orders, the orders when
/// `config.reuse_orders` is set, and the fallback when no subset fits.
/// It is computed here when not given.
pub fn sarimax_auto_with(
    y: &[f64],
    scores: &ScoreMatrix,
    season: usize,
    transform: Option<BoxCox>,
    base: Option<&SarimaFit>,
    config: &SarimaxConfig,
) -> Result<SarimaxFit> {
    let model = model_for(scores.method);
    let owned;
    let base = match base {
        Some(b) => b,
        None => {
            owned = sarima_auto_with(y, season, transform, &config.search)?;
            &owned
        }
    };
    let transform = base.transform;
    let x = transform.forward(y)?;
    let n = x.len();
    if scores.n_weeks() < n {
        return Err(Error::TooShort {
            needed: n,
            got: scores.n_weeks(),
        });
    }
    let diff = DifferenceOrders {
        d: base.order.d,
        seasonal_d: base.order.seasonal_d,
    };
    let subsets = score_subsets(scores.n_components());
    let fitted: Vec<Option<SarimaxFit>> = subsets
        .par_iter()
        .map(|subset| {
            let regressors: Vec<Vec<f64>> = subset.iter().map(|&i| scores.columns[i][..n].to_vec()).collect();
            let refs: Vec<&[f64]> = regressors.iter().map(|c| c.as_slice()).collect();
            let labels = subset.iter().map(|&i| scores.labels[i].clone()).collect();
            let (order, est) = if config.reuse_orders {
                let problem = Problem::new(base.order, &x, &refs).ok()?;
                let warm = free_from_params(&base.params);
                let est = match problem.estimate(Method::Exact, &[warm], &config.search.fit.bfgs) {
                    Ok(e) if e.converged => e,
                    _ => problem
                        .estimate(
                            Method::Exact,
                            &problem.starts(&config.search.fit),
                            &config.search.fit.bfgs,
                        )
                        .ok()?,
                };
                (est.converged && est.params.roots_clear_of(ROOT_MARGIN)).then_some((base.order, est))?
            } else {
                let s = search_orders(&x, &refs, season, diff, &config.search).ok()?;
                (s.order, s.estimate)
            };
            Some(assemble(model, order, transform, x.clone(), regressors, labels, &est))
        })
        .collect();
    let best = fitted
        .into_iter()
        .enumerate()
        .filter_map(|(i, f)| f.map(|f| (i, f)))
        .min_by(|(i, a), (j, b)| a.aic.total_cmp(&b.aic).then(i.cmp(j)));
    match best {
        Some((_, mut fit)) => {
            fit.subsets_tried = subsets.len();
            Ok(fit)
        }
        None => {
            log::warn!("no score subset could be fitted; falling back to the plain SARIMA fit");
            Ok(SarimaxFit {
                model,
                errors: base.clone(),
                beta: vec![],
                labels: vec![],
                regressors: vec![],
                loglik: base.loglik,
                n_params: base.n_params,
                aic: base.aic,
                fallback: true,
                subsets_tried: subsets.len(),
            })
        }
    }
}

/// Forecast `h` weeks ahead. `scores` must cover the fitted history and the
/// `h` target weeks for every column the fit uses.
pub fn sarimax_forecast(fit: &SarimaxFit, scores: &ScoreMatrix, h: usize) -> Result<Forecast> {
    let n = fit.n_obs();
    let regressors = columns_by_label(scores, &fit.labels, n + h)?;
    let e = &fit.errors;
    let paths = forecast_paths(
        &e.order,
        &e.params,
        &e.history,
        &regressors,
        &fit.beta,
        e.params.mean(),
        h,
    )?;
    interval_forecast(fit.model, e.cutoff(), h, &e.transform, &paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_scores_give_31_subsets() {
        let s = score_subsets(5);
        assert_eq!(s.len(), 31);
        assert_eq!(s[0], vec![0]);
        assert_eq!(s[30], vec![0, 1, 2, 3, 4]);
        assert!(score_subsets(0).is_empty());
    }
}
