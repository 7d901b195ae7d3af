//! Automatic SARIMA order selection by exhaustive AIC search.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sarima::{build_fit, free_from_params, Estimate, FitOptions, Method, Problem, SarimaFit, SarimaOrder};
use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::preprocess::{difference_orders, BoxCox, DifferenceOrders};

/// Number of (p, q, P, Q) tuples on the full grid.
pub const CANDIDATE_GRID: usize = 6 * 6 * 3 * 3;

/// Candidates with an AR or MA factor root at modulus below this are
/// discarded as near-nonstationary or near-noninvertible.
pub const ROOT_MARGIN: f64 = 1.01;

/// When to rank candidates by the conditional-sum-of-squares likelihood
/// before refitting the winner exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    /// For long series (more than 150 points) or seasons longer than 12.
    Auto,
    Always,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_p: usize,
    pub max_q: usize,
    pub max_seasonal_p: usize,
    pub max_seasonal_q: usize,
    pub approximation: Approximation,
    /// Starting points per candidate while ranking by the approximate
    /// likelihood.
    pub ranking_restarts: usize,
    /// How many of the best approximate candidates are refitted exactly;
    /// the final choice is by exact AIC among them.
    pub refine: usize,
    /// Fixed difference orders; selected from the data when `None`.
    pub differences: Option<DifferenceOrders>,
    pub fit: FitOptions,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_p: 5,
            max_q: 5,
            max_seasonal_p: 2,
            max_seasonal_q: 2,
            approximation: Approximation::Auto,
            ranking_restarts: 1,
            refine: 5,
            differences: None,
            fit: FitOptions::default(),
        }
    }
}

impl SearchConfig {
    /// The small grid (p, q <= 2; P, Q <= 1).
    pub fn reduced() -> Self {
        SearchConfig {
            max_p: 2,
            max_q: 2,
            max_seasonal_p: 1,
            max_seasonal_q: 1,
            ..Default::default()
        }
    }

    /// Candidate orders in lexicographic (p, q, P, Q) order. The intercept
    /// is included only when there is no differencing.
    pub fn candidates(&self, season: usize, diff: DifferenceOrders) -> Vec<SarimaOrder> {
        let seasonal = season > 1;
        let max_sp = if seasonal { self.max_seasonal_p } else { 0 };
        let max_sq = if seasonal { self.max_seasonal_q } else { 0 };
        let intercept = diff.d + diff.seasonal_d == 0;
        let mut out = Vec::new();
        for p in 0..=self.max_p {
            for q in 0..=self.max_q {
                for sp in 0..=max_sp {
                    for sq in 0..=max_sq {
                        out.push(SarimaOrder {
                            p,
                            d: diff.d,
                            q,
                            seasonal_p: sp,
                            seasonal_d: diff.seasonal_d,
                            seasonal_q: sq,
                            season,
                            intercept,
                        });
                    }
                }
            }
        }
        out
    }

    fn approximate(&self, n: usize, season: usize) -> bool {
        match self.approximation {
            Approximation::Auto => n > 150 || season > 12,
            Approximation::Always => true,
            Approximation::Never => false,
        }
    }
}

/// Full-grid search with the Box-Cox parameter estimated from `y`.
pub fn sarima_auto(y: &TimeSeries, season: usize) -> Result<SarimaFit> {
    sarima_auto_with(y.values(), season, None, &SearchConfig::default())
}

/// Order search on `y`. With `transform == None` the Box-Cox parameter is
/// estimated from `y`.
pub fn sarima_auto_with(
    y: &[f64],
    season: usize,
    transform: Option<BoxCox>,
    config: &SearchConfig,
) -> Result<SarimaFit> {
    let transform = match transform {
        Some(t) => t,
        None => BoxCox::estimate(y, season)?,
    };
    let x = transform.forward(y)?;
    let diff = match config.differences {
        Some(d) => d,
        None => difference_orders(&x, season)?,
    };
    let best = search_orders(&x, &[], season, diff, config)?;
    Ok(build_fit(best.order, transform, x, &best.estimate))
}

/// The winning order of a search and its exact estimate.
#[derive(Debug, Clone)]
pub(crate) struct Selected {
    pub order: SarimaOrder,
    pub estimate: Estimate,
}

/// Minimum-AIC order for the transformed series `x` with regression
/// columns `regressors` (same length as `x`). Each regression coefficient
/// counts as one parameter, which shifts every candidate's AIC equally.
pub(crate) fn search_orders(
    x: &[f64],
    regressors: &[&[f64]],
    season: usize,
    diff: DifferenceOrders,
    config: &SearchConfig,
) -> Result<Selected> {
    let candidates = config.candidates(season, diff);
    let approximate = config.approximate(x.len(), season);
    let method = if approximate { Method::Css } else { Method::Exact };
    let n_reg = regressors.len();

    let ranking_fit = FitOptions {
        restarts: if approximate {
            config.ranking_restarts
        } else {
            config.fit.restarts
        },
        ..config.fit
    };
    // Conditional fits need enough residuals beyond the autoregressive
    // span; all of them are then scored on the same tail sample.
    let n_w = x.len().saturating_sub(diff.d + season * diff.seasonal_d);
    let feasible = |o: &SarimaOrder| !approximate || n_w >= o.ar_span() + 2 * (o.n_params() + n_reg + 1);
    let candidates: Vec<SarimaOrder> = candidates.into_iter().filter(|o| feasible(o)).collect();
    let common_start = candidates.iter().map(|o| o.ar_span()).max().unwrap_or(0);

    let scored: Vec<Option<(f64, SarimaOrder, Estimate)>> = candidates
        .par_iter()
        .map(|order| {
            let problem = Problem::new(*order, x, regressors).ok()?;
            let est = problem
                .estimate(method, &problem.starts(&ranking_fit), &config.fit.bfgs)
                .ok()?;
            if !est.converged || !est.params.roots_clear_of(ROOT_MARGIN) {
                return None;
            }
            let k = (order.n_params() + n_reg) as f64;
            let aic = if approximate {
                let m = (n_w - common_start) as f64;
                let s2 = problem.css_tail_variance(&est.params, &est.beta, common_start);
                m * ((2.0 * std::f64::consts::PI * s2).ln() + 1.0) + 2.0 * k
            } else {
                -2.0 * est.loglik + 2.0 * k
            };
            aic.is_finite().then_some((aic, *order, est))
        })
        .collect();
    let mut ranked: Vec<(f64, SarimaOrder, Estimate)> = scored.into_iter().flatten().collect();
    ranked.sort_by(|a, b| rank_cmp((a.0, &a.1), (b.0, &b.1)));
    if ranked.is_empty() {
        return Err(Error::Estimation(format!(
            "no candidate order could be fitted ({} tried)",
            candidates.len()
        )));
    }
    if !approximate {
        let (_, order, estimate) = ranked.swap_remove(0);
        return Ok(Selected { order, estimate });
    }
    // exact likelihood from the conditional optimum, then the standard
    // starts if that run does not converge
    let refit = |order: &SarimaOrder, warm: &Estimate| -> Option<(f64, Selected)> {
        let problem = Problem::new(*order, x, regressors).ok()?;
        let warm = free_from_params(&warm.params);
        let est = match problem.estimate(Method::Exact, &[warm], &config.fit.bfgs) {
            Ok(e) if e.converged => e,
            _ => problem
                .estimate(Method::Exact, &problem.starts(&config.fit), &config.fit.bfgs)
                .ok()?,
        };
        let aic = -2.0 * est.loglik + 2.0 * (order.n_params() + n_reg) as f64;
        (est.converged && est.params.roots_clear_of(ROOT_MARGIN)).then_some({
            (
                aic,
                Selected {
                    order: *order,
                    estimate: est,
                },
            )
        })
    };
    let mut start = 0;
    while start < ranked.len() {
        let end = (start + config.refine.max(1)).min(ranked.len());
        let exact: Vec<(f64, Selected)> = ranked[start..end]
            .par_iter()
            .filter_map(|(_, order, approx)| refit(order, approx))
            .collect();
        if let Some(best) = exact
            .into_iter()
            .min_by(|a, b| rank_cmp((a.0, &a.1.order), (b.0, &b.1.order)))
        {
            return Ok(best.1);
        }
        log::debug!("no exact refit converged among approximate ranks {start}..{end}");
        start = end;
    }
    Err(Error::Estimation(
        "no candidate converged under exact likelihood".into(),
    ))
}

/// AIC first, then lexicographic (p, q, P, Q), then no intercept first.
pub(crate) fn rank_cmp(a: (f64, &SarimaOrder), b: (f64, &SarimaOrder)) -> std::cmp::Ordering {
    let key = |o: &SarimaOrder| (o.p, o.q, o.seasonal_p, o.seasonal_q, o.intercept);
    a.0.total_cmp(&b.0).then_with(|| key(a.1).cmp(&key(b.1)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_grid_has_324_tuples() {
        let c = SearchConfig::default().candidates(52, DifferenceOrders { d: 0, seasonal_d: 0 });
        assert_eq!(c.len(), CANDIDATE_GRID);
        assert!(c.iter().all(|o| o.intercept));
        let c = SearchConfig::default().candidates(52, DifferenceOrders { d: 1, seasonal_d: 0 });
        assert!(c.iter().all(|o| !o.intercept));
        assert_eq!(
            SearchConfig::reduced()
                .candidates(52, DifferenceOrders { d: 0, seasonal_d: 1 })
                .len(),
            36
        );
    }
}
