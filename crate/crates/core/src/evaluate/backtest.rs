//! Rolling-origin nowcasting backtest.
//!
//! A nowcast of week `w` may use case counts (own and neighbouring
//! states) through week `w - lag` and covariates through week `w`.
//! Neighbouring counts for the unseen weeks are filled in from a small
//! SARIMA model of each neighbour fitted on the same information set.
//!
//! Each phase (validation, test) selects transforms, orders, the
//! projection bases and the score subsets once, on the weeks visible at
//! its first nowcast. Every later week re-estimates the parameters on the
//! expanded window (or only re-filters them, depending on the refit
//! cadence).

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ExogenousMatrix, PanelDataset, StateId, WeekIndex, WeekRange};
use crate::dimred::{
    pca_fit, pls_fit, project, select_pca_components, select_var_components, ProjectionBasis, ScoreMatrix,
    MAX_COMPONENTS,
};
use crate::ensemble::{
    compute_weights, fill_failed_members, trimmed_mean_combine, weighted_mean_combine, NowcastCell, NowcastPanel,
    WeightVector, MEMBERS,
};
use crate::error::{Error, Result};
use crate::models::{
    sarima_auto_with, sarima_forecast, sarimax_auto_with, sarimax_forecast, stl_fit, stl_forecast, var_auto,
    var_forecast, Forecast, ModelId, SarimaFit, SarimaxConfig, SarimaxFit, SearchConfig, StlFit, StlMode, VarConfig,
    VarFit,
};
use crate::preprocess::Standardizer;
use crate::stats;

/// Week ranges and the reporting protocol of a backtest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: WeekRange,
    /// Weeks nowcast to earn the weighted-ensemble weights.
    pub validation: WeekRange,
    pub test: WeekRange,
    /// Weeks between incidence and the case count becoming available.
    pub lag: usize,
    /// Forecast steps from the last available week to the nowcast week.
    pub horizon: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: WeekRange { first: 1, last: 261 },
            validation: WeekRange { first: 158, last: 261 },
            test: WeekRange { first: 262, last: 342 },
            lag: 2,
            horizon: 2,
        }
    }
}

impl SplitSpec {
    /// The default split scaled to a panel of `n_weeks` weeks.
    pub fn proportional(n_weeks: usize) -> Result<Self> {
        let d = SplitSpec::default();
        let scale = |w: u32| ((w as f64 - 1.0) * n_weeks as f64 / 342.0).round() as u32 + 1;
        let test_first = scale(d.test.first);
        let split = SplitSpec {
            train: WeekRange::new(1, test_first - 1)?,
            validation: WeekRange::new(scale(d.validation.first), test_first - 1)?,
            test: WeekRange::new(test_first, n_weeks as u32)?,
            ..d
        };
        split.validate(n_weeks)?;
        Ok(split)
    }

    pub fn validate(&self, n_weeks: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.lag == 0 {
            return bad("the reporting lag must be at least one week".into());
        }
        if self.horizon != self.lag {
            return bad(format!(
                "nowcasts target the current week, so the horizon ({}) must equal the lag ({})",
                self.horizon, self.lag
            ));
        }
        if self.train.first != 1 {
            return bad(format!("training must start at week 1, not {}", self.train.first));
        }
        if self.test.first != self.train.last + 1 {
            return bad(format!(
                "testing ({}) must start right after training ({})",
                self.test, self.train
            ));
        }
        if self.test.last as usize > n_weeks {
            return bad(format!("testing ({}) runs past the panel's {n_weeks} weeks", self.test));
        }
        if self.validation.first < self.train.first || self.validation.last > self.train.last {
            return bad(format!(
                "validation ({}) must lie inside training ({})",
                self.validation, self.train
            ));
        }
        if (self.validation.first as usize) <= self.lag + 1 {
            return bad(format!("validation ({}) leaves no weeks to fit on", self.validation));
        }
        Ok(())
    }

    pub fn n_test_weeks(&self) -> usize {
        self.test.len()
    }

    /// Validation weeks whose observations are visible at the first test
    /// nowcast.
    pub fn weight_weeks(&self) -> Option<WeekRange> {
        let last = self.validation.last.min(self.test.first - self.lag as u32);
        WeekRange::new(self.validation.first, last).ok()
    }
}

/// What to run and how hard to search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub season: usize,
    /// Individual models to run.
    pub models: Vec<ModelId>,
    /// Ensembles to build; both need all six individual models.
    pub ensembles: Vec<ModelId>,
    pub search: SearchConfig,
    /// Grid for the neighbour gap-filling models.
    pub neighbor_search: SearchConfig,
    /// Regression models reuse the plain SARIMA orders instead of
    /// searching orders per score subset.
    pub reuse_sarimax_orders: bool,
    /// Parameters are re-estimated every this many weeks and re-filtered
    /// in between.
    pub refit_every: usize,
}

impl BacktestConfig {
    pub fn new(season: usize) -> Self {
        BacktestConfig {
            season,
            models: MEMBERS.to_vec(),
            ensembles: ModelId::ENSEMBLES.to_vec(),
            search: SearchConfig::default(),
            neighbor_search: SearchConfig::reduced(),
            reuse_sarimax_orders: true,
            refit_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.season < 2 {
            return Err(Error::InvalidInput(format!(
                "season length must be at least 2, got {}",
                self.season
            )));
        }
        if self.refit_every == 0 {
            return Err(Error::InvalidInput("refit cadence must be at least one week".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidInput("no models requested".into()));
        }
        if let Some(m) = self.models.iter().find(|m| m.is_ensemble()) {
            return Err(Error::InvalidInput(format!("{m} is an ensemble, not a model")));
        }
        if let Some(m) = self.ensembles.iter().find(|m| !m.is_ensemble()) {
            return Err(Error::InvalidInput(format!("{m} is not an ensemble")));
        }
        if !self.ensembles.is_empty() && !MEMBERS.iter().all(|m| self.models.contains(m)) {
            return Err(Error::InvalidInput("ensembles need all six individual models".into()));
        }
        Ok(())
    }

    /// Requested methods in the fixed reporting order.
    pub fn methods(&self) -> Vec<ModelId> {
        ModelId::ALL
            .into_iter()
            .filter(|m| self.models.contains(m) || self.ensembles.contains(m))
            .collect()
    }

    fn members(&self) -> Vec<ModelId> {
        MEMBERS.into_iter().filter(|m| self.models.contains(m)).collect()
    }
}

/// A model that could not produce a nowcast; its slot was filled in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub state: StateId,
    /// Nowcast week, or `None` when the phase-level fit failed.
    pub week: Option<u32>,
    pub model: ModelId,
    pub message: String,
}

/// Model chosen for one state and phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelChoice {
    pub state: StateId,
    pub phase: String,
    pub model: ModelId,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestOutcome {
    pub panel: NowcastPanel,
    pub weights: BTreeMap<StateId, WeightVector>,
    pub failures: Vec<FailureEvent>,
    pub choices: Vec<ModelChoice>,
}

/// Runs every requested model over the test weeks of every state. States
/// run in parallel on the current rayon pool; the result is ordered by
/// state and does not depend on scheduling.
pub fn run_backtest(panel: &PanelDataset, split: &SplitSpec, config: &BacktestConfig) -> Result<BacktestOutcome> {
    config.validate()?;
    split.validate(panel.n_weeks())?;
    let test = Phase::new("test", split.test, split.lag);
    let validation = config
        .ensembles
        .contains(&ModelId::WeightedMean)
        .then(|| split.weight_weeks())
        .flatten()
        .map(|r| Phase::new("validation", r, split.lag));
    let phases: Vec<&Phase> = validation.iter().chain([&test]).collect();
    for p in &phases {
        if p.fit_end <= 2 * config.season {
            return Err(Error::InvalidInput(format!(
                "the {} phase fits on {} weeks; more than two seasons ({}) are needed",
                p.name,
                p.fit_end,
                2 * config.season
            )));
        }
    }

    let needs_neighbors = config.models.iter().any(|m| uses_covariates(*m));
    let imputations: Vec<BTreeMap<StateId, Vec<Vec<f64>>>> = phases
        .iter()
        .map(|p| {
            if needs_neighbors {
                impute_all(panel, p, config)
            } else {
                BTreeMap::new()
            }
        })
        .collect();

    let ids: Vec<&StateId> = panel.state_ids().collect();
    let outcomes: Vec<StateOutcome> = ids
        .par_iter()
        .map(|id| run_state(panel, id, &phases, &imputations, config))
        .collect::<Result<_>>()?;

    let mut out = BacktestOutcome {
        panel: NowcastPanel {
            methods: config.methods(),
            cells: Vec::new(),
        },
        weights: BTreeMap::new(),
        failures: Vec::new(),
        choices: Vec::new(),
    };
    for (id, o) in ids.into_iter().zip(outcomes) {
        out.panel.cells.extend(o.cells);
        if let Some(w) = o.weights {
            out.weights.insert(id.clone(), w);
        }
        out.failures.extend(o.failures);
        out.choices.extend(o.choices);
    }
    Ok(out)
}

fn uses_covariates(m: ModelId) -> bool {
    matches!(m, ModelId::SarimaxPca | ModelId::SarimaxPls | ModelId::VarPca)
}

/// A block of consecutive nowcast weeks sharing one model selection.
#[derive(Debug, Clone)]
struct Phase {
    name: &'static str,
    weeks: WeekRange,
    lag: usize,
    /// Weeks visible at the first nowcast.
    fit_end: usize,
}

impl Phase {
    fn new(name: &'static str, weeks: WeekRange, lag: usize) -> Self {
        Phase {
            name,
            weeks,
            lag,
            fit_end: weeks.first as usize - lag,
        }
    }

    /// (position, nowcast week, weeks of case data visible).
    fn steps(&self) -> impl Iterator<Item = (usize, u32, usize)> + '_ {
        self.weeks
            .weeks()
            .enumerate()
            .map(|(k, w)| (k, w, w as usize - self.lag))
    }
}

// ---------------------------------------------------------------------------
// neighbour gap filling

/// For every state: per phase week, the filled-in counts of the `lag`
/// weeks after the visible window.
fn impute_all(panel: &PanelDataset, phase: &Phase, config: &BacktestConfig) -> BTreeMap<StateId, Vec<Vec<f64>>> {
    let ids: Vec<&StateId> = panel
        .state_ids()
        .filter(|id| panel.neighbors(id).next().is_some())
        .collect();
    let filled: Vec<Vec<Vec<f64>>> = ids
        .par_iter()
        .map(|id| impute_state(panel.state(id).expect("listed").cases.values(), phase, config))
        .collect();
    ids.into_iter().cloned().zip(filled).collect()
}

fn persistence(y: &[f64], lag: usize) -> Vec<f64> {
    vec![*y.last().expect("nonempty window"); lag]
}

fn impute_state(y: &[f64], phase: &Phase, config: &BacktestConfig) -> Vec<Vec<f64>> {
    let mut fit = sarima_auto_with(&y[..phase.fit_end], config.season, None, &config.neighbor_search)
        .map_err(|e| log::info!("gap-filling model failed ({e}); carrying the last count forward"))
        .ok();
    phase
        .steps()
        .map(|(k, _, visible)| {
            let window = &y[..visible];
            if k > 0 {
                fit = fit.as_ref().and_then(|f| advance_sarima(f, window, k, config).ok());
            }
            let Some(f) = &fit else {
                return persistence(window, phase.lag);
            };
            (1..=phase.lag)
                .map(|h| sarima_forecast(f, h).map(|fc| fc.point))
                .collect::<Result<Vec<f64>>>()
                .unwrap_or_else(|_| persistence(window, phase.lag))
        })
        .collect()
}

fn advance_sarima(fit: &SarimaFit, y: &[f64], k: usize, config: &BacktestConfig) -> Result<SarimaFit> {
    if k.is_multiple_of(config.refit_every) {
        fit.refit(y, &config.search.fit).or_else(|_| fit.extend(y))
    } else {
        fit.extend(y)
    }
}

// ---------------------------------------------------------------------------
// per-state covariate pool

/// A state's covariates and its neighbours' case series.
struct Pool<'a> {
    covariates: &'a ExogenousMatrix,
    neighbors: Vec<(String, &'a [f64], &'a [Vec<f64>])>,
}

impl Pool<'_> {
    /// Pool rows for the first `rows` weeks when case data are visible
    /// through week `visible`; neighbour counts past it come from the gap
    /// fill of phase step `step`.
    fn rows(&self, keep: &[String], rows: usize, visible: usize, step: usize) -> Result<ExogenousMatrix> {
        let mut x = ExogenousMatrix::new(rows);
        for name in keep {
            if let Some(col) = self.covariates.column(name) {
                x.insert(name.clone(), col[..rows].to_vec())?;
                continue;
            }
            let (_, cases, filled) = self
                .neighbors
                .iter()
                .find(|(n, _, _)| n == name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown pool column {name}")))?;
            let mut col = cases[..visible.min(rows)].to_vec();
            col.extend(filled[step].iter().take(rows.saturating_sub(visible)));
            x.insert(name.clone(), col)?;
        }
        Ok(x)
    }

    fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.covariates.names().to_vec();
        v.extend(self.neighbors.iter().map(|(n, _, _)| n.clone()));
        v
    }
}

/// Phase-level reduction of the pool.
struct Reductions {
    keep: Vec<String>,
    standardizer: Standardizer,
    pca: ProjectionBasis,
    pls: Option<ProjectionBasis>,
    /// Principal components regressed on, by component index.
    sarimax_components: Vec<usize>,
    var_components: Vec<usize>,
}

impl Reductions {
    fn fit(pool: &Pool, y: &[f64], fit_end: usize) -> Result<Reductions> {
        let all = pool.names();
        let x = pool.rows(&all, fit_end, fit_end, 0)?;
        let keep: Vec<String> = x
            .columns()
            .filter(|(_, c)| stats::sample_variance(c) > crate::data::ZERO_VARIANCE_TOL)
            .map(|(n, _)| n.to_string())
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidInput(
                "no covariate varies over the fitting window".into(),
            ));
        }
        let x = pool.rows(&keep, fit_end, fit_end, 0)?;
        let train = WeekRange::new(1, fit_end as u32)?;
        let standardizer = Standardizer::fit(&x, train)?;
        let z = standardizer.transform(&x)?;
        let pca = pca_fit(&z, train)?;
        let scores = project(&z, &pca)?;
        let pls = pls_fit(&z, &y[..fit_end], train, MAX_COMPONENTS)
            .map(|(b, _)| b)
            .map_err(|e| log::info!("partial least squares failed: {e}"))
            .ok();
        Ok(Reductions {
            sarimax_components: select_pca_components(&scores, y, train).components,
            var_components: select_var_components(&scores, y, train).components,
            keep,
            standardizer,
            pca,
            pls,
        })
    }

    fn scores(&self, pool: &Pool, rows: usize, visible: usize, step: usize) -> Result<Scores> {
        let z = self
            .standardizer
            .transform(&pool.rows(&self.keep, rows, visible, step)?)?;
        let pca = project(&z, &self.pca)?;
        Ok(Scores {
            sarimax_pca: pca.select(&self.sarimax_components),
            var_pca: pca.select(&self.var_components),
            pls: self.pls.as_ref().map(|b| project(&z, b)).transpose()?,
        })
    }
}

struct Scores {
    sarimax_pca: ScoreMatrix,
    var_pca: ScoreMatrix,
    pls: Option<ScoreMatrix>,
}

impl Scores {
    fn for_model(&self, m: ModelId) -> Result<&ScoreMatrix> {
        match m {
            ModelId::SarimaxPca => Ok(&self.sarimax_pca),
            ModelId::VarPca => Ok(&self.var_pca),
            ModelId::SarimaxPls => self
                .pls
                .as_ref()
                .ok_or_else(|| Error::Estimation("no partial least squares scores".into())),
            _ => Err(Error::InvalidInput(format!("{m} takes no scores"))),
        }
    }
}

// ---------------------------------------------------------------------------
// per-state models

#[derive(Debug, Clone)]
enum Fitted {
    Sarima(SarimaFit),
    Sarimax(SarimaxFit),
    Stl(StlFit),
    Var(VarFit),
}

impl Fitted {
    fn describe(&self) -> String {
        match self {
            Fitted::Sarima(f) => format!("{} lambda={}", f.order, f.transform.lambda.lambda),
            Fitted::Sarimax(f) => format!(
                "{} lambda={} on [{}]{}",
                f.errors.order,
                f.errors.transform.lambda.lambda,
                f.labels.join(","),
                if f.fallback { " (fallback)" } else { "" }
            ),
            Fitted::Stl(f) => format!("seasonally adjusted {}", f.adjusted.order),
            Fitted::Var(f) => format!("VAR({}) on [{}]", f.lag, f.labels.join(",")),
        }
    }

    fn advance(&self, y: &[f64], scores: Option<&ScoreMatrix>, refit: bool, config: &BacktestConfig) -> Result<Fitted> {
        let opts = &config.search.fit;
        let need = || scores.ok_or_else(|| Error::InvalidInput("scores are required".into()));
        Ok(match self {
            Fitted::Sarima(f) => Fitted::Sarima(if refit {
                f.refit(y, opts).or_else(|_| f.extend(y))?
            } else {
                f.extend(y)?
            }),
            Fitted::Sarimax(f) => {
                let s = need()?;
                Fitted::Sarimax(if refit {
                    f.refit(y, s, opts).or_else(|_| f.extend(y, s))?
                } else {
                    f.extend(y, s)?
                })
            }
            Fitted::Stl(f) => Fitted::Stl(if refit {
                f.refit(y, opts).or_else(|_| f.extend(y))?
            } else {
                f.extend(y)?
            }),
            // least squares has no warm start: re-estimate every week
            Fitted::Var(f) => Fitted::Var(f.refit(y, need()?)?),
        })
    }

    fn forecast(&self, scores: Option<&ScoreMatrix>, h: usize) -> Result<Forecast> {
        match self {
            Fitted::Sarima(f) => sarima_forecast(f, h),
            Fitted::Sarimax(f) => sarimax_forecast(
                f,
                scores.ok_or_else(|| Error::InvalidInput("scores are required".into()))?,
                h,
            ),
            Fitted::Stl(f) => stl_forecast(f, h),
            Fitted::Var(f) => var_forecast(f, h),
        }
    }
}

struct StateOutcome {
    cells: Vec<NowcastCell>,
    weights: Option<WeightVector>,
    failures: Vec<FailureEvent>,
    choices: Vec<ModelChoice>,
}

/// Member nowcasts of one phase: `slots[k][j]` for phase step `k` and
/// member `j`.
struct PhaseRun {
    slots: Vec<Vec<(ModelId, Option<Forecast>)>>,
}

fn initial_fit(
    model: ModelId,
    y: &[f64],
    scores: Option<&Scores>,
    base: Option<&SarimaFit>,
    config: &BacktestConfig,
) -> Result<Fitted> {
    let sarimax = SarimaxConfig {
        search: config.search,
        reuse_orders: config.reuse_sarimax_orders,
    };
    let scores = || scores.ok_or_else(|| Error::Estimation("no covariate scores".into()));
    Ok(match model {
        ModelId::Sarima => Fitted::Sarima(match base {
            Some(b) => b.clone(),
            None => sarima_auto_with(y, config.season, None, &config.search)?,
        }),
        ModelId::SarimaxPca | ModelId::SarimaxPls => {
            let s = scores()?.for_model(model)?;
            Fitted::Sarimax(sarimax_auto_with(
                y,
                s,
                config.season,
                base.map(|b| b.transform),
                base,
                &sarimax,
            )?)
        }
        ModelId::StlAdditive => Fitted::Stl(stl_fit(y, config.season, StlMode::Additive, &config.search)?),
        ModelId::StlMultiplicative => Fitted::Stl(stl_fit(y, config.season, StlMode::Multiplicative, &config.search)?),
        ModelId::VarPca => Fitted::Var(var_auto(y, scores()?.for_model(model)?, &VarConfig::default())?),
        ModelId::TrimmedMean | ModelId::WeightedMean => unreachable!("ensembles are not fitted"),
    })
}

fn run_phase(
    id: &StateId,
    y: &[f64],
    pool: &Pool,
    phase: &Phase,
    config: &BacktestConfig,
    failures: &mut Vec<FailureEvent>,
    choices: &mut Vec<ModelChoice>,
) -> PhaseRun {
    let members = config.members();
    let fail = |failures: &mut Vec<FailureEvent>, week: Option<u32>, model: ModelId, e: &Error| {
        log::warn!("{id} {model} week {week:?}: {e}");
        failures.push(FailureEvent {
            state: id.clone(),
            week,
            model,
            message: e.to_string(),
        });
    };

    let needs_scores = members.iter().any(|m| uses_covariates(*m));
    let reductions = if needs_scores {
        Reductions::fit(pool, y, phase.fit_end)
            .map_err(|e| log::warn!("{id} {}: covariate reduction failed: {e}", phase.name))
            .ok()
    } else {
        None
    };
    let first_scores = reductions
        .as_ref()
        .and_then(|r| r.scores(pool, phase.fit_end, phase.fit_end, 0).ok());

    let window = &y[..phase.fit_end];
    let base = if members.iter().any(|m| *m == ModelId::Sarima || uses_covariates(*m)) {
        sarima_auto_with(window, config.season, None, &config.search)
            .map_err(|e| log::warn!("{id} {}: SARIMA search failed: {e}", phase.name))
            .ok()
    } else {
        None
    };
    let mut fits: Vec<Option<Fitted>> = members
        .iter()
        .map(
            |&m| match initial_fit(m, window, first_scores.as_ref(), base.as_ref(), config) {
                Ok(f) => {
                    choices.push(ModelChoice {
                        state: id.clone(),
                        phase: phase.name.to_string(),
                        model: m,
                        description: f.describe(),
                    });
                    Some(f)
                }
                Err(e) => {
                    fail(failures, None, m, &e);
                    None
                }
            },
        )
        .collect();

    let mut slots = Vec::with_capacity(phase.weeks.len());
    for (k, week, visible) in phase.steps() {
        let scores = reductions
            .as_ref()
            .map(|r| r.scores(pool, week as usize, visible, k))
            .transpose()
            .map_err(|e| log::warn!("{id} week {week}: scores failed: {e}"))
            .ok()
            .flatten();
        let mut row = Vec::with_capacity(members.len());
        for (j, &m) in members.iter().enumerate() {
            let s = match (&scores, uses_covariates(m)) {
                (Some(s), true) => s.for_model(m).ok(),
                _ => None,
            };
            let had_fit = fits[j].is_some();
            match step_member(&mut fits[j], y, s, k, week, visible, phase.lag, config) {
                Ok(f) => row.push((m, Some(f))),
                Err(e) => {
                    if had_fit {
                        fail(failures, Some(week), m, &e);
                    }
                    row.push((m, None));
                }
            }
        }
        slots.push(row);
    }
    PhaseRun { slots }
}

/// Moves one member's fit to the current window and nowcasts. A fit
/// that cannot be advanced stays as it was for the next week.
#[allow(clippy::too_many_arguments)]
fn step_member(
    fit: &mut Option<Fitted>,
    y: &[f64],
    scores: Option<&ScoreMatrix>,
    k: usize,
    week: u32,
    visible: usize,
    lag: usize,
    config: &BacktestConfig,
) -> Result<Forecast> {
    let current = fit.as_ref().ok_or_else(|| Error::Estimation("no phase fit".into()))?;
    if k > 0 {
        let next = current.advance(&y[..visible], scores, k.is_multiple_of(config.refit_every), config)?;
        *fit = Some(next);
    }
    let f = fit.as_ref().expect("set").forecast(scores, lag)?;
    if f.target.ordinal() != week {
        return Err(Error::Estimation(format!(
            "forecast targets week {}, not {week}",
            f.target.ordinal()
        )));
    }
    Ok(f)
}

/// Last-value nowcast with an interval from the spread of `lag`-week
/// changes; used only when every requested model failed.
fn persistence_forecast(model: ModelId, y: &[f64], lag: usize) -> Result<Forecast> {
    let last = *y.last().ok_or(Error::TooShort { needed: 1, got: 0 })?;
    let changes: Vec<f64> = y.windows(lag + 1).map(|w| w[lag] - w[0]).collect();
    let sd = if changes.len() >= 2 {
        stats::sample_sd(&changes)
    } else {
        0.0
    };
    let cutoff = WeekIndex::from_offset(y.len() - 1);
    Forecast::clamped(
        model,
        cutoff,
        lag,
        last,
        last - stats::Z_975 * sd,
        last + stats::Z_975 * sd,
    )
}

fn fill(slots: &[(ModelId, Option<Forecast>)], y: &[f64], lag: usize) -> Result<(Vec<Forecast>, Vec<ModelId>)> {
    match fill_failed_members(slots) {
        Ok(v) => Ok(v),
        Err(_) => {
            let mut filled = Vec::new();
            for (m, _) in slots {
                filled.push(persistence_forecast(*m, y, lag)?);
            }
            Ok((filled, slots.iter().map(|(m, _)| *m).collect()))
        }
    }
}

fn run_state(
    panel: &PanelDataset,
    id: &StateId,
    phases: &[&Phase],
    imputations: &[BTreeMap<StateId, Vec<Vec<f64>>>],
    config: &BacktestConfig,
) -> Result<StateOutcome> {
    let series = panel.state(id).expect("listed state");
    let y = series.cases.values();
    let mut failures = Vec::new();
    let mut choices = Vec::new();
    let mut weights = None;
    let mut cells = Vec::new();

    for (phase, imputed) in phases.iter().zip(imputations) {
        let pool = Pool {
            covariates: &series.exog,
            neighbors: panel
                .neighbors(id)
                .filter_map(|nb| {
                    let filled = imputed.get(nb)?;
                    Some((
                        format!("cases_{nb}"),
                        panel.state(nb)?.cases.values(),
                        filled.as_slice(),
                    ))
                })
                .collect(),
        };
        let run = run_phase(id, y, &pool, phase, config, &mut failures, &mut choices);
        let filled: Vec<(Vec<Forecast>, Vec<ModelId>)> = run
            .slots
            .iter()
            .zip(phase.steps())
            .map(|(row, (_, _, visible))| fill(row, &y[..visible], phase.lag))
            .collect::<Result<_>>()?;

        if phase.name == "validation" {
            let observed: Vec<f64> = phase.weeks.offsets().map(|t| y[t]).collect();
            let predictions: Vec<Vec<f64>> = (0..MEMBERS.len())
                .map(|j| filled.iter().map(|(m, _)| m[j].point).collect())
                .collect();
            weights = Some(compute_weights(&predictions, &observed)?);
            continue;
        }

        for ((members, replaced), (_, week, _)) in filled.into_iter().zip(phase.steps()) {
            let mut forecasts = members.clone();
            if config.ensembles.contains(&ModelId::TrimmedMean) {
                forecasts.push(trimmed_mean_combine(&members)?);
            }
            if config.ensembles.contains(&ModelId::WeightedMean) {
                let w = weights.clone().unwrap_or_else(WeightVector::uniform);
                forecasts.push(weighted_mean_combine(&members, &w)?);
            }
            cells.push(NowcastCell {
                state: id.clone(),
                week: WeekIndex::new(week)?,
                observed: y[week as usize - 1],
                forecasts,
                replaced,
            });
        }
    }
    Ok(StateOutcome {
        cells,
        weights,
        failures,
        choices,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_split_has_81_test_weeks() {
        let s = SplitSpec::default();
        s.validate(342).unwrap();
        assert_eq!(s.n_test_weeks(), 81);
        assert_eq!(s.weight_weeks().unwrap(), WeekRange::new(158, 260).unwrap());
    }

    #[test]
    fn split_rules() {
        let mut s = SplitSpec::default();
        assert!(s.validate(300).is_err());
        s.horizon = 1;
        assert!(s.validate(342).is_err());
        let p = SplitSpec::proportional(120).unwrap();
        assert_eq!(p.test.last, 120);
        assert_eq!(p.test.first, p.train.last + 1);
    }

    #[test]
    fn ensembles_need_every_member() {
        let mut c = BacktestConfig::new(52);
        c.validate().unwrap();
        c.models = vec![ModelId::Sarima];
        assert!(c.validate().is_err());
        c.ensembles.clear();
        c.validate().unwrap();
        assert_eq!(c.methods(), vec![ModelId::Sarima]);
    }

    #[test]
    fn persistence_repeats_the_last_count() {
        let f = persistence_forecast(ModelId::Sarima, &[1.0, 3.0, 2.0, 4.0], 2).unwrap();
        assert_eq!(f.point, 4.0);
        assert_eq!(f.target.ordinal(), 6);
    }
}
