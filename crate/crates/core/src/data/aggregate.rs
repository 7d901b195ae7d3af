//! Two-stage aggregation of raw municipal observations: daily values are
//! summarised per week (min, mean, max), then the weekly municipal values
//! are summarised per state (min, mean, max, sd).

use std::collections::BTreeMap;

use chrono::NaiveDate;
use log::info;

use super::{ExogenousMatrix, StateId, WeekRange};
use crate::error::{Error, Result};
use crate::stats;

/// Columns whose variance falls below this are treated as constant.
pub const ZERO_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct WeeklySummary {
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSummary {
    pub min: Vec<f64>,
    pub mean: Vec<f64>,
    pub max: Vec<f64>,
    pub sd: Vec<f64>,
}

/// Summarises each week's observed daily values. Weeks may be partially
/// observed; the mean is taken over the days present.
pub fn aggregate_daily_to_weekly(weeks: &[Vec<f64>]) -> Result<WeeklySummary> {
    let mut out = WeeklySummary {
        min: Vec::with_capacity(weeks.len()),
        mean: Vec::with_capacity(weeks.len()),
        max: Vec::with_capacity(weeks.len()),
    };
    for (i, days) in weeks.iter().enumerate() {
        if days.is_empty() {
            return Err(Error::InvalidInput(format!("week {} has no daily observations", i + 1)));
        }
        if days.len() > 7 {
            return Err(Error::InvalidInput(format!(
                "week {} has {} daily observations",
                i + 1,
                days.len()
            )));
        }
        out.min.push(days.iter().copied().fold(f64::INFINITY, f64::min));
        out.max.push(days.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.mean.push(stats::mean(days));
    }
    Ok(out)
}

/// Summarises each week's municipal values into state-level statistics.
/// The standard deviation uses the `n - 1` denominator, and is 0 for a
/// single municipality.
pub fn aggregate_municipal_to_state(weeks: &[Vec<f64>]) -> Result<StateSummary> {
    let n = weeks.len();
    let mut out = StateSummary {
        min: Vec::with_capacity(n),
        mean: Vec::with_capacity(n),
        max: Vec::with_capacity(n),
        sd: Vec::with_capacity(n),
    };
    for (i, vals) in weeks.iter().enumerate() {
        if vals.is_empty() {
            return Err(Error::InvalidInput(format!("week {} has no municipal values", i + 1)));
        }
        out.min.push(vals.iter().copied().fold(f64::INFINITY, f64::min));
        out.max.push(vals.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        out.mean.push(stats::mean(vals));
        out.sd.push(if vals.len() < 2 {
            0.0
        } else {
            stats::sample_variance(vals).sqrt()
        });
    }
    Ok(out)
}

fn is_constant_on(col: &[f64], range: WeekRange) -> bool {
    let block = &col[range.offsets()];
    block.len() < 2 || stats::sample_variance(block) < ZERO_VARIANCE_TOL
}

/// Removes every column that is constant on the training range or on the
/// testing range.
///
/// # Panics
/// If the ranges overlap or extend past the matrix horizon.
pub fn drop_zero_variance(exog: &ExogenousMatrix, train: WeekRange, test: WeekRange) -> ExogenousMatrix {
    assert!(!train.overlaps(&test), "training and testing ranges overlap");
    assert!(
        train.last as usize <= exog.n_weeks() && test.last as usize <= exog.n_weeks(),
        "range past horizon"
    );
    let mut out = exog.clone();
    out.retain(|name, col| {
        let drop = is_constant_on(col, train) || is_constant_on(col, test);
        if drop {
            info!("dropping zero-variance column {name}");
        }
        !drop
    });
    out
}

/// One raw measurement for a municipality on a given day.
#[derive(Debug, Clone, PartialEq)]
pub struct RawObservation {
    pub municipality: String,
    pub date: NaiveDate,
    pub variable: String,
    pub value: f64,
}

/// Raw daily municipal observations over a fixed weekly horizon.
#[derive(Debug, Clone)]
pub struct RawObservationTable {
    start: NaiveDate,
    n_weeks: usize,
    rows: Vec<RawObservation>,
}

impl RawObservationTable {
    /// `start` is the first day of week 1.
    pub fn new(start: NaiveDate, n_weeks: usize) -> Self {
        RawObservationTable {
            start,
            n_weeks,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: RawObservation) -> Result<()> {
        if !row.value.is_finite() {
            return Err(Error::NonFinite(format!(
                "{} {} {}",
                row.municipality, row.date, row.variable
            )));
        }
        self.week_of(row.date)?;
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn week_of(&self, date: NaiveDate) -> Result<usize> {
        let days = (date - self.start).num_days();
        if days < 0 || days as usize >= 7 * self.n_weeks {
            return Err(Error::InvalidInput(format!(
                "date {date} outside the {}-week horizon starting {}",
                self.n_weeks, self.start
            )));
        }
        Ok(days as usize / 7)
    }

    /// Runs both aggregation stages and returns one exogenous matrix per
    /// state. Each raw variable `v` yields twelve columns named
    /// `v_<weekly stat>_<municipal stat>`, e.g. `ndvi_max_sd`.
    pub fn aggregate(
        &self,
        municipality_state: &BTreeMap<String, StateId>,
    ) -> Result<BTreeMap<StateId, ExogenousMatrix>> {
        // (state, variable, municipality) -> per-week daily values
        type Key = (StateId, String, String);
        let mut daily: BTreeMap<Key, Vec<Vec<f64>>> = BTreeMap::new();
        for row in &self.rows {
            let state = municipality_state
                .get(&row.municipality)
                .ok_or_else(|| Error::InvalidInput(format!("municipality {} has no state", row.municipality)))?;
            let week = self.week_of(row.date)?;
            daily
                .entry((state.clone(), row.variable.clone(), row.municipality.clone()))
                .or_insert_with(|| vec![Vec::new(); self.n_weeks])[week]
                .push(row.value);
        }

        // (state, variable) -> weekly stat name -> per-week municipal values
        let mut municipal: BTreeMap<(StateId, String), [Vec<Vec<f64>>; 3]> = BTreeMap::new();
        for ((state, variable, _muni), weeks) in &daily {
            let slot = municipal
                .entry((state.clone(), variable.clone()))
                .or_insert_with(|| std::array::from_fn(|_| vec![Vec::new(); self.n_weeks]));
            for (w, days) in weeks.iter().enumerate() {
                if days.is_empty() {
                    continue;
                }
                let s = aggregate_daily_to_weekly(std::slice::from_ref(days))?;
                slot[0][w].push(s.min[0]);
                slot[1][w].push(s.mean[0]);
                slot[2][w].push(s.max[0]);
            }
        }

        let mut out: BTreeMap<StateId, ExogenousMatrix> = BTreeMap::new();
        for ((state, variable), stats_by_week) in municipal {
            let exog = out
                .entry(state.clone())
                .or_insert_with(|| ExogenousMatrix::new(self.n_weeks));
            for (weekly_name, per_week) in ["min", "mean", "max"].iter().zip(&stats_by_week) {
                let s = aggregate_municipal_to_state(per_week)
                    .map_err(|e| Error::InvalidInput(format!("state {state}, variable {variable}: {e}")))?;
                for (muni_name, series) in [("min", s.min), ("mean", s.mean), ("max", s.max), ("sd", s.sd)] {
                    exog.insert(format!("{variable}_{weekly_name}_{muni_name}"), series)?;
                }
            }
        }
        Ok(out)
    }
}
