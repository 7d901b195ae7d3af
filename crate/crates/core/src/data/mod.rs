//! Panel data model: weekly case series per state, exogenous covariates,
//! the state adjacency graph and census populations.
//!
//! Everything here is immutable once a [`PanelDataset`] has been validated,
//! so a panel can be shared freely between per-state worker threads.

mod aggregate;
mod ingest;
mod synth;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use aggregate::{
    aggregate_daily_to_weekly, aggregate_municipal_to_state, drop_zero_variance, RawObservation, RawObservationTable,
    StateSummary, WeeklySummary, ZERO_VARIANCE_TOL,
};
pub use ingest::{load_panel, write_panel, PanelFiles};
pub use synth::synthesize_panel;

/// 1-based week ordinal over the study horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeekIndex(u32);

impl WeekIndex {
    pub fn new(ordinal: u32) -> Result<Self> {
        if ordinal == 0 {
            return Err(Error::InvalidInput("week ordinals are 1-based".into()));
        }
        Ok(WeekIndex(ordinal))
    }

    /// Week whose 0-based position in a series is `offset`.
    pub fn from_offset(offset: usize) -> Self {
        WeekIndex(offset as u32 + 1)
    }

    pub fn ordinal(self) -> u32 {
        self.0
    }

    /// 0-based position of this week in a series.
    pub fn offset(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for WeekIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Inclusive range of weeks, e.g. the training block `1..=261`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekRange {
    pub first: u32,
    pub last: u32,
}

impl WeekRange {
    pub fn new(first: u32, last: u32) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::InvalidInput(format!("invalid week range {first}..={last}")));
        }
        Ok(WeekRange { first, last })
    }

    pub fn len(&self) -> usize {
        (self.last - self.first + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// 0-based offsets covered by the range.
    pub fn offsets(&self) -> Range<usize> {
        (self.first as usize - 1)..(self.last as usize)
    }

    pub fn contains(&self, week: u32) -> bool {
        (self.first..=self.last).contains(&week)
    }

    pub fn overlaps(&self, other: &WeekRange) -> bool {
        self.first <= other.last && other.first <= self.last
    }

    pub fn weeks(&self) -> impl Iterator<Item = u32> {
        self.first..=self.last
    }
}

impl fmt::Display for WeekRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..={}", self.first, self.last)
    }
}

/// Two-letter uppercase state code.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StateId(String);

impl StateId {
    pub fn new(code: &str) -> Result<Self> {
        let valid = code.len() == 2 && code.bytes().all(|b| b.is_ascii_uppercase());
        if !valid {
            return Err(Error::InvalidInput(format!(
                "state code {code:?} is not two uppercase letters"
            )));
        }
        Ok(StateId(code.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for StateId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StateId::new(s)
    }
}

impl TryFrom<String> for StateId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        StateId::new(&s)
    }
}

impl From<StateId> for String {
    fn from(id: StateId) -> String {
        id.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A labelled weekly series with no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    label: String,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("series {label} at week {}", pos + 1)));
        }
        Ok(TimeSeries { label, values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, week: WeekIndex) -> Option<f64> {
        self.values.get(week.offset()).copied()
    }

    /// Values for the weeks in `range`.
    pub fn window(&self, range: WeekRange) -> &[f64] {
        &self.values[range.offsets()]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Named exogenous covariate columns sharing one horizon. Columns keep
/// insertion order; names are unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExogenousMatrix {
    n_weeks: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl ExogenousMatrix {
    pub fn new(n_weeks: usize) -> Self {
        ExogenousMatrix {
            n_weeks,
            names: Vec::new(),
            columns: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if values.len() != self.n_weeks {
            return Err(Error::InvalidInput(format!(
                "column {name} has {} weeks, expected {}",
                values.len(),
                self.n_weeks
            )));
        }
        if self.names.contains(&name) {
            return Err(Error::InvalidInput(format!("duplicate column {name}")));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("column {name} at week {}", pos + 1)));
        }
        self.names.push(name);
        self.columns.push(values);
        Ok(())
    }

    pub fn n_weeks(&self) -> usize {
        self.n_weeks
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.columns.iter().map(Vec::as_slice))
    }

    /// Mutable access to one column's values, used by perturbation tests and
    /// by the backtest when it splices imputed values into a copy.
    pub fn column_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(move |i| self.columns[i].as_mut_slice())
    }

    /// Keeps only the columns for which `keep` returns true.
    pub fn retain(&mut self, mut keep: impl FnMut(&str, &[f64]) -> bool) {
        let mut names = Vec::new();
        let mut columns = Vec::new();
        for (name, col) in self.names.drain(..).zip(self.columns.drain(..)) {
            if keep(&name, &col) {
                names.push(name);
                columns.push(col);
            }
        }
        self.names = names;
        self.columns = columns;
    }

    /// Row `offset` across all columns.
    pub fn row(&self, offset: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[offset]).collect()
    }
}

/// Case series and covariates for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSeries {
    pub cases: TimeSeries,
    pub exog: ExogenousMatrix,
}

/// Validated multi-state panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    n_weeks: usize,
    states: BTreeMap<StateId, StateSeries>,
    adjacency: BTreeMap<StateId, BTreeSet<StateId>>,
    population: BTreeMap<StateId, u64>,
}

impl PanelDataset {
    /// Builds a panel from its parts, checking every cross-table invariant.
    /// `edges` are undirected; duplicates are merged.
    pub fn new(
        n_weeks: usize,
        states: BTreeMap<StateId, StateSeries>,
        edges: &[(StateId, StateId)],
        population: BTreeMap<StateId, u64>,
    ) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::InvalidInput("panel has no states".into()));
        }
        for (id, series) in &states {
            if series.cases.len() != n_weeks {
                return Err(Error::InvalidInput(format!(
                    "state {id}: case series has {} weeks, panel horizon is {n_weeks}",
                    series.cases.len()
                )));
            }
            if series.exog.n_weeks() != n_weeks {
                return Err(Error::InvalidInput(format!(
                    "state {id}: exogenous horizon {} differs from panel horizon {n_weeks}",
                    series.exog.n_weeks()
                )));
            }
            match population.get(id) {
                None => return Err(Error::InvalidInput(format!("state {id} has no population entry"))),
                Some(0) => return Err(Error::InvalidInput(format!("state {id} has zero population"))),
                Some(_) => {}
            }
        }
        if let Some(extra) = population.keys().find(|k| !states.contains_key(*k)) {
            return Err(Error::InvalidInput(format!(
                "population entry for unknown state {extra}"
            )));
        }
        let mut adjacency: BTreeMap<StateId, BTreeSet<StateId>> =
            states.keys().map(|k| (k.clone(), BTreeSet::new())).collect();
        for (a, b) in edges {
            if a == b {
                return Err(Error::InvalidInput(format!("self-adjacency for state {a}")));
            }
            for s in [a, b] {
                if !states.contains_key(s) {
                    return Err(Error::InvalidInput(format!("adjacency references unknown state {s}")));
                }
            }
            adjacency.get_mut(a).expect("checked").insert(b.clone());
            adjacency.get_mut(b).expect("checked").insert(a.clone());
        }
        Ok(PanelDataset {
            n_weeks,
            states,
            adjacency,
            population,
        })
    }

    pub fn n_weeks(&self) -> usize {
        self.n_weeks
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn state_ids(&self) -> impl Iterator<Item = &StateId> {
        self.states.keys()
    }

    pub fn state(&self, id: &StateId) -> Option<&StateSeries> {
        self.states.get(id)
    }

    pub fn states(&self) -> impl Iterator<Item = (&StateId, &StateSeries)> {
        self.states.iter()
    }

    pub fn neighbors(&self, id: &StateId) -> impl Iterator<Item = &StateId> {
        self.adjacency.get(id).into_iter().flatten()
    }

    pub fn adjacency(&self) -> &BTreeMap<StateId, BTreeSet<StateId>> {
        &self.adjacency
    }

    /// Each undirected edge once, with `a < b`.
    pub fn edges(&self) -> Vec<(StateId, StateId)> {
        self.adjacency
            .iter()
            .flat_map(|(a, set)| set.iter().filter(move |b| a < *b).map(move |b| (a.clone(), b.clone())))
            .collect()
    }

    pub fn population(&self, id: &StateId) -> Option<u64> {
        self.population.get(id).copied()
    }

    /// Returns a copy with one state's series replaced. Used to build
    /// perturbed panels in information-set tests.
    pub fn with_state(&self, id: &StateId, series: StateSeries) -> Result<Self> {
        if !self.states.contains_key(id) {
            return Err(Error::InvalidInput(format!("unknown state {id}")));
        }
        let mut states = self.states.clone();
        states.insert(id.clone(), series);
        PanelDataset::new(self.n_weeks, states, &self.edges(), self.population.clone())
    }
}
