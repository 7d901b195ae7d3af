//! Combining the six member nowcasts of one state-week.
//!
//! The trimmed mean drops one lowest and one highest point. The weighted
//! mean uses weights earned on a validation window, where each week goes
//! to the member(s) with the smallest absolute error. Both combined
//! intervals are the union of the contributing members' intervals.

use serde::{Deserialize, Serialize};

use crate::data::{StateId, WeekIndex};
use crate::error::{Error, Result};
use crate::models::{Forecast, ModelId};

/// Members every ensemble expects, in their fixed order.
pub const MEMBERS: [ModelId; 6] = ModelId::MEMBERS;

/// Tolerance on the weight sum.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Nonnegative member weights, in [`MEMBERS`] order, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() != MEMBERS.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} weights, got {}",
                MEMBERS.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidInput(format!("weights must be nonnegative: {weights:?}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!("weights sum to {sum}, not 1")));
        }
        Ok(WeightVector { weights })
    }

    pub fn uniform() -> Self {
        WeightVector {
            weights: vec![1.0 / MEMBERS.len() as f64; MEMBERS.len()],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, model: ModelId) -> Option<f64> {
        MEMBERS.iter().position(|m| *m == model).map(|i| self.weights[i])
    }
}

fn check_members(members: &[Forecast]) -> Result<()> {
    let Some(first) = members.first() else {
        return Err(Error::InvalidInput("no member forecasts to combine".into()));
    };
    if members.len() != MEMBERS.len() {
        return Err(Error::InvalidInput(format!(
            "ensembles need all {} members, got {}",
            MEMBERS.len(),
            members.len()
        )));
    }
    for (f, id) in members.iter().zip(MEMBERS) {
        if f.model != id {
            return Err(Error::InvalidInput(format!(
                "member {} found where {id} was expected",
                f.model
            )));
        }
        if f.cutoff != first.cutoff || f.target != first.target {
            return Err(Error::InvalidInput(format!(
                "member {} targets week {} from {}, others week {} from {}",
                f.model, f.target, f.cutoff, first.target, first.cutoff
            )));
        }
    }
    Ok(())
}

/// Indices kept after dropping one minimum and one maximum point; among
/// equal extremes the earliest member is dropped.
pub fn trimmed_indices(points: &[f64]) -> Vec<usize> {
    if points.len() < 3 {
        return (0..points.len()).collect();
    }
    let first_extreme = |skip: Option<usize>, better: fn(f64, f64) -> bool| {
        let mut best: Option<usize> = None;
        for (i, &p) in points.iter().enumerate() {
            if Some(i) == skip {
                continue;
            }
            if best.is_none_or(|b| better(p, points[b])) {
                best = Some(i);
            }
        }
        best.expect("at least two candidates")
    };
    let lo = first_extreme(None, |a, b| a < b);
    let hi = first_extreme(Some(lo), |a, b| a > b);
    (0..points.len()).filter(|i| *i != lo && *i != hi).collect()
}

fn combine(
    model: ModelId,
    like: &Forecast,
    point: f64,
    contributing: impl Iterator<Item = usize> + Clone,
    members: &[Forecast],
) -> Result<Forecast> {
    let lower = contributing
        .clone()
        .map(|i| members[i].lower95)
        .fold(f64::INFINITY, f64::min);
    let upper = contributing
        .map(|i| members[i].upper95)
        .fold(f64::NEG_INFINITY, f64::max);
    Forecast::clamped(model, like.cutoff, like.horizon, point, lower, upper)
}

/// Mean of the four middle member points, with the interval spanning the
/// four retained members.
pub fn trimmed_mean_combine(members: &[Forecast]) -> Result<Forecast> {
    check_members(members)?;
    let points: Vec<f64> = members.iter().map(|f| f.point).collect();
    let kept = trimmed_indices(&points);
    let point = kept.iter().map(|&i| points[i]).sum::<f64>() / kept.len() as f64;
    combine(ModelId::TrimmedMean, &members[0], point, kept.iter().copied(), members)
}

/// Weighted member mean; the interval spans members with positive weight.
pub fn weighted_mean_combine(members: &[Forecast], weights: &WeightVector) -> Result<Forecast> {
    check_members(members)?;
    let w = weights.as_slice();
    let point = members.iter().zip(w).map(|(f, w)| w * f.point).sum();
    let positive = (0..members.len()).filter(|&i| w[i] > 0.0);
    combine(ModelId::WeightedMean, &members[0], point, positive, members)
}

/// Win-share weights from validation nowcasts: `predictions[j][t]` is
/// member `j`'s nowcast of `observed[t]`. Each week's unit of credit goes
/// to the member with the smallest absolute error, split equally on ties.
pub fn compute_weights(predictions: &[Vec<f64>], observed: &[f64]) -> Result<WeightVector> {
    if predictions.len() != MEMBERS.len() {
        return Err(Error::InvalidInput(format!(
            "weights need validation nowcasts from all {} members, got {}",
            MEMBERS.len(),
            predictions.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::InvalidInput("empty validation window".into()));
    }
    if let Some(p) = predictions.iter().find(|p| p.len() != observed.len()) {
        return Err(Error::InvalidInput(format!(
            "validation nowcasts cover {} weeks, observations {}",
            p.len(),
            observed.len()
        )));
    }
    let mut wins = vec![0.0; MEMBERS.len()];
    for (t, y) in observed.iter().enumerate() {
        let errors: Vec<f64> = predictions.iter().map(|p| (p[t] - y).abs()).collect();
        if errors.iter().any(|e| !e.is_finite()) {
            return Err(Error::NonFinite(format!("validation error at position {t}")));
        }
        let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = (0..errors.len()).filter(|&j| errors[j] == best).collect();
        for j in &tied {
            wins[*j] += 1.0 / tied.len() as f64;
        }
    }
    let n = observed.len() as f64;
    let weights: Vec<f64> = wins.iter().map(|w| w / n).collect();
    WeightVector::new(weights)
}

/// Member slots of one state-week, some of which may have failed.
///
/// Each failed slot is filled with the trimmed mean of the members that
/// succeeded, relabelled with the failed member's id. Returns the filled
/// members and the ids that were replaced; errors when nothing succeeded.
pub fn fill_failed_members(slots: &[(ModelId, Option<Forecast>)]) -> Result<(Vec<Forecast>, Vec<ModelId>)> {
    let present: Vec<&Forecast> = slots.iter().filter_map(|(_, f)| f.as_ref()).collect();
    let Some(like) = present.first() else {
        return Err(Error::Estimation("every member failed".into()));
    };
    let points: Vec<f64> = present.iter().map(|f| f.point).collect();
    let kept = trimmed_indices(&points);
    let point = kept.iter().map(|&i| points[i]).sum::<f64>() / kept.len() as f64;
    let lower = kept.iter().map(|&i| present[i].lower95).fold(f64::INFINITY, f64::min);
    let upper = kept
        .iter()
        .map(|&i| present[i].upper95)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut failed = Vec::new();
    let mut members = Vec::with_capacity(slots.len());
    for (id, slot) in slots {
        match slot {
            Some(f) => members.push(f.clone()),
            None => {
                log::warn!(
                    "{id} failed for week {}; using the trimmed mean of the rest",
                    like.target
                );
                failed.push(*id);
                members.push(Forecast::clamped(*id, like.cutoff, like.horizon, point, lower, upper)?);
            }
        }
    }
    Ok((members, failed))
}

/// One row of a nowcast panel: every requested method's nowcast of one
/// state-week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastCell {
    pub state: StateId,
    pub week: WeekIndex,
    pub observed: f64,
    /// Forecasts in the panel's method order.
    pub forecasts: Vec<Forecast>,
    /// Members whose nowcast was replaced after a failure.
    pub replaced: Vec<ModelId>,
}

/// Nowcasts for every state and test week, ordered by state then week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NowcastPanel {
    pub methods: Vec<ModelId>,
    pub cells: Vec<NowcastCell>,
}

impl NowcastPanel {
    /// Checks that every cell has one forecast per method, in order, all
    /// sharing the cell's target week and cutoff.
    pub fn validate(&self) -> Result<()> {
        for c in &self.cells {
            if c.forecasts.len() != self.methods.len() {
                return Err(Error::InvalidInput(format!(
                    "{} week {}: {} forecasts for {} methods",
                    c.state,
                    c.week,
                    c.forecasts.len(),
                    self.methods.len()
                )));
            }
            for (f, m) in c.forecasts.iter().zip(&self.methods) {
                if f.model != *m || f.target != c.week || f.cutoff != c.forecasts[0].cutoff {
                    return Err(Error::InvalidInput(format!(
                        "{} week {}: forecast {} does not line up",
                        c.state, c.week, f.model
                    )));
                }
            }
        }
        Ok(())
    }

    /// Forecasts of one method for one state, in week order.
    pub fn series(&self, state: &StateId, method: ModelId) -> Vec<&Forecast> {
        let Some(j) = self.methods.iter().position(|m| *m == method) else {
            return Vec::new();
        };
        self.cells
            .iter()
            .filter(|c| &c.state == state)
            .map(|c| &c.forecasts[j])
            .collect()
    }

    pub fn observed(&self, state: &StateId) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| &c.state == state)
            .map(|c| c.observed)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn member(j: usize, point: f64) -> Forecast {
        Forecast::clamped(
            MEMBERS[j],
            WeekIndex::new(100).unwrap(),
            2,
            point,
            point - 1.0,
            point + 1.0,
        )
        .unwrap()
    }

    #[test]
    fn trimming_prefers_the_earliest_extreme() {
        assert_eq!(trimmed_indices(&[5.0, 5.0, 8.0, 9.0, 10.0, 20.0]), vec![1, 2, 3, 4]);
        assert_eq!(trimmed_indices(&[1.0; 6]), vec![2, 3, 4, 5]);
        assert_eq!(trimmed_indices(&[3.0, 1.0]), vec![0, 1]);
    }

    #[test]
    fn weight_vectors_are_validated() {
        assert!(WeightVector::new(vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0]).is_ok());
        assert!(WeightVector::new(vec![0.5, 0.6, 0.0, 0.0, 0.0, -0.1]).is_err());
        assert!(WeightVector::new(vec![0.5, 0.4, 0.0, 0.0, 0.0, 0.0]).is_err());
        assert!(WeightVector::new(vec![1.0]).is_err());
    }

    #[test]
    fn members_out_of_order_are_rejected() {
        let mut m: Vec<Forecast> = (0..6).map(|j| member(j, 1.0)).collect();
        m.swap(0, 1);
        assert!(trimmed_mean_combine(&m).is_err());
    }

    #[test]
    fn failed_members_take_the_trimmed_mean_of_the_rest() {
        let mut slots: Vec<(ModelId, Option<Forecast>)> = [1.0, 2.0, 3.0, 4.0, 100.0, 0.0]
            .iter()
            .enumerate()
            .map(|(j, p)| (MEMBERS[j], Some(member(j, *p))))
            .collect();
        slots[4].1 = None;
        let (filled, failed) = fill_failed_members(&slots).unwrap();
        assert_eq!(failed, vec![ModelId::StlMultiplicative]);
        // rest = [1,2,3,4,0]: drop 0 and 4
        assert_eq!(filled[4].point, 2.0);
        assert_eq!(filled[4].model, ModelId::StlMultiplicative);
        assert!(fill_failed_members(&[(ModelId::Sarima, None)]).is_err());
    }
}
