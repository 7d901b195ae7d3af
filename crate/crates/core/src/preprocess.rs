//! Variance-stabilising transforms, difference-order selection and column
//! standardisation.
//!
//! All statistics are computed from the slice or range handed in; nothing
//! here looks past the training window it is given.

use serde::{Deserialize, Serialize};

use crate::data::{ExogenousMatrix, TimeSeries, WeekRange, ZERO_VARIANCE_TOL};
use crate::error::{Error, Result};
use crate::stats;
use crate::stl::{stl, StlParams};

/// 5% critical value of the KPSS level-stationarity statistic.
pub const KPSS_CRITICAL_5PCT: f64 = 0.463;

/// Seasonal strength above which one seasonal difference is taken.
pub const SEASONAL_STRENGTH_THRESHOLD: f64 = 0.64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxCoxParam {
    pub lambda: f64,
}

impl BoxCoxParam {
    pub fn new(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::NonFinite("Box-Cox lambda".into()));
        }
        Ok(BoxCoxParam { lambda })
    }
}

fn forward(v: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        v.ln()
    } else {
        (v.powf(lambda) - 1.0) / lambda
    }
}

fn inverse(z: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        z.exp()
    } else {
        let base = lambda * z + 1.0;
        base.signum() * base.abs().powf(1.0 / lambda)
    }
}

pub fn box_cox(y: &TimeSeries, lambda: BoxCoxParam) -> Result<TimeSeries> {
    let values = y
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v <= 0.0 && lambda.lambda <= 0.0 {
                Err(Error::InvalidInput(format!(
                    "Box-Cox with lambda {} needs positive values, got {v} at index {i}",
                    lambda.lambda
                )))
            } else {
                Ok(forward(v, lambda.lambda))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    TimeSeries::new(y.label(), values)
}

pub fn inverse_box_cox(z: &TimeSeries, lambda: BoxCoxParam) -> Result<TimeSeries> {
    let values = z.values().iter().map(|&v| inverse(v, lambda.lambda)).collect();
    TimeSeries::new(z.label(), values)
}

/// Box-Cox transform together with the shift that makes count series with
/// zeros admissible.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCox {
    pub lambda: BoxCoxParam,
    pub shift: f64,
}

impl BoxCox {
    pub fn identity() -> Self {
        BoxCox {
            lambda: BoxCoxParam { lambda: 1.0 },
            shift: 0.0,
        }
    }

    /// Shift applied before transforming: `1 - min` when the training data
    /// contain a value at or below zero, else none.
    pub fn shift_for(train: &[f64]) -> f64 {
        let min = train.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            1.0 - min
        } else {
            0.0
        }
    }

    /// Shift rule plus Guerrero's estimate, from training data only.
    pub fn estimate(train: &[f64], season: usize) -> Result<Self> {
        let shift = Self::shift_for(train);
        let shifted: Vec<f64> = train.iter().map(|v| v + shift).collect();
        let lambda = guerrero(&shifted, season)?;
        Ok(BoxCox {
            lambda: BoxCoxParam { lambda },
            shift,
        })
    }

    pub fn with_lambda(train: &[f64], lambda: f64) -> Result<Self> {
        Ok(BoxCox {
            lambda: BoxCoxParam::new(lambda)?,
            shift: Self::shift_for(train),
        })
    }

    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        y.iter()
            .map(|&v| {
                let z = forward(v + self.shift, self.lambda.lambda);
                if z.is_finite() {
                    Ok(z)
                } else {
                    Err(Error::InvalidInput(format!(
                        "value {v} outside the Box-Cox domain (lambda {}, shift {})",
                        self.lambda.lambda, self.shift
                    )))
                }
            })
            .collect()
    }

    /// Back-transform one value and remove the shift. Not clamped.
    pub fn inverse_value(&self, z: f64) -> f64 {
        inverse(z, self.lambda.lambda) - self.shift
    }
}

/// Guerrero's coefficient-of-variation objective for one lambda.
fn guerrero_cv(x: &[f64], period: usize, lambda: f64) -> Option<f64> {
    let n_blocks = x.len() / period;
    let start = x.len() - n_blocks * period;
    let ratios: Vec<f64> = x[start..]
        .chunks(period)
        .map(|block| stats::sample_sd(block) / stats::mean(block).powf(1.0 - lambda))
        .collect();
    let m = stats::mean(&ratios);
    if !(m.is_finite() && m > 0.0) {
        return None;
    }
    let cv = stats::sample_sd(&ratios) / m;
    cv.is_finite().then_some(cv)
}

fn guerrero(x: &[f64], season: usize) -> Result<f64> {
    let period = season.max(2);
    if x.len() < 2 * period {
        return Err(Error::TooShort {
            needed: 2 * period,
            got: x.len(),
        });
    }
    if x.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidInput("lambda estimation needs positive values".into()));
    }
    let mut best: Option<(f64, f64)> = None;
    for step in 0..=100 {
        let lambda = step as f64 / 100.0;
        if let Some(cv) = guerrero_cv(x, period, lambda) {
            if best.is_none_or(|(_, b)| cv < b) {
                best = Some((lambda, cv));
            }
        }
    }
    Ok(best.map_or(1.0, |(l, _)| l))
}

/// Guerrero's lambda on the grid `0, 0.01, ..., 1`, after the zero shift.
/// A series with no scale variation across seasonal blocks gets 1.
pub fn estimate_lambda(y: &TimeSeries, season_length: usize) -> Result<BoxCoxParam> {
    Ok(BoxCox::estimate(y.values(), season_length)?.lambda)
}

/// KPSS statistic for level stationarity with a Bartlett-kernel long-run
/// variance and bandwidth `floor(4 (n/100)^(1/4))`. A constant series
/// scores 0.
pub fn kpss_level_statistic(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let m = stats::mean(x);
    let e: Vec<f64> = x.iter().map(|v| v - m).collect();
    let nf = n as f64;
    let lags = (4.0 * (nf / 100.0).powf(0.25)).floor() as usize;
    let mut s2 = e.iter().map(|v| v * v).sum::<f64>() / nf;
    for l in 1..=lags.min(n - 1) {
        let w = 1.0 - l as f64 / (lags as f64 + 1.0);
        let cov: f64 = (l..n).map(|t| e[t] * e[t - l]).sum::<f64>() / nf;
        s2 += 2.0 * w * cov;
    }
    if s2 <= f64::EPSILON * m.abs().max(1.0) {
        return 0.0;
    }
    let mut partial = 0.0;
    let mut num = 0.0;
    for v in &e {
        partial += v;
        num += partial * partial;
    }
    num / (nf * nf * s2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifferenceOrders {
    pub d: usize,
    pub seasonal_d: usize,
}

/// Applies `(1 - B)^d (1 - B^season)^seasonal_d`.
pub fn difference(x: &[f64], d: usize, seasonal_d: usize, season: usize) -> Vec<f64> {
    let mut out = x.to_vec();
    for _ in 0..seasonal_d {
        out = (season..out.len()).map(|t| out[t] - out[t - season]).collect();
    }
    for _ in 0..d {
        out = (1..out.len()).map(|t| out[t] - out[t - 1]).collect();
    }
    out
}

/// Seasonal strength of an STL decomposition with the default weekly
/// parameters scaled to `season`.
pub fn seasonal_strength(x: &[f64], season: usize) -> Result<f64> {
    Ok(stl(x, &StlParams::for_period(season))?.seasonal_strength())
}

/// Seasonal difference first (STL strength test), then the smallest
/// ordinary difference that passes KPSS.
pub fn difference_orders(x: &[f64], season: usize) -> Result<DifferenceOrders> {
    let needed = 3 * season.max(1);
    if x.len() < needed.max(4) {
        return Err(Error::TooShort {
            needed: needed.max(4),
            got: x.len(),
        });
    }
    let seasonal_d = if season > 1 && seasonal_strength(x, season)? > SEASONAL_STRENGTH_THRESHOLD {
        1
    } else {
        0
    };
    let base = difference(x, 0, seasonal_d, season);
    for d in 0..2 {
        if kpss_level_statistic(&difference(&base, d, 0, season)) < KPSS_CRITICAL_5PCT {
            return Ok(DifferenceOrders { d, seasonal_d });
        }
    }
    Ok(DifferenceOrders { d: 2, seasonal_d })
}

pub fn select_difference_orders(y: &TimeSeries, season_length: usize) -> Result<DifferenceOrders> {
    difference_orders(y.values(), season_length)
}

/// Training-range centres and scales for each named column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub names: Vec<String>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(exog: &ExogenousMatrix, train: WeekRange) -> Result<Self> {
        if train.last as usize > exog.n_weeks() {
            return Err(Error::InvalidInput(format!(
                "training range {train} past horizon {}",
                exog.n_weeks()
            )));
        }
        let mut names = Vec::new();
        let mut centers = Vec::new();
        let mut scales = Vec::new();
        for (name, col) in exog.columns() {
            let block = &col[train.offsets()];
            let var = stats::sample_variance(block);
            if var < ZERO_VARIANCE_TOL {
                return Err(Error::InvalidInput(format!("column {name} has zero training variance")));
            }
            names.push(name.to_string());
            centers.push(stats::mean(block));
            scales.push(var.sqrt());
        }
        Ok(Standardizer { names, centers, scales })
    }

    fn check_names(&self, exog: &ExogenousMatrix) -> Result<()> {
        if exog.names() != self.names.as_slice() {
            return Err(Error::InvalidInput(
                "variable set differs from the one standardised".into(),
            ));
        }
        Ok(())
    }

    pub fn transform(&self, exog: &ExogenousMatrix) -> Result<ExogenousMatrix> {
        self.check_names(exog)?;
        let mut out = ExogenousMatrix::new(exog.n_weeks());
        for (j, (name, col)) in exog.columns().enumerate() {
            let (c, s) = (self.centers[j], self.scales[j]);
            out.insert(name, col.iter().map(|v| (v - c) / s).collect())?;
        }
        Ok(out)
    }

    pub fn inverse(&self, z: &ExogenousMatrix) -> Result<ExogenousMatrix> {
        self.check_names(z)?;
        let mut out = ExogenousMatrix::new(z.n_weeks());
        for (j, (name, col)) in z.columns().enumerate() {
            let (c, s) = (self.centers[j], self.scales[j]);
            out.insert(name, col.iter().map(|v| v * s + c).collect())?;
        }
        Ok(out)
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.centers.iter().zip(&self.scales))
            .map(|(v, (c, s))| (v - c) / s)
            .collect()
    }
}

/// Standardises every column with its training-range mean and sample sd.
pub fn standardize_columns(exog: &ExogenousMatrix, train: WeekRange) -> Result<(ExogenousMatrix, Standardizer)> {
    let st = Standardizer::fit(exog, train)?;
    Ok((st.transform(exog)?, st))
}
