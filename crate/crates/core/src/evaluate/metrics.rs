//! Accuracy metrics, interval coverage, risk bands and per-state error
//! features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Forecast;
use crate::stats;

/// Accuracy of one method for one state over the evaluation window. The
/// relative metrics divide by the sum of the observations in that window
/// and are missing when that sum is zero; the correlation is missing when
/// either series is constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmae: Option<f64>,
    pub r: Option<f64>,
    pub rmse: f64,
    pub rrmse: Option<f64>,
}

/// Names of the reported metrics, in column order.
pub const METRIC_NAMES: [&str; 5] = ["mae", "rmae", "r", "rmse", "rrmse"];

impl Metrics {
    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "mae" => Some(self.mae),
            "rmae" => self.rmae,
            "r" => self.r,
            "rmse" => Some(self.rmse),
            "rrmse" => self.rrmse,
            _ => None,
        }
    }
}

pub fn metrics(y: &[f64], yhat: &[f64]) -> Result<Metrics> {
    if y.len() != yhat.len() {
        return Err(Error::InvalidInput(format!(
            "{} observations against {} predictions",
            y.len(),
            yhat.len()
        )));
    }
    if y.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: y.len(),
        });
    }
    if y.iter().chain(yhat).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("metric inputs".into()));
    }
    let n = y.len() as f64;
    let mae = y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / n;
    let rmse = (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n).sqrt();
    let total: f64 = y.iter().sum();
    let relative = |v: f64| (total != 0.0).then(|| v / total);
    Ok(Metrics {
        mae,
        rmae: relative(mae),
        r: stats::pearson(y, yhat),
        rmse,
        rrmse: relative(rmse),
    })
}

/// Fraction of weeks whose observation lies inside the 95% interval.
pub fn empirical_coverage(forecasts: &[&Forecast], y: &[f64]) -> Result<f64> {
    if forecasts.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} forecasts against {} observations",
            forecasts.len(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    let inside = forecasts
        .iter()
        .zip(y)
        .filter(|(f, v)| f.lower95 <= **v && **v <= f.upper95)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLevel {
    Low,
    Medium,
    High,
}

impl RiskLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            RiskLevel::Low => "low",
            RiskLevel::Medium => "medium",
            RiskLevel::High => "high",
        }
    }
}

/// Rates per 100,000 at or above this are at least medium.
pub const MEDIUM_RISK_RATE: f64 = 100.0;
/// Rates per 100,000 above this are high.
pub const HIGH_RISK_RATE: f64 = 300.0;
const WEEKS_PER_YEAR: f64 = 52.0;

/// Band of an annual rate per 100,000 people; both cut points are medium.
pub fn classify_rate(rate: f64) -> RiskLevel {
    if rate < MEDIUM_RISK_RATE {
        RiskLevel::Low
    } else if rate <= HIGH_RISK_RATE {
        RiskLevel::Medium
    } else {
        RiskLevel::High
    }
}

pub fn classify_risk(annual_cases: u64, population: u64) -> Result<RiskLevel> {
    Ok(classify_rate(annual_rate(annual_cases as f64, 52, population)?))
}

/// Cases per 100,000 people per year from `cases` counted over `weeks`
/// weeks, scaled by 52 / weeks.
pub fn annual_rate(cases: f64, weeks: usize, population: u64) -> Result<f64> {
    if population == 0 {
        return Err(Error::InvalidInput("population must be positive".into()));
    }
    if weeks == 0 {
        return Err(Error::InvalidInput("risk needs at least one week".into()));
    }
    Ok(1e5 * cases * (WEEKS_PER_YEAR / weeks as f64) / population as f64)
}

/// Size and roughness of a case series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorFeatures {
    pub sum: f64,
    /// Sum of absolute week-on-week changes over `n * sum`; missing when
    /// the series sums to zero.
    pub volatility: Option<f64>,
}

pub fn error_features(y: &[f64]) -> Result<ErrorFeatures> {
    if y.len() < 2 {
        return Err(Error::TooShort {
            needed: 2,
            got: y.len(),
        });
    }
    let sum: f64 = y.iter().sum();
    let changes: f64 = y.windows(2).map(|w| (w[1] - w[0]).abs()).sum();
    Ok(ErrorFeatures {
        sum,
        volatility: (sum != 0.0).then(|| changes / (y.len() as f64 * sum)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateForm {
    Unlogged,
    Logged,
}

/// Simple regression of the error measure on one covariate, in whichever
/// form (raw or natural log) correlates more strongly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateCorrelation {
    pub name: String,
    pub form: CovariateForm,
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
}

fn simple_regression(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let r = stats::pearson(x, y)?;
    let (mx, my) = (stats::mean(x), stats::mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((r, slope, my - slope * mx))
}

/// Correlates a per-state error measure with each covariate. The logged
/// form is tried only when every value is positive; ties keep the
/// unlogged form. Covariates constant in both forms are skipped.
pub fn correlate_error_with_covariates(
    error: &[f64],
    covariates: &[(String, Vec<f64>)],
) -> Result<Vec<CovariateCorrelation>> {
    if error.len() < 3 {
        return Err(Error::TooShort {
            needed: 3,
            got: error.len(),
        });
    }
    let mut out = Vec::new();
    for (name, x) in covariates {
        if x.len() != error.len() {
            return Err(Error::InvalidInput(format!(
                "covariate {name} has {} values for {} states",
                x.len(),
                error.len()
            )));
        }
        let raw = simple_regression(x, error).map(|f| (CovariateForm::Unlogged, f));
        let logged = x
            .iter()
            .all(|v| *v > 0.0)
            .then(|| {
                let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
                simple_regression(&lx, error)
            })
            .flatten()
            .map(|f| (CovariateForm::Logged, f));
        let best = match (raw, logged) {
            (Some(a), Some(b)) => Some(if b.1 .0.abs() > a.1 .0.abs() { b } else { a }),
            (a, b) => a.or(b),
        };
        if let Some((form, (r, slope, intercept))) = best {
            out.push(CovariateCorrelation {
                name: name.clone(),
                form,
                r,
                slope,
                intercept,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_metrics_need_a_nonzero_total() {
        let m = metrics(&[0.0, 0.0], &[1.0, 2.0]).unwrap();
        assert_eq!((m.rmae, m.rrmse, m.r), (None, None, None));
        assert_eq!(m.mae, 1.5);
    }

    #[test]
    fn metric_inputs_are_checked() {
        assert!(metrics(&[1.0], &[1.0]).is_err());
        assert!(metrics(&[1.0, 2.0], &[1.0]).is_err());
        assert!(metrics(&[1.0, f64::NAN], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn rate_bands() {
        assert_eq!(classify_rate(99.999), RiskLevel::Low);
        assert_eq!(classify_rate(300.0), RiskLevel::Medium);
        assert_eq!(classify_rate(300.001), RiskLevel::High);
        // half a year of cases counts double
        assert_eq!(annual_rate(50.0, 26, 100_000).unwrap(), 100.0);
        assert!(annual_rate(1.0, 52, 0).is_err());
    }
}
