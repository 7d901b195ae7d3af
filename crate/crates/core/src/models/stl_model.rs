//! STL hybrids: the seasonal component is carried forward by exponential
//! smoothing and the seasonally adjusted series by an automatically
//! selected SARIMA model.
//!
//! The multiplicative variant decomposes `ln(y + shift)` additively, so
//! its components multiply back to the shifted series.

use serde::{Deserialize, Serialize};

use super::ets::SeasonalForecaster;
use super::sarima::{forecast_paths, FitOptions, SarimaFit};
use super::search::{sarima_auto_with, SearchConfig};
use super::{Forecast, ModelId};
use crate::error::{Error, Result};
use crate::preprocess::BoxCox;
use crate::stats::Z_975;
use crate::stl::{stl, StlParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StlMode {
    Additive,
    Multiplicative,
}

impl StlMode {
    pub fn model_id(self) -> ModelId {
        match self {
            StlMode::Additive => ModelId::StlAdditive,
            StlMode::Multiplicative => ModelId::StlMultiplicative,
        }
    }
}

/// Trend, seasonal and remainder on the scale of `y`: they add up to `y`
/// (additive) or multiply to `y + shift` (multiplicative).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlComponents {
    pub mode: StlMode,
    pub params: StlParams,
    pub shift: f64,
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub remainder: Vec<f64>,
}

impl StlComponents {
    /// Recombines the components; equals the decomposed input.
    pub fn reconstruct(&self) -> Vec<f64> {
        let parts = self.trend.iter().zip(&self.seasonal).zip(&self.remainder);
        match self.mode {
            StlMode::Additive => parts.map(|((t, s), r)| t + s + r).collect(),
            StlMode::Multiplicative => parts.map(|((t, s), r)| t * s * r - self.shift).collect(),
        }
    }
}

/// Working-scale series and its additive decomposition.
struct Decomposed {
    seasonal: Vec<f64>,
    adjusted: Vec<f64>,
    components: StlComponents,
}

fn working_scale(y: &[f64], mode: StlMode, shift: f64) -> Result<Vec<f64>> {
    match mode {
        StlMode::Additive => Ok(y.to_vec()),
        StlMode::Multiplicative => y
            .iter()
            .map(|v| {
                let s = v + shift;
                if s > 0.0 {
                    Ok(s.ln())
                } else {
                    Err(Error::InvalidInput(format!(
                        "multiplicative decomposition needs positive values, got {v} with shift {shift}"
                    )))
                }
            })
            .collect(),
    }
}

fn decompose(y: &[f64], season: usize, mode: StlMode, shift: f64) -> Result<Decomposed> {
    let params = StlParams::for_period(season);
    let x = working_scale(y, mode, shift)?;
    let d = stl(&x, &params)?;
    let adjusted: Vec<f64> = d.trend.iter().zip(&d.remainder).map(|(t, r)| t + r).collect();
    let components = match mode {
        StlMode::Additive => StlComponents {
            mode,
            params,
            shift: 0.0,
            trend: d.trend,
            seasonal: d.seasonal.clone(),
            remainder: d.remainder,
        },
        StlMode::Multiplicative => {
            let exp = |v: &[f64]| -> Vec<f64> { v.iter().map(|c| c.exp()).collect() };
            StlComponents {
                mode,
                params,
                shift,
                trend: exp(&d.trend),
                seasonal: exp(&d.seasonal),
                remainder: exp(&d.remainder),
            }
        }
    };
    Ok(Decomposed {
        seasonal: d.seasonal,
        adjusted,
        components,
    })
}

fn shift_for(y: &[f64], mode: StlMode) -> f64 {
    match mode {
        StlMode::Additive => 0.0,
        StlMode::Multiplicative => BoxCox::shift_for(y),
    }
}

/// STL decomposition with the weekly parameter set for `season`.
pub fn stl_decompose(y: &[f64], season: usize, mode: StlMode) -> Result<StlComponents> {
    Ok(decompose(y, season, mode, shift_for(y, mode))?.components)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StlFit {
    pub components: StlComponents,
    pub seasonal_model: SeasonalForecaster,
    /// SARIMA fit of the seasonally adjusted working-scale series, with the
    /// identity transform.
    pub adjusted: SarimaFit,
}

impl StlFit {
    pub fn mode(&self) -> StlMode {
        self.components.mode
    }

    fn season(&self) -> usize {
        self.components.params.period
    }

    /// Decomposes a longer window again and re-filters the adjusted series
    /// with the existing SARIMA parameters.
    pub fn extend(&self, y: &[f64]) -> Result<StlFit> {
        let shift = self.components.shift.max(shift_for(y, self.mode()));
        let d = decompose(y, self.season(), self.mode(), shift)?;
        Ok(StlFit {
            seasonal_model: SeasonalForecaster::fit(&d.seasonal, self.season())?,
            adjusted: self.adjusted.extend(&d.adjusted)?,
            components: d.components,
        })
    }

    /// As [`StlFit::extend`] but re-estimates the SARIMA parameters.
    pub fn refit(&self, y: &[f64], options: &FitOptions) -> Result<StlFit> {
        let shift = self.components.shift.max(shift_for(y, self.mode()));
        let d = decompose(y, self.season(), self.mode(), shift)?;
        Ok(StlFit {
            seasonal_model: SeasonalForecaster::fit(&d.seasonal, self.season())?,
            adjusted: self.adjusted.refit(&d.adjusted, options)?,
            components: d.components,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        super::to_fit_json("stl", self)
    }

    pub fn from_json(text: &str) -> Result<StlFit> {
        super::from_fit_json("stl", text)
    }
}

/// Decomposes `y`, fits the seasonal forecaster and searches SARIMA orders
/// for the seasonally adjusted series.
pub fn stl_fit(y: &[f64], season: usize, mode: StlMode, search: &SearchConfig) -> Result<StlFit> {
    let d = decompose(y, season, mode, shift_for(y, mode))?;
    let adjusted = sarima_auto_with(&d.adjusted, season, Some(BoxCox::identity()), search)?;
    Ok(StlFit {
        seasonal_model: SeasonalForecaster::fit(&d.seasonal, season)?,
        adjusted,
        components: d.components,
    })
}

/// Seasonal forecast plus the adjusted-series forecast, with the interval
/// taken from the SARIMA variance and mapped back to the count scale.
pub fn stl_forecast(fit: &StlFit, h: usize) -> Result<Forecast> {
    let a = &fit.adjusted;
    let paths = forecast_paths(&a.order, &a.params, &a.history, &[], &[], a.params.mean(), h)?;
    let mean = paths.means[h - 1];
    let sd = paths.variances[h - 1].max(0.0).sqrt();
    let seasonal = fit.seasonal_model.forecast(h);
    // the adjusted fit works on its own transformed scale
    let back = |v: f64| {
        let v = a.transform.inverse_value(v) + seasonal;
        match fit.mode() {
            StlMode::Additive => v,
            StlMode::Multiplicative => v.exp() - fit.components.shift,
        }
    };
    Forecast::clamped(
        fit.mode().model_id(),
        a.cutoff(),
        h,
        back(mean),
        back(mean - Z_975 * sd),
        back(mean + Z_975 * sd),
    )
}
