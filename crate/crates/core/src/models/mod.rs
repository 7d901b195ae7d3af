//! Model families: seasonal ARIMA, regression with SARIMA errors, STL
//! hybrids and vector autoregression.

mod ets;
pub(crate) mod kalman;
pub(crate) mod poly;
mod sarima;
mod sarimax;
mod search;
mod stl_model;
mod var;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::WeekIndex;
use crate::error::{Error, Result};

pub use ets::{EtsFit, SeasonalForecaster};
pub use sarima::{
    sarima_fit, sarima_forecast, sarima_loglik, FitDiagnostics, FitOptions, SarimaFit, SarimaOrder, SarimaParams,
};
pub use sarimax::{sarimax_auto, sarimax_auto_with, sarimax_forecast, score_subsets, SarimaxConfig, SarimaxFit};
pub use search::{sarima_auto, sarima_auto_with, Approximation, SearchConfig, CANDIDATE_GRID, ROOT_MARGIN};
pub use stl_model::{stl_decompose, stl_fit, stl_forecast, StlComponents, StlFit, StlMode};
pub use var::{var_auto, var_fit, var_forecast, var_param_count, VarConfig, VarFit};

/// Version tag embedded in every serialised fit.
pub const FIT_SCHEMA: &str = "nowcast.fit/1";

/// The six individual models and two ensembles, in their fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    Sarima,
    SarimaxPca,
    SarimaxPls,
    #[serde(rename = "stl_add")]
    StlAdditive,
    #[serde(rename = "stl_mult")]
    StlMultiplicative,
    VarPca,
    #[serde(rename = "ens_trimmed")]
    TrimmedMean,
    #[serde(rename = "ens_weighted")]
    WeightedMean,
}

impl ModelId {
    pub const MEMBERS: [ModelId; 6] = [
        ModelId::Sarima,
        ModelId::SarimaxPca,
        ModelId::SarimaxPls,
        ModelId::StlAdditive,
        ModelId::StlMultiplicative,
        ModelId::VarPca,
    ];
    pub const ENSEMBLES: [ModelId; 2] = [ModelId::TrimmedMean, ModelId::WeightedMean];
    pub const ALL: [ModelId; 8] = [
        ModelId::Sarima,
        ModelId::SarimaxPca,
        ModelId::SarimaxPls,
        ModelId::StlAdditive,
        ModelId::StlMultiplicative,
        ModelId::VarPca,
        ModelId::TrimmedMean,
        ModelId::WeightedMean,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelId::Sarima => "sarima",
            ModelId::SarimaxPca => "sarimax_pca",
            ModelId::SarimaxPls => "sarimax_pls",
            ModelId::StlAdditive => "stl_add",
            ModelId::StlMultiplicative => "stl_mult",
            ModelId::VarPca => "var_pca",
            ModelId::TrimmedMean => "ens_trimmed",
            ModelId::WeightedMean => "ens_weighted",
        }
    }

    pub fn is_ensemble(self) -> bool {
        matches!(self, ModelId::TrimmedMean | ModelId::WeightedMean)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown model id {s:?}")))
    }
}

/// A point nowcast with its 95% interval, on the original count scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub model: ModelId,
    /// Last week of case data the forecast used.
    pub cutoff: WeekIndex,
    pub target: WeekIndex,
    pub horizon: usize,
    pub point: f64,
    pub lower95: f64,
    pub upper95: f64,
}

impl Forecast {
    /// Builds a forecast from possibly negative or unordered values:
    /// everything is clamped at zero and the bounds are made to enclose the
    /// point.
    pub fn clamped(
        model: ModelId,
        cutoff: WeekIndex,
        horizon: usize,
        point: f64,
        lower: f64,
        upper: f64,
    ) -> Result<Self> {
        if !(point.is_finite() && lower.is_finite() && upper.is_finite()) {
            return Err(Error::NonFinite(format!(
                "{model} forecast ({lower}, {point}, {upper})"
            )));
        }
        let point = point.max(0.0);
        Ok(Forecast {
            model,
            cutoff,
            target: WeekIndex::from_offset(cutoff.offset() + horizon),
            horizon,
            point,
            lower95: lower.max(0.0).min(point),
            upper95: upper.max(point),
        })
    }
}

#[derive(Serialize)]
struct FitDocRef<'a, T> {
    schema: &'static str,
    kind: &'static str,
    fit: &'a T,
}

#[derive(Deserialize)]
struct FitDoc<T> {
    schema: String,
    kind: String,
    fit: T,
}

pub(crate) fn to_fit_json<T: Serialize>(kind: &'static str, fit: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&FitDocRef {
        schema: FIT_SCHEMA,
        kind,
        fit,
    })?)
}

pub(crate) fn from_fit_json<T: for<'de> Deserialize<'de>>(kind: &str, text: &str) -> Result<T> {
    let doc: FitDoc<T> = serde_json::from_str(text)?;
    if doc.schema != FIT_SCHEMA {
        return Err(Error::InvalidInput(format!("unsupported fit schema {:?}", doc.schema)));
    }
    if doc.kind != kind {
        return Err(Error::InvalidInput(format!(
            "expected a {kind} fit, found {:?}",
            doc.kind
        )));
    }
    Ok(doc.fit)
}
