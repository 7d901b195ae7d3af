//! Evaluation report: per-state accuracy, summary rows, risk bands, error
//! features and spatial analysis, with JSON and CSV writers.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::backtest::{BacktestConfig, BacktestOutcome, FailureEvent, ModelChoice, SplitSpec};
use super::metrics::{
    annual_rate, classify_rate, correlate_error_with_covariates, empirical_coverage, error_features, metrics,
    CovariateCorrelation, ErrorFeatures, Metrics, RiskLevel, METRIC_NAMES,
};
use super::spatial::{morans_i, MoranTest, MORAN_PERMUTATIONS, MORAN_SEED};
use crate::data::{PanelDataset, StateId};
use crate::ensemble::{NowcastPanel, WeightVector};
use crate::error::{Error, Result};
use crate::models::ModelId;
use crate::stats;

pub const REPORT_SCHEMA: &str = "nowcast.report/1";
pub const FORECASTS_SCHEMA: &str = "# schema=nowcast.forecasts/1";
pub const METRICS_SCHEMA: &str = "# schema=nowcast.metrics/1";
pub const SUMMARY_SCHEMA: &str = "# schema=nowcast.summary/1";
/// Risk is judged on at most this many test weeks.
pub const RISK_WINDOW_WEEKS: usize = 52;

/// Accuracy of one method for one state over the test weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub state: StateId,
    pub method: ModelId,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub coverage: f64,
}

/// Spread of one metric of one method across states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: ModelId,
    pub metric: String,
    /// States with a defined value.
    pub n: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub mean: f64,
    /// Sample standard deviation; missing for a single state.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub state: StateId,
    pub population: u64,
    pub weeks: usize,
    pub observed_cases: f64,
    pub predicted_cases: f64,
    pub observed_rate: f64,
    pub predicted_rate: f64,
    pub observed: RiskLevel,
    pub predicted: RiskLevel,
}

impl RiskRow {
    pub fn matches(&self) -> bool {
        self.observed == self.predicted
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub state: StateId,
    #[serde(flatten)]
    pub features: ErrorFeatures,
}

/// Spatial and covariate analysis of one method's relative MAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialStats {
    pub method: ModelId,
    /// Missing when the statistic is undefined (constant errors, no edges,
    /// fewer than three states).
    pub moran: Option<MoranTest>,
    pub correlations: Vec<CovariateCorrelation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema: String,
    pub split: SplitSpec,
    pub config: BacktestConfig,
    pub methods: Vec<ModelId>,
    pub metrics: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    pub weights: BTreeMap<StateId, WeightVector>,
    /// Method whose nowcasts set the predicted risk band.
    pub risk_method: Option<ModelId>,
    pub risk: Vec<RiskRow>,
    pub features: Vec<FeatureRow>,
    pub spatial: Option<SpatialStats>,
    pub failures: Vec<FailureEvent>,
    pub choices: Vec<ModelChoice>,
    /// Invocation details supplied by the caller, kept verbatim.
    #[serde(default)]
    pub run: Option<serde_json::Value>,
}

/// Extra knobs for report assembly.
#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub permutations: usize,
    pub seed: u64,
    /// Additional per-state covariates to correlate with the error.
    pub covariates: Vec<(String, BTreeMap<StateId, f64>)>,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            permutations: MORAN_PERMUTATIONS,
            seed: MORAN_SEED,
            covariates: Vec::new(),
        }
    }
}

/// The trimmed mean when present, else the first method.
fn reference_method(methods: &[ModelId]) -> Option<ModelId> {
    methods
        .iter()
        .copied()
        .find(|m| *m == ModelId::TrimmedMean)
        .or_else(|| methods.first().copied())
}

pub fn metric_rows(panel: &NowcastPanel, states: &[&StateId]) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    for state in states {
        let y = panel.observed(state);
        for &method in &panel.methods {
            let f = panel.series(state, method);
            let yhat: Vec<f64> = f.iter().map(|f| f.point).collect();
            rows.push(MetricRow {
                state: (*state).clone(),
                method,
                metrics: metrics(&y, &yhat)?,
                coverage: empirical_coverage(&f, &y)?,
            });
        }
    }
    Ok(rows)
}

fn metric_value(row: &MetricRow, name: &str) -> Option<f64> {
    if name == "coverage" {
        Some(row.coverage)
    } else {
        row.metrics.get(name)
    }
}

/// Summary names in column order: the five metrics and coverage.
pub fn summary_metric_names() -> impl Iterator<Item = &'static str> {
    METRIC_NAMES.into_iter().chain(["coverage"])
}

/// Min, median, max, mean and sd across states, per method and metric.
pub fn summarize(rows: &[MetricRow], methods: &[ModelId]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &method in methods {
        for name in summary_metric_names() {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method)
                .filter_map(|r| metric_value(r, name))
                .collect();
            if v.is_empty() {
                continue;
            }
            out.push(SummaryRow {
                method,
                metric: name.to_string(),
                n: v.len(),
                min: stats::quantile(&v, 0.0),
                median: stats::quantile(&v, 0.5),
                max: stats::quantile(&v, 1.0),
                mean: stats::mean(&v),
                sd: (v.len() > 1).then(|| stats::sample_sd(&v)),
            });
        }
    }
    out
}

/// Observed and predicted bands over the first test weeks.
pub fn risk_rows(panel: &NowcastPanel, dataset: &PanelDataset, method: ModelId) -> Result<Vec<RiskRow>> {
    let mut rows = Vec::new();
    for state in dataset.state_ids() {
        let y = panel.observed(state);
        if y.is_empty() {
            continue;
        }
        let f = panel.series(state, method);
        let weeks = y.len().min(RISK_WINDOW_WEEKS);
        let population = dataset
            .population(state)
            .ok_or_else(|| Error::InvalidInput(format!("no population for {state}")))?;
        let observed_cases: f64 = y[..weeks].iter().sum();
        let predicted_cases: f64 = f[..weeks].iter().map(|f| f.point).sum();
        let observed_rate = annual_rate(observed_cases, weeks, population)?;
        let predicted_rate = annual_rate(predicted_cases, weeks, population)?;
        rows.push(RiskRow {
            state: state.clone(),
            population,
            weeks,
            observed_cases,
            predicted_cases,
            observed_rate,
            predicted_rate,
            observed: classify_rate(observed_rate),
            predicted: classify_rate(predicted_rate),
        });
    }
    Ok(rows)
}

fn spatial_stats(
    dataset: &PanelDataset,
    rows: &[MetricRow],
    features: &[FeatureRow],
    method: ModelId,
    options: &ReportOptions,
) -> Result<SpatialStats> {
    let error: BTreeMap<&StateId, f64> = rows
        .iter()
        .filter(|r| r.method == method)
        .filter_map(|r| Some((&r.state, r.metrics.rmae?)))
        .collect();
    let states: Vec<&StateId> = dataset.state_ids().filter(|s| error.contains_key(s)).collect();
    let index: BTreeMap<&StateId, usize> = states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let values: Vec<f64> = states.iter().map(|s| error[s]).collect();
    let edges: Vec<(usize, usize)> = dataset
        .edges()
        .iter()
        .filter_map(|(a, b)| Some((*index.get(a)?, *index.get(b)?)))
        .collect();
    let moran = morans_i(&values, &edges, options.permutations, options.seed)
        .map_err(|e| log::info!("Moran's I skipped: {e}"))
        .ok();

    let feature: BTreeMap<&StateId, &ErrorFeatures> = features.iter().map(|f| (&f.state, &f.features)).collect();
    let mut tables: Vec<(String, BTreeMap<&StateId, f64>)> = vec![
        (
            "volatility".into(),
            feature.iter().filter_map(|(s, f)| Some((*s, f.volatility?))).collect(),
        ),
        ("sum".into(), feature.iter().map(|(s, f)| (*s, f.sum)).collect()),
    ];
    for (name, values) in &options.covariates {
        tables.push((name.clone(), values.iter().map(|(s, v)| (s, *v)).collect()));
    }
    let mut correlations = Vec::new();
    for (name, table) in tables {
        let shared: Vec<&StateId> = states.iter().copied().filter(|s| table.contains_key(s)).collect();
        if shared.len() < 3 {
            continue;
        }
        let e: Vec<f64> = shared.iter().map(|s| error[s]).collect();
        let x: Vec<f64> = shared.iter().map(|s| table[s]).collect();
        correlations.extend(correlate_error_with_covariates(&e, &[(name, x)])?);
    }
    Ok(SpatialStats {
        method,
        moran,
        correlations,
    })
}

/// Assembles the report of a finished backtest.
pub fn build_report(
    dataset: &PanelDataset,
    split: &SplitSpec,
    config: &BacktestConfig,
    outcome: &BacktestOutcome,
    options: &ReportOptions,
) -> Result<EvaluationReport> {
    let panel = &outcome.panel;
    panel.validate()?;
    let states: Vec<&StateId> = dataset.state_ids().collect();
    let metrics = metric_rows(panel, &states)?;
    let summary = summarize(&metrics, &panel.methods);
    let risk_method = reference_method(&panel.methods);
    let risk = match risk_method {
        Some(m) => risk_rows(panel, dataset, m)?,
        None => Vec::new(),
    };
    let features = dataset
        .states()
        .map(|(id, s)| {
            Ok(FeatureRow {
                state: id.clone(),
                features: error_features(s.cases.values())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let spatial = risk_method
        .map(|m| spatial_stats(dataset, &metrics, &features, m, options))
        .transpose()?;
    Ok(EvaluationReport {
        schema: REPORT_SCHEMA.to_string(),
        split: *split,
        config: config.clone(),
        methods: panel.methods.clone(),
        metrics,
        summary,
        weights: outcome.weights.clone(),
        risk_method,
        risk,
        features,
        spatial,
        failures: outcome.failures.clone(),
        choices: outcome.choices.clone(),
        run: None,
    })
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: EvaluationReport = serde_json::from_str(text)?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::InvalidInput(format!(
                "unsupported report schema {:?}, expected {REPORT_SCHEMA:?}",
                report.schema
            )));
        }
        Ok(report)
    }

    /// Metric of one state and method.
    pub fn metric(&self, state: &StateId, method: ModelId) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| &r.state == state && r.method == method)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: e,
    }
}

/// `state,method,mae,rmae,r,rmse,rrmse,coverage` after the schema line.
pub fn write_metrics_csv<W: Write>(rows: &[MetricRow], mut out: W) -> Result<()> {
    writeln!(out, "{METRICS_SCHEMA}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "method", "mae", "rmae", "r", "rmse", "rrmse", "coverage"])?;
    for r in rows {
        let m = &r.metrics;
        w.write_record([
            r.state.to_string(),
            r.method.to_string(),
            m.mae.to_string(),
            opt(m.rmae),
            opt(m.r),
            m.rmse.to_string(),
            opt(m.rrmse),
            r.coverage.to_string(),
        ])?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Reads a metrics CSV written by [`write_metrics_csv`].
pub fn read_metrics_csv(text: &str) -> Result<Vec<MetricRow>> {
    let body = text
        .strip_prefix(METRICS_SCHEMA)
        .ok_or_else(|| Error::InvalidInput(format!("metrics table must start with {METRICS_SCHEMA:?}")))?;
    let mut r = csv::Reader::from_reader(body.trim_start().as_bytes());
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| Error::InvalidInput(format!("bad number {s:?} in metrics table")))
        }
    };
    let need = |v: Option<f64>| v.ok_or_else(|| Error::InvalidInput("missing required metric".into()));
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push(MetricRow {
            state: StateId::new(&rec[0])?,
            method: rec[1].parse()?,
            metrics: Metrics {
                mae: need(parse(&rec[2])?)?,
                rmae: parse(&rec[3])?,
                r: parse(&rec[4])?,
                rmse: need(parse(&rec[5])?)?,
                rrmse: parse(&rec[6])?,
            },
            coverage: need(parse(&rec[7])?)?,
        });
    }
    Ok(rows)
}

/// `method,metric,n,min,median,max,mean,sd` after the schema line.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], mut out: W) -> Result<()> {
    writeln!(out, "{SUMMARY_SCHEMA}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "metric", "n", "min", "median", "max", "mean", "sd"])?;
    for r in rows {
        w.write_record([
            r.method.to_string(),
            r.metric.clone(),
            r.n.to_string(),
            r.min.to_string(),
            r.median.to_string(),
            r.max.to_string(),
            r.mean.to_string(),
            opt(r.sd),
        ])?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// `state,week,model,point,lower95,upper95,observed` after the schema
/// line, in state, week and method order.
pub fn write_forecasts_csv<W: Write>(panel: &NowcastPanel, mut out: W) -> Result<()> {
    writeln!(out, "{FORECASTS_SCHEMA}").map_err(io_err)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["state", "week", "model", "point", "lower95", "upper95", "observed"])?;
    for c in &panel.cells {
        for f in &c.forecasts {
            w.write_record([
                c.state.to_string(),
                c.week.ordinal().to_string(),
                f.model.to_string(),
                f.point.to_string(),
                f.lower95.to_string(),
                f.upper95.to_string(),
                c.observed.to_string(),
            ])?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// One line of a forecasts CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub state: String,
    pub week: u32,
    pub model: ModelId,
    pub point: f64,
    pub lower95: f64,
    pub upper95: f64,
    pub observed: f64,
}

pub fn read_forecasts_csv(text: &str) -> Result<Vec<ForecastRecord>> {
    let body = text
        .strip_prefix(FORECASTS_SCHEMA)
        .ok_or_else(|| Error::InvalidInput(format!("forecasts table must start with {FORECASTS_SCHEMA:?}")))?;
    let mut r = csv::Reader::from_reader(body.trim_start().as_bytes());
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}
