//! Tables and plot-ready series derived from a finished run directory.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};
use nowcast_core::evaluate::{
    read_forecasts_csv, read_metrics_csv, summarize, write_metrics_csv, write_summary_csv, EvaluationReport, MetricRow,
    FORECASTS_SCHEMA,
};
use nowcast_core::stats;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

pub const RISK_SCHEMA: &str = "# schema=nowcast.risk/1";
pub const HEATMAP_SCHEMA: &str = "# schema=nowcast.plot.heatmap/1";
pub const BOXPLOT_SCHEMA: &str = "# schema=nowcast.plot.boxplot/1";
pub const RISK_PLOT_SCHEMA: &str = "# schema=nowcast.plot.risk/1";
const DIGEST_SCHEMA: &str = "nowcast.digest/1";

fn read(run: &Path, name: &str) -> anyhow::Result<String> {
    let path = run.join(name);
    if !path.is_file() {
        bail!("run artifact {} is missing", path.display());
    }
    fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
}

/// Writes `schema` then the CSV rows.
fn write_table(path: &Path, schema: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(schema.as_bytes());
    out.push(b'\n');
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn risk_table(report: &EvaluationReport) -> Vec<Vec<String>> {
    report
        .risk
        .iter()
        .map(|r| {
            vec![
                r.state.to_string(),
                r.population.to_string(),
                r.weeks.to_string(),
                r.observed_cases.to_string(),
                r.predicted_cases.to_string(),
                r.observed_rate.to_string(),
                r.predicted_rate.to_string(),
                r.observed.as_str().to_string(),
                r.predicted.as_str().to_string(),
                r.matches().to_string(),
            ]
        })
        .collect()
}

#[derive(Serialize)]
struct Digest<'a> {
    schema: &'a str,
    methods: &'a [nowcast_core::models::ModelId],
    summary: &'a [nowcast_core::evaluate::SummaryRow],
    risk_method: Option<nowcast_core::models::ModelId>,
    risk: &'a [nowcast_core::evaluate::RiskRow],
    risk_agreement: Option<f64>,
    spatial: &'a Option<nowcast_core::evaluate::SpatialStats>,
    failures: usize,
}

pub fn cmd_report(run: &Path, format: Format, plot_data: bool, out: Option<&Path>) -> anyhow::Result<u8> {
    let report = EvaluationReport::from_json(&read(run, "report.json")?)?;
    let metrics = read_metrics_csv(&read(run, "metrics.csv")?)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run.join("report"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    match format {
        Format::Json => {
            let agreement = (!report.risk.is_empty())
                .then(|| report.risk.iter().filter(|r| r.matches()).count() as f64 / report.risk.len() as f64);
            let digest = Digest {
                schema: DIGEST_SCHEMA,
                methods: &report.methods,
                summary: &report.summary,
                risk_method: report.risk_method,
                risk: &report.risk,
                risk_agreement: agreement,
                spatial: &report.spatial,
                failures: report.failures.len(),
            };
            fs::write(out.join("digest.json"), serde_json::to_string_pretty(&digest)?)?;
        }
        Format::Csv => {
            write_metrics_csv(&metrics, fs::File::create(out.join("metrics.csv"))?)?;
            write_summary_csv(
                &summarize(&metrics, &report.methods),
                fs::File::create(out.join("summary.csv"))?,
            )?;
            write_table(
                &out.join("risk.csv"),
                RISK_SCHEMA,
                &[
                    "state",
                    "population",
                    "weeks",
                    "observed_cases",
                    "predicted_cases",
                    "observed_rate",
                    "predicted_rate",
                    "observed",
                    "predicted",
                    "match",
                ],
                &risk_table(&report),
            )?;
        }
    }
    if plot_data {
        write_plot_data(run, &out, &report, &metrics)?;
    }
    Ok(0)
}

/// Five-number summary (type 7 quartiles).
fn quartiles(v: &[f64]) -> [f64; 5] {
    [0.0, 0.25, 0.5, 0.75, 1.0].map(|p| stats::quantile(v, p))
}

fn write_plot_data(run: &Path, out: &Path, report: &EvaluationReport, metrics: &[MetricRow]) -> anyhow::Result<()> {
    // forecast against observed, one line per state, week and method
    let forecasts = read_forecasts_csv(&read(run, "forecasts.csv")?)?;
    let rows: Vec<Vec<String>> = forecasts
        .iter()
        .map(|f| {
            vec![
                f.state.clone(),
                f.week.to_string(),
                f.model.to_string(),
                f.point.to_string(),
                f.lower95.to_string(),
                f.upper95.to_string(),
                f.observed.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("plot_forecasts.csv"),
        FORECASTS_SCHEMA,
        &["state", "week", "model", "point", "lower95", "upper95", "observed"],
        &rows,
    )?;

    // relative MAE per state and method
    let rows: Vec<Vec<String>> = metrics
        .iter()
        .map(|m| vec![m.state.to_string(), m.method.to_string(), opt(m.metrics.rmae)])
        .collect();
    write_table(
        &out.join("plot_heatmap.csv"),
        HEATMAP_SCHEMA,
        &["state", "method", "rmae"],
        &rows,
    )?;

    // spread of each metric across states
    let mut rows = Vec::new();
    for &method in &report.methods {
        for name in nowcast_core::evaluate::report::summary_metric_names() {
            let v: Vec<f64> = metrics
                .iter()
                .filter(|m| m.method == method)
                .filter_map(|m| {
                    if name == "coverage" {
                        Some(m.coverage)
                    } else {
                        m.metrics.get(name)
                    }
                })
                .collect();
            if v.is_empty() {
                continue;
            }
            let mut row = vec![method.to_string(), name.to_string(), v.len().to_string()];
            row.extend(quartiles(&v).iter().map(f64::to_string));
            rows.push(row);
        }
    }
    write_table(
        &out.join("plot_boxplot.csv"),
        BOXPLOT_SCHEMA,
        &["method", "metric", "n", "q0", "q1", "q2", "q3", "q4"],
        &rows,
    )?;

    // observed and predicted risk bands
    let rows: Vec<Vec<String>> = report
        .risk
        .iter()
        .map(|r| {
            vec![
                r.state.to_string(),
                r.observed.as_str().to_string(),
                r.predicted.as_str().to_string(),
                r.matches().to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("plot_risk.csv"),
        RISK_PLOT_SCHEMA,
        &["state", "observed", "predicted", "match"],
        &rows,
    )?;
    Ok(())
}
