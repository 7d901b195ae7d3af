//! Backtesting, accuracy metrics and the evaluation report.

pub mod backtest;
pub mod metrics;
pub mod report;
pub mod spatial;

pub use backtest::{run_backtest, BacktestConfig, BacktestOutcome, FailureEvent, ModelChoice, SplitSpec};
pub use metrics::{
    annual_rate, classify_rate, classify_risk, correlate_error_with_covariates, empirical_coverage, error_features,
    metrics, CovariateCorrelation, CovariateForm, ErrorFeatures, Metrics, RiskLevel, METRIC_NAMES,
};
pub use report::{
    build_report, read_forecasts_csv, read_metrics_csv, summarize, write_forecasts_csv, write_metrics_csv,
    write_summary_csv, EvaluationReport, FeatureRow, ForecastRecord, MetricRow, ReportOptions, RiskRow, SpatialStats,
    SummaryRow, FORECASTS_SCHEMA, METRICS_SCHEMA, REPORT_SCHEMA, RISK_WINDOW_WEEKS, SUMMARY_SCHEMA,
};
pub use spatial::{morans_i, morans_i_exact_p, morans_i_statistic, MoranTest, MORAN_PERMUTATIONS, MORAN_SEED};
