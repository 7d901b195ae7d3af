//! `nowcastd`: synthesize panels, run the nowcasting backtest and derive
//! report tables.
//!
//! Exit codes: 0 on success, 1 on a fatal error, 2 when the backtest
//! finished but some model fits failed and were filled in.

mod config;
mod report;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use nowcast_core::data::{synthesize_panel, write_panel, PanelFiles};
use nowcast_core::evaluate::{build_report, run_backtest, write_forecasts_csv, write_metrics_csv, write_summary_csv};
use nowcast_core::models::ModelId;

use config::{Grid, RunConfig, SplitArgs, SynthSource};

#[derive(Debug, Parser)]
#[command(
    name = "nowcastd",
    version,
    about = "Weekly case nowcasting from multi-stream panels"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the four CSVs of a synthetic panel.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 27)]
        states: usize,
        #[arg(long, default_value_t = 342)]
        weeks: usize,
        #[arg(long, default_value_t = 52)]
        season: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the rolling nowcast backtest and write forecasts, metrics and
    /// the report.
    Backtest(Box<BacktestArgs>),
    /// Derive tables (and plot-ready series) from a finished run.
    Report {
        /// Output directory of a backtest run.
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = report::Format::Csv)]
        format: report::Format,
        /// Also write tidy series for the standard charts.
        #[arg(long)]
        plot_data: bool,
        /// Where to write; defaults to `<run>/report`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, clap::Args)]
struct BacktestArgs {
    /// JSON run configuration; flags given alongside override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding cases.csv, exog.csv, adjacency.csv and
    /// population.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    cases: Option<PathBuf>,
    #[arg(long)]
    exog: Option<PathBuf>,
    #[arg(long)]
    adjacency: Option<PathBuf>,
    #[arg(long)]
    population: Option<PathBuf>,
    /// Use a synthetic panel with this seed instead of files.
    #[arg(long)]
    synth_seed: Option<u64>,
    #[arg(long, default_value_t = 27)]
    synth_states: usize,
    #[arg(long, default_value_t = 342)]
    synth_weeks: usize,
    #[arg(long)]
    season: Option<usize>,
    #[command(flatten)]
    split: SplitArgs,
    /// Comma-separated model ids (sarima, sarimax_pca, sarimax_pls,
    /// stl_add, stl_mult, var_pca).
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<ModelId>>,
    /// Comma-separated ensemble ids (ens_trimmed, ens_weighted); pass an
    /// empty value for none.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    ensembles: Option<Vec<ModelId>>,
    /// States processed concurrently.
    #[arg(long, env = "NOWCASTD_JOBS")]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    grid: Option<Grid>,
    /// Search regression orders per score subset (slow).
    #[arg(long)]
    nested_sarimax: bool,
    /// Permutations for the spatial autocorrelation test.
    #[arg(long)]
    permutations: Option<usize>,
}

impl BacktestArgs {
    fn files(&self) -> anyhow::Result<Option<PanelFiles>> {
        let any = self.cases.is_some() || self.exog.is_some() || self.adjacency.is_some() || self.population.is_some();
        match (&self.data, any) {
            (Some(dir), _) => {
                let mut f = PanelFiles::in_dir(dir);
                f.cases = self.cases.clone().unwrap_or(f.cases);
                f.exog = self.exog.clone().unwrap_or(f.exog);
                f.adjacency = self.adjacency.clone().unwrap_or(f.adjacency);
                f.population = self.population.clone().unwrap_or(f.population);
                Ok(Some(f))
            }
            (None, true) => {
                let need = |p: &Option<PathBuf>, name: &str| {
                    p.clone()
                        .with_context(|| format!("--{name} is required when giving files one by one"))
                };
                Ok(Some(PanelFiles {
                    cases: need(&self.cases, "cases")?,
                    exog: need(&self.exog, "exog")?,
                    adjacency: need(&self.adjacency, "adjacency")?,
                    population: need(&self.population, "population")?,
                }))
            }
            (None, false) => Ok(None),
        }
    }

    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig {
                files: None,
                synth: None,
                season: 52,
                split: None,
                models: ModelId::MEMBERS.to_vec(),
                ensembles: None,
                jobs: 0,
                out: PathBuf::from("nowcast-run"),
                seed: nowcast_core::evaluate::MORAN_SEED,
                grid: Grid::Full,
                nested_sarimax: false,
                permutations: nowcast_core::evaluate::MORAN_PERMUTATIONS,
            },
        };
        if let Some(f) = self.files()? {
            c.files = Some(f);
            c.synth = None;
        }
        if let Some(seed) = self.synth_seed {
            c.synth = Some(SynthSource {
                seed,
                states: self.synth_states,
                weeks: self.synth_weeks,
            });
            c.files = None;
        }
        c.season = self.season.unwrap_or(c.season);
        if let Some(m) = &self.models {
            c.models = m.clone();
        }
        if let Some(e) = &self.ensembles {
            c.ensembles = Some(e.clone());
        }
        c.jobs = self.jobs.unwrap_or(c.jobs);
        c.out = self.out.clone().unwrap_or(c.out);
        c.seed = self.seed.unwrap_or(c.seed);
        c.grid = self.grid.unwrap_or(c.grid);
        c.nested_sarimax |= self.nested_sarimax;
        c.permutations = self.permutations.unwrap_or(c.permutations);
        c.validate()?;
        Ok(c)
    }
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn cmd_synth(seed: u64, states: usize, weeks: usize, season: usize, out: &Path) -> anyhow::Result<u8> {
    let panel = synthesize_panel(seed, states, weeks, season)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_panel(&panel, &PanelFiles::in_dir(out))?;
    log::info!("wrote a {states}-state, {weeks}-week panel to {}", out.display());
    Ok(0)
}

fn cmd_backtest(args: &BacktestArgs) -> anyhow::Result<u8> {
    let run = args.resolve()?;
    let panel = run.load_panel()?;
    let mut split = run.split(panel.n_weeks())?;
    if !args.split.is_empty() {
        split = args.split.apply(split)?;
        split.validate(panel.n_weeks())?;
    }
    let mut run = run;
    run.split = Some(split);
    let config = run.backtest_config();

    let jobs = match run.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        j => j,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    log::info!(
        "backtesting {} states over weeks {} with {} worker(s)",
        panel.n_states(),
        split.test,
        jobs
    );
    let outcome = pool.install(|| run_backtest(&panel, &split, &config))?;
    let mut report = pool.install(|| build_report(&panel, &split, &config, &outcome, &run.report_options()))?;
    report.run = Some(serde_json::to_value(&run)?);

    fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    write_forecasts_csv(&outcome.panel, create(&run.out.join("forecasts.csv"))?)?;
    write_metrics_csv(&report.metrics, create(&run.out.join("metrics.csv"))?)?;
    write_summary_csv(&report.summary, create(&run.out.join("summary.csv"))?)?;
    fs::write(run.out.join("report.json"), report.to_json()?)?;
    fs::write(run.out.join("config.json"), serde_json::to_string_pretty(&run)?)?;

    if outcome.failures.is_empty() {
        Ok(0)
    } else {
        log::warn!(
            "{} model fits failed and were filled in; see report.json",
            outcome.failures.len()
        );
        Ok(2)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth {
            seed,
            states,
            weeks,
            season,
            out,
        } => cmd_synth(*seed, *states, *weeks, *season, out),
        Command::Backtest(args) => cmd_backtest(args),
        Command::Report {
            run,
            format,
            plot_data,
            out,
        } => report::cmd_report(run, *format, *plot_data, out.as_deref()),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
