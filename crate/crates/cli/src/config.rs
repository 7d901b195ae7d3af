//! Run configuration: a JSON file, command-line flags, or both (flags win).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nowcast_core::data::{load_panel, synthesize_panel, PanelDataset, PanelFiles, WeekRange};
use nowcast_core::evaluate::{BacktestConfig, ReportOptions, SplitSpec, MORAN_PERMUTATIONS, MORAN_SEED};
use nowcast_core::models::{ModelId, SearchConfig};
use serde::{Deserialize, Serialize};

/// Size of the SARIMA order grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// p, q <= 5 and P, Q <= 2.
    Full,
    /// p, q <= 2 and P, Q <= 1.
    Reduced,
}

/// A synthetic panel in place of input files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSource {
    pub seed: u64,
    pub states: usize,
    pub weeks: usize,
}

/// Everything a backtest run depends on. Written next to the outputs and
/// embedded in the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub files: Option<PanelFiles>,
    #[serde(default)]
    pub synth: Option<SynthSource>,
    pub season: usize,
    /// Defaults to the standard split on 342 weeks, scaled otherwise.
    #[serde(default)]
    pub split: Option<SplitSpec>,
    #[serde(default = "default_models")]
    pub models: Vec<ModelId>,
    /// Defaults to both ensembles when all six models run, none otherwise.
    #[serde(default)]
    pub ensembles: Option<Vec<ModelId>>,
    /// Worker threads; zero means one per available core.
    #[serde(default)]
    pub jobs: usize,
    pub out: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_grid")]
    pub grid: Grid,
    /// Search regression orders per score subset instead of reusing the
    /// plain SARIMA orders.
    #[serde(default)]
    pub nested_sarimax: bool,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

fn default_models() -> Vec<ModelId> {
    ModelId::MEMBERS.to_vec()
}

fn default_seed() -> u64 {
    MORAN_SEED
}

fn default_grid() -> Grid {
    Grid::Full
}

fn default_permutations() -> usize {
    MORAN_PERMUTATIONS
}

impl RunConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match (&self.files, &self.synth) {
            (None, None) => bail!("no input: give the four panel files, a data directory or a synthetic seed"),
            (Some(_), Some(_)) => bail!("give either panel files or a synthetic seed, not both"),
            _ => {}
        }
        if let Some(s) = &self.synth {
            if s.weeks < 3 * self.season {
                bail!("{} weeks is fewer than three seasons of {}", s.weeks, self.season);
            }
        }
        if self.permutations == 0 {
            bail!("at least one permutation is needed");
        }
        self.backtest_config().validate()?;
        Ok(())
    }

    pub fn ensembles(&self) -> Vec<ModelId> {
        match &self.ensembles {
            Some(e) => e.clone(),
            None if ModelId::MEMBERS.iter().all(|m| self.models.contains(m)) => ModelId::ENSEMBLES.to_vec(),
            None => {
                log::info!("ensembles skipped: they need all six models");
                Vec::new()
            }
        }
    }

    pub fn backtest_config(&self) -> BacktestConfig {
        let mut c = BacktestConfig::new(self.season);
        c.models = self.models.clone();
        c.ensembles = self.ensembles();
        if self.grid == Grid::Reduced {
            c.search = SearchConfig::reduced();
        }
        c.search.fit.seed = self.seed;
        c.neighbor_search.fit.seed = self.seed;
        c.reuse_sarimax_orders = !self.nested_sarimax;
        c
    }

    pub fn report_options(&self) -> ReportOptions {
        ReportOptions {
            permutations: self.permutations,
            seed: self.seed,
            covariates: Vec::new(),
        }
    }

    pub fn load_panel(&self) -> anyhow::Result<PanelDataset> {
        if let Some(f) = &self.files {
            for p in [&f.cases, &f.exog, &f.adjacency, &f.population] {
                if !p.is_file() {
                    bail!("input file {} does not exist", p.display());
                }
            }
            return Ok(load_panel(f)?);
        }
        let s = self.synth.expect("validated");
        Ok(synthesize_panel(s.seed, s.states, s.weeks, self.season)?)
    }

    pub fn split(&self, n_weeks: usize) -> anyhow::Result<SplitSpec> {
        let split = match self.split {
            Some(s) => s,
            None if n_weeks == 342 => SplitSpec::default(),
            None => SplitSpec::proportional(n_weeks)?,
        };
        split.validate(n_weeks)?;
        Ok(split)
    }
}

/// Split overrides from the command line.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct SplitArgs {
    /// Last training week; testing starts the week after.
    #[arg(long)]
    pub train_last: Option<u32>,
    /// First week of the ensemble-weight validation window.
    #[arg(long)]
    pub validation_first: Option<u32>,
    /// Last test week (defaults to the panel's last week).
    #[arg(long)]
    pub test_last: Option<u32>,
    /// Reporting lag in weeks; the nowcast horizon equals it.
    #[arg(long)]
    pub lag: Option<usize>,
}

impl SplitArgs {
    pub fn is_empty(&self) -> bool {
        self.train_last.is_none() && self.validation_first.is_none() && self.test_last.is_none() && self.lag.is_none()
    }

    /// Applies the overrides on top of `base`.
    pub fn apply(&self, base: SplitSpec) -> anyhow::Result<SplitSpec> {
        let train_last = self.train_last.unwrap_or(base.train.last);
        let lag = self.lag.unwrap_or(base.lag);
        Ok(SplitSpec {
            train: WeekRange::new(1, train_last)?,
            validation: WeekRange::new(self.validation_first.unwrap_or(base.validation.first), train_last)?,
            test: WeekRange::new(train_last + 1, self.test_last.unwrap_or(base.test.last))?,
            lag,
            horizon: lag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_config() -> RunConfig {
        serde_json::from_str(r#"{"synth": {"seed": 1, "states": 3, "weeks": 120}, "season": 13, "out": "run"}"#)
            .unwrap()
    }

    #[test]
    fn json_defaults_fill_in() {
        let c = synth_config();
        assert_eq!(c.models, ModelId::MEMBERS.to_vec());
        assert_eq!(c.ensembles(), ModelId::ENSEMBLES.to_vec());
        assert_eq!(
            (c.grid, c.permutations, c.seed),
            (Grid::Full, MORAN_PERMUTATIONS, MORAN_SEED)
        );
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_conflicting_sources_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"season": 13, "out": "x", "colour": 1}"#).is_err());
        let mut c = synth_config();
        c.files = Some(PanelFiles::in_dir("data"));
        assert!(c.validate().is_err());
        c.files = None;
        c.synth = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_model_sets_drop_the_ensembles() {
        let mut c = synth_config();
        c.models = vec![ModelId::Sarima];
        assert!(c.ensembles().is_empty());
        c.validate().unwrap();
    }

    #[test]
    fn split_overrides_keep_horizon_equal_to_lag() {
        let args = SplitArgs {
            train_last: Some(250),
            lag: Some(3),
            ..Default::default()
        };
        let s = args.apply(SplitSpec::default()).unwrap();
        assert_eq!((s.train.last, s.test.first, s.test.last), (250, 251, 342));
        assert_eq!((s.lag, s.horizon), (3, 3));
        assert_eq!(s.validation.last, 250);
        assert!(SplitArgs::default().is_empty());
    }

    #[test]
    fn default_split_depends_on_panel_length() {
        let c = synth_config();
        assert_eq!(c.split(342).unwrap(), SplitSpec::default());
        assert_eq!(c.split(120).unwrap(), SplitSpec::proportional(120).unwrap());
    }
}
