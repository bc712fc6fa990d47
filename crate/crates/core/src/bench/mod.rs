//! Experiment harness behind the `plan-iv` command line.

pub mod commands;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregated::EvalConfig;
use crate::apps::AppRecipe;
use crate::error::{Error, Result};
use crate::iv::ThresholdSettings;

pub use commands::{cmd_fit, cmd_gen, cmd_plan, dataset_file_name, fit_dataset, plan_fits, PlanOutput};
pub use report::{cmd_report, loglog_slope, Slope, Summary};
pub use run::{cmd_bench, evaluate_run, run_seed, ResultRow, RunMetrics, RESULTS_HEADER};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerMode {
    #[default]
    Mc,
    ExactH1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub n_random_candidates: usize,
    pub planner_mode: PlannerMode,
    pub eval: EvalConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            n_random_candidates: 16,
            planner_mode: PlannerMode::Mc,
            eval: EvalConfig::default(),
        }
    }
}

impl PlannerConfig {
    /// Evaluation settings with the planner mode applied and the rollout seed
    /// replaced by `seed`.
    pub fn eval_config(&self, seed: u64) -> EvalConfig {
        EvalConfig {
            seed,
            exact_h1: self.planner_mode == PlannerMode::ExactH1,
            ..self.eval
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub app: AppRecipe,
    #[serde(default)]
    pub threshold: ThresholdSettings,
    #[serde(default)]
    pub planner: PlannerConfig,
    pub k_sweep: Vec<usize>,
    #[serde(default = "one")]
    pub n_seeds: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub master_seed: u64,
    /// Ridge parameter for every fit; data-scaled default when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Record wall-clock times in results.csv. Off by default so that the
    /// file is reproducible byte for byte.
    #[serde(default)]
    pub timing: bool,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if self.k_sweep.is_empty() {
            return Err(Error::Config("k_sweep is empty".into()));
        }
        if self.k_sweep.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("k_sweep must be strictly increasing".into()));
        }
        if self.k_sweep[0] == 0 {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config("lambda must be finite and nonnegative".into()));
            }
        }
        Ok(())
    }

    /// `--out` wins over `out_dir`, which defaults to `out`. The directory is
    /// created if needed.
    pub fn resolve_out(&self, cli: Option<&Path>) -> Result<PathBuf> {
        let dir = cli
            .map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}
