use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apps::{AppInstance, PolicyClass};
use crate::bench::run::{run_seed, settings_for};
use crate::bench::ExperimentConfig;
use crate::env::{collect_dataset, OfflineDataset};
use crate::error::{Error, Result};
use crate::iv::{fit_all, FitSet};
use crate::planner::{enumerate_candidates, lcb_over_arms, plan_with_oracle, LcbResult, PlanResult};
use crate::rng::derive_seed;

pub fn dataset_file_name(app: &str, k: usize, seed: usize) -> String {
    format!("{app}_{k}_{seed}.ndjson")
}

/// Writes one dataset per (K, seed) cell of the sweep.
pub fn cmd_gen(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let inst = cfg.app.build()?;
    let mut paths = Vec::new();
    for &k in &cfg.k_sweep {
        for s in 0..cfg.n_seeds {
            let ds = collect_dataset(&inst.spec, &inst.behavior, k, run_seed(cfg.master_seed, k, s))?;
            let path = out.join(dataset_file_name(inst.name, k, s));
            ds.write_ndjson(BufWriter::new(File::create(&path)?))?;
            paths.push(path);
        }
    }
    Ok(paths)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), value)?;
    Ok(())
}

/// Fits every stage, calibrating the radii first when the config asks for it.
pub fn fit_dataset(cfg: &ExperimentConfig, inst: &AppInstance, ds: &OfflineDataset) -> Result<FitSet> {
    if ds.horizon != inst.ctx().horizon {
        return Err(Error::Config(format!(
            "dataset horizon {} differs from the configured environment ({})",
            ds.horizon,
            inst.ctx().horizon
        )));
    }
    let settings = settings_for(inst, cfg, ds.k())?;
    fit_all(inst.ctx(), &ds.observed, cfg.lambda, &settings)
}

/// Fits every stage of a dataset; writes `<dataset stem>.fits.json`.
pub fn cmd_fit(cfg: &ExperimentConfig, dataset: &Path, out: &Path) -> Result<(FitSet, PathBuf)> {
    cfg.validate()?;
    let inst = cfg.app.build()?;
    let ds = OfflineDataset::read_ndjson(BufReader::new(File::open(dataset)?))?;
    let fits = fit_dataset(cfg, &inst, &ds)?;
    let path = out.join(format!("{}.fits.json", stem(dataset)));
    write_json(&fits, &path)?;
    Ok((fits, path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "planner", rename_all = "snake_case")]
pub enum PlanOutput {
    Lcb { labels: Vec<String>, result: LcbResult },
    Pessimistic(PlanResult),
}

/// Plans on a fit set: exact lower bounds over arms, candidate search otherwise.
pub fn plan_fits(cfg: &ExperimentConfig, inst: &AppInstance, fits: &FitSet) -> Result<PlanOutput> {
    if fits.stages.len() != inst.ctx().horizon {
        return Err(Error::Config("fits do not match the configured horizon".into()));
    }
    Ok(match &inst.policies {
        PolicyClass::Arms { labels, mus } => PlanOutput::Lcb {
            labels: labels.clone(),
            result: lcb_over_arms(&fits.stages[0].reward.ellipsoid()?, mus)?,
        },
        PolicyClass::Markov { policies } => {
            let eval = cfg.planner.eval_config(cfg.planner.eval.seed);
            let seed = derive_seed(cfg.master_seed, fits.k as u64);
            let candidates = enumerate_candidates(fits, cfg.planner.n_random_candidates, seed)?;
            let oracle = inst.oracle(&eval)?;
            let mut res = plan_with_oracle(oracle.as_ref(), &candidates, &eval, seed)?;
            res.policy = Some(policies[res.policy_index].clone());
            PlanOutput::Pessimistic(res)
        }
    })
}

/// Plans on saved fits; writes `<fits stem>.plan.json`.
pub fn cmd_plan(cfg: &ExperimentConfig, fits_path: &Path, out: &Path) -> Result<(PlanOutput, PathBuf)> {
    cfg.validate()?;
    let inst = cfg.app.build()?;
    let fits: FitSet = serde_json::from_reader(BufReader::new(File::open(fits_path)?))?;
    let output = plan_fits(cfg, &inst, &fits)?;
    let name = stem(fits_path);
    let path = out.join(format!("{}.plan.json", name.strip_suffix(".fits").unwrap_or(&name)));
    write_json(&output, &path)?;
    Ok((output, path))
}
