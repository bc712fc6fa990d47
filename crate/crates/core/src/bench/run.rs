use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregated::{argmax_first, AggregatedModel};
use crate::apps::{AppInstance, PolicyClass};
use crate::bench::ExperimentConfig;
use crate::env::collect_dataset;
use crate::error::Result;
use crate::iv::{calibrate_thresholds, fit_all, projected_mse, stage_data, FitSet, TargetTag, ThresholdSettings};
use crate::linalg::dot;
use crate::planner::{enumerate_candidates, lcb_over_arms, plan_with_oracle};
use crate::rng::derive_seed;

pub const RESULTS_HEADER: &str = "app,K,seed,estimator,metric,value,wall_time_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub app: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: usize,
    pub estimator: String,
    pub metric: String,
    pub value: f64,
    pub wall_time_ms: u64,
}

/// Everything measured on one (K, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iv_pmse: f64,
    pub iv_param_err: f64,
    pub iv_subopt: f64,
    pub coverage_hit: bool,
    pub pessimism_hit: bool,
    pub j_hat: f64,
    pub j_star: f64,
    pub ols_pmse: f64,
    pub ols_param_err: f64,
    pub ols_subopt: f64,
    pub iv_choice: usize,
    pub ols_choice: usize,
}

impl RunMetrics {
    fn rows(&self, app: &str, k: usize, seed: usize, ms: u64) -> Vec<ResultRow> {
        let row = |estimator: &str, metric: &str, value: f64| ResultRow {
            app: app.to_string(),
            k,
            seed,
            estimator: estimator.to_string(),
            metric: metric.to_string(),
            value,
            wall_time_ms: ms,
        };
        let flag = |b: bool| f64::from(u8::from(b));
        vec![
            row("iv", "pmse", self.iv_pmse),
            row("iv", "param_err", self.iv_param_err),
            row("iv", "subopt", self.iv_subopt),
            row("iv", "coverage_hit", flag(self.coverage_hit)),
            row("iv", "pessimism_hit", flag(self.pessimism_hit)),
            row("iv", "j_hat", self.j_hat),
            row("iv", "j_star", self.j_star),
            row("ols", "pmse", self.ols_pmse),
            row("ols", "param_err", self.ols_param_err),
            row("ols", "subopt", self.ols_subopt),
        ]
    }
}

/// Seed of cell (`k`, `seed_index`) derived from the master seed.
pub fn run_seed(master: u64, k: usize, seed_index: usize) -> u64 {
    derive_seed(derive_seed(master, k as u64), seed_index as u64)
}

fn targets(fits: &FitSet) -> Vec<(usize, TargetTag)> {
    fits.stages
        .iter()
        .flat_map(|s| {
            std::iter::once((s.h, TargetTag::Reward))
                .chain((0..s.transition.len()).map(move |j| (s.h, TargetTag::Transition(j))))
        })
        .collect()
}

fn component(model: &AggregatedModel, h: usize, t: TargetTag) -> &[f64] {
    match t {
        TargetTag::Reward => &model.reward[h],
        TargetTag::Transition(j) => &model.transition[h][j],
    }
}

/// Collect, fit and plan once, then score both estimators against the truth.
/// Only the scoring step reads the true parameters.
pub fn evaluate_run(
    inst: &AppInstance,
    cfg: &ExperimentConfig,
    settings: &ThresholdSettings,
    k: usize,
    seed: u64,
) -> Result<RunMetrics> {
    let ctx = inst.ctx();
    let data = collect_dataset(&inst.spec, &inst.behavior, k, seed)?;
    let fits = fit_all(ctx, &data.observed, cfg.lambda, settings)?;
    let iv_model = fits.center_model();
    let ols_model = fits.ols_model();

    let (iv_choice, j_hat, lower, oracle_vals) = match &inst.policies {
        PolicyClass::Arms { mus, .. } => {
            let ell = fits.stages[0].reward.ellipsoid()?;
            let lcb = lcb_over_arms(&ell, mus)?;
            (lcb.index, lcb.value, lcb.values(), None)
        }
        PolicyClass::Markov { .. } => {
            let eval = cfg.planner.eval_config(derive_seed(seed, 2));
            let oracle = inst.oracle(&eval)?;
            let candidates = enumerate_candidates(&fits, cfg.planner.n_random_candidates, derive_seed(seed, 1))?;
            let plan = plan_with_oracle(oracle.as_ref(), &candidates, &eval, seed)?;
            let ols_vals: Vec<f64> = (0..oracle.n_policies())
                .map(|p| oracle.value(&ols_model, p))
                .collect::<Result<_>>()?;
            (
                plan.policy_index,
                plan.pessimistic_value,
                plan.per_policy_values,
                Some((eval, ols_vals)),
            )
        }
    };

    // scoring
    let truth = inst.true_model();
    let (true_vals, ols_vals) = match (&inst.policies, oracle_vals) {
        (PolicyClass::Arms { mus, .. }, _) => (
            mus.iter().map(|m| dot(&truth.reward[0], m)).collect::<Vec<f64>>(),
            mus.iter().map(|m| dot(&ols_model.reward[0], m)).collect::<Vec<f64>>(),
        ),
        (PolicyClass::Markov { .. }, Some((eval, ols_vals))) => {
            let oracle = inst.oracle(&eval)?;
            let tv = (0..oracle.n_policies())
                .map(|p| oracle.value(&truth, p))
                .collect::<Result<_>>()?;
            (tv, ols_vals)
        }
        (PolicyClass::Markov { .. }, None) => unreachable!("markov classes always carry oracle values"),
    };
    let (ols_choice, _) = argmax_first(ols_vals.iter().copied());
    let (_, j_star) = argmax_first(true_vals.iter().copied());

    let stages = stage_data(ctx, &data.observed)?;
    let tg = targets(&fits);
    let mut pm = (0.0, 0.0);
    let mut pe = (0.0, 0.0);
    for &(h, t) in &tg {
        let design = stages[h].design(h, t)?;
        let star = component(&truth, h, t);
        let iv = component(&iv_model, h, t);
        let ols = component(&ols_model, h, t);
        pm.0 += projected_mse(&design, iv, star)?;
        pm.1 += projected_mse(&design, ols, star)?;
        pe.0 += iv.iter().zip(star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        pe.1 += ols.iter().zip(star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    let nt = tg.len() as f64;
    let mut coverage_hit = true;
    for s in &fits.stages {
        coverage_hit &= s.reward.ellipsoid()?.contains(&truth.reward[s.h]);
    }
    Ok(RunMetrics {
        iv_pmse: pm.0 / nt,
        iv_param_err: pe.0.sqrt(),
        iv_subopt: j_star - true_vals[iv_choice],
        coverage_hit,
        pessimism_hit: lower.iter().zip(&true_vals).all(|(l, t)| l <= t),
        j_hat,
        j_star,
        ols_pmse: pm.1 / nt,
        ols_param_err: pe.1.sqrt(),
        ols_subopt: j_star - true_vals[ols_choice],
        iv_choice,
        ols_choice,
    })
}

/// Per-K threshold settings, calibrated on the unconfounded twin when asked.
pub(crate) fn settings_for(inst: &AppInstance, cfg: &ExperimentConfig, k: usize) -> Result<ThresholdSettings> {
    if !cfg.threshold.calibrate {
        return Ok(cfg.threshold);
    }
    // one past the last cell index, so no run shares this stream
    let seed = run_seed(cfg.master_seed, k, cfg.n_seeds);
    let cal = calibrate_thresholds(
        &inst.spec,
        &inst.behavior,
        k,
        cfg.threshold.calibration_reps,
        &cfg.threshold,
        cfg.lambda,
        seed,
    )?;
    log::info!(
        "K={k}: calibrated c0 reward {} transition {}",
        cal.c0_reward,
        cal.c0_transition
    );
    Ok(cal.apply(&cfg.threshold))
}

/// All rows of a sweep, in (K, seed) order.
pub fn bench_rows(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let inst = cfg.app.build()?;
    let settings: Vec<ThresholdSettings> = cfg
        .k_sweep
        .iter()
        .map(|&k| settings_for(&inst, cfg, k))
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.k_sweep.len())
        .flat_map(|ki| (0..cfg.n_seeds).map(move |s| (ki, s)))
        .collect();
    let per_cell: Vec<Vec<ResultRow>> = cells
        .par_iter()
        .map(|&(ki, s)| {
            let k = cfg.k_sweep[ki];
            let start = Instant::now();
            let m = evaluate_run(&inst, cfg, &settings[ki], k, run_seed(cfg.master_seed, k, s))?;
            let ms = if cfg.timing {
                start.elapsed().as_millis() as u64
            } else {
                0
            };
            Ok(m.rows(inst.name, k, s, ms))
        })
        .collect::<Result<_>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

pub fn write_results<W: Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

/// Runs the sweep and writes `results.csv` under `out`.
pub fn cmd_bench(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    let rows = bench_rows(cfg)?;
    let path = out.join("results.csv");
    let file = std::fs::File::create(&path)?;
    if rows.is_empty() {
        writeln!(&file, "{RESULTS_HEADER}")?;
    } else {
        write_results(&rows, std::io::BufWriter::new(file))?;
    }
    Ok(path)
}
