//! Fits every stage and target of a dataset and attaches confidence radii.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregated::{AggregatedModel, PlanningContext};
use crate::env::ObservableTrajectory;
use crate::error::{Error, Result};
use crate::iv::design::{stage_data, StageDesign, TargetTag};
use crate::iv::ellipsoid::ConfidenceEllipsoid;
use crate::iv::linear::{check_test_bound, fit_2sls, naive_ols, TwoSlsFit};
use crate::iv::threshold::ThresholdSettings;

/// `1e-8 · tr(ZᵀZ) / m`.
pub fn default_lambda(design: &StageDesign) -> f64 {
    let tr: f64 = design.z.column_iter().map(|c| c.norm_squared()).sum();
    1e-8 * tr / design.m() as f64
}

/// One fitted target with its radius and the OLS baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    #[serde(flatten)]
    pub fit: TwoSlsFit,
    pub c2: f64,
    pub theta_ols: Vec<f64>,
}

impl FitRecord {
    pub fn ellipsoid(&self) -> Result<ConfidenceEllipsoid> {
        ConfidenceEllipsoid::new(self.fit.theta_hat.clone(), self.fit.a.clone(), self.c2.sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFits {
    pub h: usize,
    pub reward: FitRecord,
    pub transition: Vec<FitRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSet {
    pub k: usize,
    pub stages: Vec<StageFits>,
}

impl FitSet {
    pub fn records(&self) -> impl Iterator<Item = &FitRecord> {
        self.stages
            .iter()
            .flat_map(|s| std::iter::once(&s.reward).chain(s.transition.iter()))
    }

    pub fn len(&self) -> usize {
        self.records().count()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    fn model_from(&self, pick: impl Fn(&FitRecord) -> Vec<f64>) -> AggregatedModel {
        AggregatedModel {
            reward: self.stages.iter().map(|s| pick(&s.reward)).collect(),
            transition: self
                .stages
                .iter()
                .map(|s| s.transition.iter().map(&pick).collect())
                .collect(),
        }
    }

    /// The model at the ellipsoid centers.
    pub fn center_model(&self) -> AggregatedModel {
        self.model_from(|r| r.fit.theta_hat.clone())
    }

    pub fn ols_model(&self) -> AggregatedModel {
        self.model_from(|r| r.theta_ols.clone())
    }

    /// Whether every component of `model` lies in its ellipsoid.
    pub fn contains(&self, model: &AggregatedModel) -> Result<bool> {
        for s in &self.stages {
            if !s.reward.ellipsoid()?.contains(&model.reward[s.h]) {
                return Ok(false);
            }
            for (j, t) in s.transition.iter().enumerate() {
                if !t.ellipsoid()?.contains(&model.transition[s.h][j]) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Fits one target: 2SLS, OLS and the radius from `settings`.
pub fn fit_target(
    ctx: &PlanningContext,
    design: &StageDesign,
    lambda: Option<f64>,
    settings: &ThresholdSettings,
) -> Result<FitRecord> {
    let lambda = lambda.unwrap_or_else(|| default_lambda(design));
    let fit = fit_2sls(design, lambda)?;
    check_test_bound(&fit, settings.test_bound);
    let theta_ols = naive_ols(design, lambda)?;
    let cfg = settings.config(
        design.target,
        ctx.sigma,
        ctx.horizon,
        ctx.state_dim,
        design.k(),
        design.m(),
        design.n(),
    );
    let c = settings.radius(&cfg)?;
    Ok(FitRecord {
        fit,
        c2: c * c,
        theta_ols,
    })
}

/// Fits the reward and each transition coordinate of every stage.
pub fn fit_all(
    ctx: &PlanningContext,
    observed: &[ObservableTrajectory],
    lambda: Option<f64>,
    settings: &ThresholdSettings,
) -> Result<FitSet> {
    if observed.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let data = stage_data(ctx, observed)?;
    let targets: Vec<TargetTag> = std::iter::once(TargetTag::Reward)
        .chain((0..ctx.state_dim).map(TargetTag::Transition))
        .collect();
    let jobs: Vec<(usize, TargetTag)> = (0..ctx.horizon)
        .flat_map(|h| targets.iter().map(move |t| (h, *t)))
        .collect();
    let mut fits: Vec<FitRecord> = jobs
        .par_iter()
        .map(|&(h, t)| fit_target(ctx, &data[h].design(h, t)?, lambda, settings))
        .collect::<Result<_>>()?;
    let per_stage = targets.len();
    let mut stages = Vec::with_capacity(ctx.horizon);
    for h in (0..ctx.horizon).rev() {
        let mut chunk = fits.split_off(h * per_stage);
        let reward = chunk.remove(0);
        stages.push(StageFits {
            h,
            reward,
            transition: chunk,
        });
    }
    stages.reverse();
    Ok(FitSet {
        k: observed.len(),
        stages,
    })
}
