//! Ready-made environments and policy classes.

pub mod bandit;
pub mod noncompliant;
pub mod regression;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregated::{feature_mean, AggregatedModel, EvalConfig, MarkovPolicy, PlanningContext};
use crate::env::{make_confounded_linear_env, BehaviorPolicy, EnvRecipe, InitialState, StrategicMdpSpec};
use crate::error::{Error, Result};
use crate::linalg::sym_pinv;
use crate::planner::{LinearArmsOracle, MarkovMcOracle, ValueOracle};
use crate::rng::rng_from_seed;

pub use bandit::{bandit_feature_means, build_strategic_bandit, BanditPolicy, BanditRecipe, SecondRule};
pub use noncompliant::{build_noncompliant_rec, NoncompliantRecipe};
pub use regression::{build_strategic_regression, RegressionRecipe};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AppRecipe {
    StrategicRegression(RegressionRecipe),
    StrategicBandit(BanditRecipe),
    NoncompliantRec(NoncompliantRecipe),
    RawEnv(EnvRecipe),
}

/// Policies to plan over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyClass {
    /// One-stage policies given by their exact feature means.
    Arms {
        labels: Vec<String>,
        mus: Vec<Vec<f64>>,
    },
    Markov {
        policies: Vec<MarkovPolicy>,
    },
}

impl PolicyClass {
    pub fn len(&self) -> usize {
        match self {
            PolicyClass::Arms { mus, .. } => mus.len(),
            PolicyClass::Markov { policies } => policies.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
pub struct AppInstance {
    pub name: &'static str,
    pub spec: StrategicMdpSpec,
    pub behavior: BehaviorPolicy,
    pub policies: PolicyClass,
}

impl AppRecipe {
    pub fn name(&self) -> &'static str {
        match self {
            AppRecipe::StrategicRegression(_) => "strategic_regression",
            AppRecipe::StrategicBandit(_) => "strategic_bandit",
            AppRecipe::NoncompliantRec(_) => "noncompliant_rec",
            AppRecipe::RawEnv(_) => "raw_env",
        }
    }

    pub fn build(&self) -> Result<AppInstance> {
        let (spec, policies) = match self {
            AppRecipe::StrategicRegression(r) => {
                let spec = build_strategic_regression(r)?;
                let ctx = &*spec.structure;
                let InitialState::Point { state } = &ctx.initial_state else {
                    unreachable!("regression starts from a point")
                };
                let mus = ctx
                    .action_set
                    .iter()
                    .map(|a| feature_mean(ctx, 0, state, a))
                    .collect::<Result<_>>()?;
                let labels = ctx.action_set.iter().map(|a| format!("{a:?}")).collect();
                (spec, PolicyClass::Arms { labels, mus })
            }
            AppRecipe::StrategicBandit(r) => {
                let spec = build_strategic_bandit(r)?;
                let pols = r.policies();
                let mus = bandit_feature_means(&spec.structure, r, &pols)?;
                let labels = pols
                    .iter()
                    .map(|p| format!("a1={} {:?}", r.a1_values[p.a1_index], p.rule))
                    .collect();
                (spec, PolicyClass::Arms { labels, mus })
            }
            AppRecipe::NoncompliantRec(r) => {
                let spec = build_noncompliant_rec(r)?;
                (
                    spec,
                    PolicyClass::Markov {
                        policies: r.policies()?,
                    },
                )
            }
            AppRecipe::RawEnv(r) => {
                let spec = make_confounded_linear_env(r)?;
                let ctx = &spec.structure;
                let policies = (0..ctx.action_set.len())
                    .map(|k| MarkovPolicy::constant(ctx.horizon, ctx.state_dim, ctx.action_set.len(), k))
                    .collect();
                (spec, PolicyClass::Markov { policies })
            }
        };
        Ok(AppInstance {
            name: self.name(),
            spec,
            behavior: BehaviorPolicy::Uniform,
            policies,
        })
    }
}

impl AppInstance {
    pub fn ctx(&self) -> &PlanningContext {
        &self.spec.structure
    }

    pub fn true_model(&self) -> AggregatedModel {
        AggregatedModel::from_spec(&self.spec)
    }

    /// Value oracle for the policy class. Arms are always exact; Markov
    /// classes use `cfg.exact_h1` to pick exact or Monte Carlo evaluation.
    pub fn oracle(&self, cfg: &EvalConfig) -> Result<Box<dyn ValueOracle + '_>> {
        Ok(match &self.policies {
            PolicyClass::Arms { mus, .. } => Box::new(LinearArmsOracle { mus: mus.clone() }),
            PolicyClass::Markov { policies } if cfg.exact_h1 => {
                Box::new(LinearArmsOracle::exact_h1(self.ctx(), policies)?)
            }
            PolicyClass::Markov { policies } => Box::new(MarkovMcOracle {
                ctx: self.ctx(),
                policies,
                cfg: *cfg,
            }),
        })
    }
}

/// Population curvature `A = ½ Cᵀ G⁺ C` of a one-stage design with actions
/// drawn from `probs`, where `C = E[ψ φᵀ]` and `G = E[ψ ψᵀ]`.
pub fn population_curvature_h1(ctx: &PlanningContext, probs: &[f64]) -> Result<DMatrix<f64>> {
    if ctx.horizon != 1 {
        return Err(Error::Precondition("population curvature is defined for H = 1".into()));
    }
    let InitialState::Point { state } = &ctx.initial_state else {
        return Err(Error::Precondition(
            "population curvature needs a point-mass initial state".into(),
        ));
    };
    if probs.len() != ctx.action_set.len() {
        return Err(Error::Dimension("one probability per action required".into()));
    }
    let st = ctx.stage(0);
    let (m, n) = (st.psi_z.dim, st.phi_x.dim);
    let mut g = DMatrix::zeros(m, m);
    let mut c = DMatrix::zeros(m, n);
    let mut c_abs: DMatrix<f64> = DMatrix::zeros(m, n);
    for (a, &p) in ctx.action_set.iter().zip(probs) {
        if p == 0.0 {
            continue;
        }
        // instruments never read the observation
        let psi = nalgebra::DVector::from_vec(st.psi_z.try_eval(state, a, &vec![0.0; st.channel.obs_dim()])?);
        let mu = nalgebra::DVector::from_vec(feature_mean(ctx, 0, state, a)?);
        g += p * &psi * psi.transpose();
        c += p * &psi * mu.transpose();
        c_abs += p * psi.abs() * mu.abs().transpose();
    }
    // entries that cancel to rounding level are exact zeros
    for (v, bound) in c.iter_mut().zip(c_abs.iter()) {
        if v.abs() <= 16.0 * f64::EPSILON * bound {
            *v = 0.0;
        }
    }
    Ok(0.5 * c.transpose() * sym_pinv(&g) * c)
}

/// Bootstrap standard errors of a vector statistic over `n` resampled units.
pub fn bootstrap_se<F>(n: usize, reps: usize, seed: u64, stat: F) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> Result<Vec<f64>>,
{
    if n == 0 || reps < 2 {
        return Err(Error::Config(
            "bootstrap needs data and at least two replications".into(),
        ));
    }
    let mut rng = rng_from_seed(seed);
    let mut draws: Vec<Vec<f64>> = Vec::with_capacity(reps);
    for _ in 0..reps {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        draws.push(stat(&idx)?);
    }
    let d = draws[0].len();
    let r = reps as f64;
    Ok((0..d)
        .map(|j| {
            let mean = draws.iter().map(|v| v[j]).sum::<f64>() / r;
            (draws.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
        })
        .collect())
}
