//! Pessimistic planning: maximize over policies the minimum value over
//! candidate models drawn from the confidence region.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregated::{
    argmax_first, argmin_first, evaluate_policy_mc, feature_mean, policy_feature_mean_h1, AggregatedModel, EvalConfig,
    MarkovPolicy, PlanningContext, Suboptimality,
};
use crate::env::InitialState;
use crate::error::{Error, Result};
use crate::iv::{ConfidenceEllipsoid, FitSet, LinearMin, TargetTag};
use crate::linalg::dot;
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Center,
    AxisExtreme {
        h: usize,
        target: TargetTag,
        axis: usize,
        sign: i8,
    },
    RandomBoundary {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCandidate {
    pub model: AggregatedModel,
    pub provenance: Provenance,
}

const MEMBERSHIP_SLACK: f64 = 1e-8;

fn ellipsoids(fits: &FitSet) -> Result<Vec<(usize, TargetTag, ConfidenceEllipsoid)>> {
    let mut out = Vec::with_capacity(fits.len());
    for s in &fits.stages {
        out.push((s.h, TargetTag::Reward, s.reward.ellipsoid()?));
        for (j, t) in s.transition.iter().enumerate() {
            out.push((s.h, TargetTag::Transition(j), t.ellipsoid()?));
        }
    }
    Ok(out)
}

fn component_mut(model: &mut AggregatedModel, h: usize, target: TargetTag) -> &mut Vec<f64> {
    match target {
        TargetTag::Reward => &mut model.reward[h],
        TargetTag::Transition(j) => &mut model.transition[h][j],
    }
}

fn component(model: &AggregatedModel, h: usize, target: TargetTag) -> &[f64] {
    match target {
        TargetTag::Reward => &model.reward[h],
        TargetTag::Transition(j) => &model.transition[h][j],
    }
}

/// The center model, the `2 Σ dims` axis extremes (one component moved at a
/// time) and `n_random` joint random-boundary models.
pub fn enumerate_candidates(fits: &FitSet, n_random: usize, seed: u64) -> Result<Vec<ModelCandidate>> {
    let ells = ellipsoids(fits)?;
    let center = fits.center_model();
    let mut out = vec![ModelCandidate {
        model: center.clone(),
        provenance: Provenance::Center,
    }];
    for (h, target, e) in &ells {
        for (axis, sign, p) in e.axis_points() {
            let mut m = center.clone();
            *component_mut(&mut m, *h, *target) = p;
            out.push(ModelCandidate {
                model: m,
                provenance: Provenance::AxisExtreme {
                    h: *h,
                    target: *target,
                    axis,
                    sign,
                },
            });
        }
    }
    for r in 0..n_random {
        let cand_seed = derive_seed(seed, r as u64);
        let mut rng = rng_from_seed(cand_seed);
        let mut m = center.clone();
        for (h, target, e) in &ells {
            *component_mut(&mut m, *h, *target) = e.random_boundary(&mut rng);
        }
        out.push(ModelCandidate {
            model: m,
            provenance: Provenance::RandomBoundary { seed: cand_seed },
        });
    }
    for c in &out {
        for (h, target, e) in &ells {
            let slack = MEMBERSHIP_SLACK * e.c2.max(1.0);
            if !e.contains_with_slack(component(&c.model, *h, *target), slack) {
                return Err(Error::Numerical(format!(
                    "candidate {:?} leaves the ellipsoid of stage {h} {target}",
                    c.provenance
                )));
            }
        }
    }
    Ok(out)
}

/// Value `J(M, π_p)` of policy `p` under model `M`.
pub trait ValueOracle: Sync {
    fn n_policies(&self) -> usize;
    fn value(&self, model: &AggregatedModel, policy: usize) -> Result<f64>;
}

/// Monte Carlo evaluation of tabular policies; every call shares the rollout seed.
pub struct MarkovMcOracle<'a> {
    pub ctx: &'a PlanningContext,
    pub policies: &'a [MarkovPolicy],
    pub cfg: EvalConfig,
}

impl ValueOracle for MarkovMcOracle<'_> {
    fn n_policies(&self) -> usize {
        self.policies.len()
    }

    fn value(&self, model: &AggregatedModel, policy: usize) -> Result<f64> {
        let cfg = EvalConfig { crn: true, ..self.cfg };
        let mut unused = rng_from_seed(self.cfg.seed);
        Ok(evaluate_policy_mc(self.ctx, model, &self.policies[policy], &cfg, &mut unused)?.mean)
    }
}

/// One-stage policies summarized by their feature means: `J = θ_rᵀ μ_p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearArmsOracle {
    pub mus: Vec<Vec<f64>>,
}

impl LinearArmsOracle {
    /// Exact evaluation of tabular policies on a one-stage context.
    pub fn exact_h1(ctx: &PlanningContext, policies: &[MarkovPolicy]) -> Result<Self> {
        Ok(Self {
            mus: policies
                .iter()
                .map(|p| policy_feature_mean_h1(ctx, p))
                .collect::<Result<_>>()?,
        })
    }
}

impl ValueOracle for LinearArmsOracle {
    fn n_policies(&self) -> usize {
        self.mus.len()
    }

    fn value(&self, model: &AggregatedModel, policy: usize) -> Result<f64> {
        Ok(dot(&model.reward[0], &self.mus[policy]))
    }
}

/// `min_M J(M, π_p)` over `candidates` with the first minimizing index.
pub fn pessimistic_value_with(
    oracle: &dyn ValueOracle,
    policy: usize,
    candidates: &[ModelCandidate],
) -> Result<(f64, usize)> {
    if candidates.is_empty() {
        return Err(Error::Config("candidate set is empty".into()));
    }
    let values: Vec<f64> = candidates
        .par_iter()
        .map(|c| oracle.value(&c.model, policy))
        .collect::<Result<_>>()?;
    let (idx, v) = argmin_first(values);
    Ok((v, idx))
}

fn oracle_for<'a>(
    ctx: &'a PlanningContext,
    policies: &'a [MarkovPolicy],
    cfg: &EvalConfig,
) -> Result<Box<dyn ValueOracle + 'a>> {
    Ok(if cfg.exact_h1 {
        Box::new(LinearArmsOracle::exact_h1(ctx, policies)?)
    } else {
        Box::new(MarkovMcOracle {
            ctx,
            policies,
            cfg: *cfg,
        })
    })
}

/// `Ĵ(π)` for a single tabular policy.
pub fn pessimistic_value(
    ctx: &PlanningContext,
    policy: &MarkovPolicy,
    candidates: &[ModelCandidate],
    cfg: &EvalConfig,
) -> Result<(f64, usize)> {
    let one = std::slice::from_ref(policy);
    pessimistic_value_with(oracle_for(ctx, one, cfg)?.as_ref(), 0, candidates)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub policy_index: usize,
    pub pessimistic_value: f64,
    pub argmin_candidate: usize,
    pub minimizing_model: AggregatedModel,
    pub minimizing_provenance: Provenance,
    pub per_policy_values: Vec<f64>,
    pub per_policy_argmin: Vec<usize>,
    /// `values[p][c] = J(M_c, π_p)`.
    pub values: Vec<Vec<f64>>,
    pub eval_config: EvalConfig,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<MarkovPolicy>,
}

/// Exhaustive max-min over the policy × candidate value matrix.
pub fn plan_with_oracle(
    oracle: &dyn ValueOracle,
    candidates: &[ModelCandidate],
    cfg: &EvalConfig,
    seed: u64,
) -> Result<PlanResult> {
    let n_p = oracle.n_policies();
    if n_p == 0 {
        return Err(Error::Config("policy class is empty".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Config("candidate set is empty".into()));
    }
    let n_c = candidates.len();
    let flat: Vec<f64> = (0..n_p * n_c)
        .into_par_iter()
        .map(|cell| oracle.value(&candidates[cell % n_c].model, cell / n_c))
        .collect::<Result<_>>()?;
    let values: Vec<Vec<f64>> = flat.chunks(n_c).map(<[f64]>::to_vec).collect();
    let mins: Vec<(usize, f64)> = values.iter().map(|row| argmin_first(row.iter().copied())).collect();
    let (policy_index, pessimistic_value) = argmax_first(mins.iter().map(|m| m.1));
    let argmin_candidate = mins[policy_index].0;
    Ok(PlanResult {
        policy_index,
        pessimistic_value,
        argmin_candidate,
        minimizing_model: candidates[argmin_candidate].model.clone(),
        minimizing_provenance: candidates[argmin_candidate].provenance.clone(),
        per_policy_values: mins.iter().map(|m| m.1).collect(),
        per_policy_argmin: mins.iter().map(|m| m.0).collect(),
        values,
        eval_config: *cfg,
        seed,
        policy: None,
    })
}

/// `argmax_π min_{M ∈ candidates} J(M, π)` over a tabular policy class.
pub fn plan(
    ctx: &PlanningContext,
    fits: &FitSet,
    policy_class: &[MarkovPolicy],
    n_random: usize,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<PlanResult> {
    if policy_class.is_empty() {
        return Err(Error::Config("policy class is empty".into()));
    }
    let candidates = enumerate_candidates(fits, n_random, seed)?;
    let oracle = oracle_for(ctx, policy_class, cfg)?;
    let mut res = plan_with_oracle(oracle.as_ref(), &candidates, cfg, seed)?;
    res.policy = Some(policy_class[res.policy_index].clone());
    Ok(res)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LcbResult {
    pub index: usize,
    pub value: f64,
    pub lcb: Vec<LinearMin>,
}

impl LcbResult {
    pub fn values(&self) -> Vec<f64> {
        self.lcb.iter().map(|l| l.value).collect()
    }

    pub fn any_unidentified(&self) -> bool {
        self.lcb.iter().any(|l| l.unidentified_direction)
    }
}

/// Exact lower confidence bounds `min_{θ ∈ E} θᵀμ_p` and their first argmax.
pub fn lcb_over_arms(reward: &ConfidenceEllipsoid, mus: &[Vec<f64>]) -> Result<LcbResult> {
    if mus.is_empty() {
        return Err(Error::Config("no arms to plan over".into()));
    }
    if mus.iter().any(|m| m.len() != reward.dim()) {
        return Err(Error::Dimension(
            "feature mean length differs from the ellipsoid".into(),
        ));
    }
    let lcb: Vec<LinearMin> = mus.iter().map(|m| reward.min_linear(m)).collect();
    let (index, value) = argmax_first(lcb.iter().map(|l| l.value));
    Ok(LcbResult { index, value, lcb })
}

/// Exact pessimistic planning for one-stage problems over a grid of actions.
pub fn plan_lcb_h1(ctx: &PlanningContext, reward: &ConfidenceEllipsoid, actions: &[Vec<f64>]) -> Result<LcbResult> {
    if ctx.horizon != 1 {
        return Err(Error::Precondition("exact LCB planning requires H = 1".into()));
    }
    let InitialState::Point { state } = &ctx.initial_state else {
        return Err(Error::Precondition(
            "exact LCB planning needs a point-mass initial state".into(),
        ));
    };
    let mus: Vec<Vec<f64>> = actions
        .iter()
        .map(|a| feature_mean(ctx, 0, state, a))
        .collect::<Result<_>>()?;
    lcb_over_arms(reward, &mus)
}

/// `max_p J(M*, π_p) - J(M*, π_chosen)` under an oracle.
pub fn oracle_suboptimality(
    oracle: &dyn ValueOracle,
    true_model: &AggregatedModel,
    chosen: usize,
) -> Result<Suboptimality> {
    let values: Vec<f64> = (0..oracle.n_policies())
        .map(|p| oracle.value(true_model, p))
        .collect::<Result<_>>()?;
    let (_, best) = argmax_first(values.iter().copied());
    Ok(Suboptimality::new(best, values[chosen]))
}
