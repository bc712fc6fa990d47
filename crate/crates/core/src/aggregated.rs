//! The population-averaged MDP seen by the planner, and policy evaluation on it.

use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::best_response;
use crate::env::spec::{
    check_probability_vector, matvec, AgentModel, EnvStructure, Gain, InitialState, ObservationChannel, Rows,
    StrategicMdpSpec, TypeDistribution,
};
use crate::error::{dim_check, Error, Result};
use crate::linalg::{dot, sq_dist};
use crate::rng::{categorical, std_normal, std_normal_vec, substream};

/// Planning-time knowledge: populations, channels, confounders, feature maps,
/// initial distribution and action set.
pub type PlanningContext = EnvStructure;

/// Candidate reward and transition parameters, one per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregatedModel {
    pub reward: Vec<Vec<f64>>,
    pub transition: Vec<Rows>,
}

impl AggregatedModel {
    pub fn from_spec(spec: &StrategicMdpSpec) -> Self {
        Self {
            reward: spec.reward_params.clone(),
            transition: spec.transition_params.clone(),
        }
    }

    pub fn validate(&self, ctx: &PlanningContext) -> Result<()> {
        dim_check(
            self.reward.len() == ctx.horizon && self.transition.len() == ctx.horizon,
            || "model must have one parameter per stage".into(),
        )?;
        for h in 0..ctx.horizon {
            let n = ctx.stages[h].phi_x.dim;
            dim_check(self.reward[h].len() == n, || {
                format!("stage {h}: reward parameter length")
            })?;
            dim_check(
                self.transition[h].len() == ctx.state_dim && self.transition[h].iter().all(|r| r.len() == n),
                || format!("stage {h}: transition parameter shape"),
            )?;
        }
        Ok(())
    }
}

/// Tabular Markov policy over a finite state grid with nearest-neighbor lookup.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovPolicy {
    pub grid: Vec<Vec<f64>>,
    /// `table[h][g]` is the action distribution at grid point `g` of stage `h`.
    pub table: Vec<Vec<Vec<f64>>>,
}

impl MarkovPolicy {
    pub fn new(grid: Vec<Vec<f64>>, table: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let p = Self { grid, table };
        p.validate()?;
        Ok(p)
    }

    /// Always plays action `idx`, whatever the state.
    pub fn constant(horizon: usize, state_dim: usize, n_actions: usize, idx: usize) -> Self {
        let mut row = vec![0.0; n_actions];
        row[idx] = 1.0;
        Self {
            grid: vec![vec![0.0; state_dim]],
            table: vec![vec![row]; horizon],
        }
    }

    /// Deterministic policy: `choice[h][g]` is the action at grid point `g`.
    pub fn deterministic(grid: Vec<Vec<f64>>, choice: &[Vec<usize>], n_actions: usize) -> Result<Self> {
        let table = choice
            .iter()
            .map(|stage| {
                stage
                    .iter()
                    .map(|&a| {
                        let mut row = vec![0.0; n_actions];
                        row[a] = 1.0;
                        row
                    })
                    .collect()
            })
            .collect();
        Self::new(grid, table)
    }

    pub fn horizon(&self) -> usize {
        self.table.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("policy grid is empty".into()));
        }
        let d = self.grid[0].len();
        dim_check(self.grid.iter().all(|g| g.len() == d), || "ragged policy grid".into())?;
        let n_actions = self.table.first().and_then(|s| s.first()).map_or(0, Vec::len);
        for stage in &self.table {
            dim_check(stage.len() == self.grid.len(), || {
                "policy table rows must match the grid".into()
            })?;
            for row in stage {
                dim_check(row.len() == n_actions, || "policy rows differ in length".into())?;
                check_probability_vector(row)?;
            }
        }
        Ok(())
    }

    pub fn nearest(&self, s: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (g, p) in self.grid.iter().enumerate() {
            let d = sq_dist(p, s);
            if d < best_d {
                best = g;
                best_d = d;
            }
        }
        best
    }

    pub fn probs(&self, h: usize, s: &[f64]) -> &[f64] {
        &self.table[h][self.nearest(s)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub n_rollouts: usize,
}

impl ValueEstimate {
    pub fn exact(mean: f64) -> Self {
        Self {
            mean,
            standard_error: 0.0,
            n_rollouts: 0,
        }
    }

    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            standard_error: (var / n as f64).sqrt(),
            n_rollouts: n,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_rollouts: usize,
    pub seed: u64,
    pub crn: bool,
    pub exact_h1: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_rollouts: 2000,
            seed: 0,
            crn: true,
            exact_h1: false,
        }
    }
}

struct StageDraw {
    agent_type: Vec<f64>,
    features: Vec<f64>,
}

fn draw_stage<R: Rng + ?Sized>(
    ctx: &PlanningContext,
    h: usize,
    s: &[f64],
    a: &[f64],
    rng: &mut R,
) -> Result<StageDraw> {
    let st = ctx.stage(h);
    let i = st.types.sample(rng);
    let b = best_response(ctx, h, s, a, &i)?;
    let noise = std_normal_vec(rng, st.channel.noise_dim());
    let o = st.channel.observe(s, a, &i, &b, &noise);
    Ok(StageDraw {
        features: st.phi_x.eval(s, a, &o),
        agent_type: i,
    })
}

/// `R̄_h(s, a)`. Exact when the population is finite and the channel
/// deterministic; otherwise a Monte Carlo mean over `n_mc` draws.
pub fn marginal_reward<R: Rng + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    h: usize,
    s: &[f64],
    a: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<ValueEstimate> {
    ctx.check_stage(h)?;
    let st = ctx.stage(h);
    let theta = &model.reward[h];
    if let (TypeDistribution::Finite { support, weights }, true) = (&st.types, st.channel.is_deterministic()) {
        let mut total = 0.0;
        for (i, w) in support.iter().zip(weights) {
            let b = best_response(ctx, h, s, a, i)?;
            let noise = vec![0.0; st.channel.noise_dim()];
            let o = st.channel.observe(s, a, i, &b, &noise);
            total += w * (dot(&st.phi_x.eval(s, a, &o), theta) + st.reward_confounder.eval(i)[0]);
        }
        return Ok(ValueEstimate::exact(total));
    }
    if n_mc == 0 {
        return Err(Error::Config("n_mc must be at least 1".into()));
    }
    let mut xs = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let d = draw_stage(ctx, h, s, a, rng)?;
        xs.push(dot(&d.features, theta) + st.reward_confounder.eval(&d.agent_type)[0]);
    }
    Ok(ValueEstimate::from_samples(&xs))
}

/// One draw from the mixture `P̄_h(· | s, a)`.
pub fn sample_next_state<R: Rng + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    h: usize,
    s: &[f64],
    a: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    ctx.check_stage(h)?;
    let d = draw_stage(ctx, h, s, a, rng)?;
    Ok(next_state_from(ctx, model, h, &d, rng))
}

fn next_state_from<R: Rng + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    h: usize,
    d: &StageDraw,
    rng: &mut R,
) -> Vec<f64> {
    let f2 = ctx.stage(h).transition_confounder.eval(&d.agent_type);
    matvec(&model.transition[h], &d.features)
        .iter()
        .zip(&f2)
        .map(|(g, f)| g + f + ctx.sigma * std_normal(rng))
        .collect()
}

fn rollout<R: Rng + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    policy: &MarkovPolicy,
    rng: &mut R,
) -> Result<f64> {
    let mut s = ctx.initial_state.sample(rng);
    let mut total = 0.0;
    for h in 0..ctx.horizon {
        let idx = categorical(rng, policy.probs(h, &s));
        let a = &ctx.action_set[idx];
        let d = draw_stage(ctx, h, &s, a, rng)?;
        total += dot(&d.features, &model.reward[h]) + ctx.stage(h).reward_confounder.eval(&d.agent_type)[0];
        s = next_state_from(ctx, model, h, &d, rng);
    }
    Ok(total)
}

fn check_policy(ctx: &PlanningContext, policy: &MarkovPolicy) -> Result<()> {
    dim_check(policy.horizon() == ctx.horizon, || {
        "policy horizon differs from the context".into()
    })?;
    dim_check(policy.grid[0].len() == ctx.state_dim, || {
        "policy grid dimension differs from state_dim".into()
    })?;
    dim_check(policy.table[0][0].len() == ctx.action_set.len(), || {
        "policy rows must cover the action set".into()
    })
}

/// Monte Carlo estimate of `J(M, π)`. With `cfg.crn`, rollout `t` uses
/// substream `(cfg.seed, t)`; otherwise the base seed is drawn from `rng`.
pub fn evaluate_policy_mc<R: RngCore + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    policy: &MarkovPolicy,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<ValueEstimate> {
    if cfg.n_rollouts < 2 {
        return Err(Error::Config("n_rollouts must be at least 2".into()));
    }
    check_policy(ctx, policy)?;
    model.validate(ctx)?;
    let base = if cfg.crn { cfg.seed } else { rng.next_u64() };
    let returns: Vec<f64> = (0..cfg.n_rollouts)
        .into_par_iter()
        .map(|t| rollout(ctx, model, policy, &mut substream(base, t as u64)))
        .collect::<Result<_>>()?;
    Ok(ValueEstimate::from_samples(&returns))
}

/// `E[φ_x(s, a, o)]` at stage `h`, computed exactly.
pub fn feature_mean(ctx: &PlanningContext, h: usize, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    ctx.check_stage(h)?;
    let st = ctx.stage(h);
    let affine = st.phi_x.is_affine_in_obs();
    let linear_channel = matches!(st.channel, ObservationChannel::Linear(_));
    if let TypeDistribution::Finite { support, weights } = &st.types {
        if st.channel.is_deterministic() || (affine && linear_channel) {
            let mut out = vec![0.0; st.phi_x.dim];
            let noise = vec![0.0; st.channel.noise_dim()];
            for (i, w) in support.iter().zip(weights) {
                let b = best_response(ctx, h, s, a, i)?;
                let o = st.channel.observe(s, a, i, &b, &noise);
                for (acc, v) in out.iter_mut().zip(st.phi_x.eval(s, a, &o)) {
                    *acc += w * v;
                }
            }
            return Ok(out);
        }
    }
    let (ObservationChannel::Linear(ch), AgentModel::ClosedFormLinear { action_range, gain }) =
        (&st.channel, &st.agent)
    else {
        return Err(Error::Precondition(
            "analytic feature mean needs finite types or a linear channel with a closed-form agent".into(),
        ));
    };
    if !affine {
        return Err(Error::Precondition(
            "analytic feature mean needs features affine in the observation".into(),
        ));
    }
    let types = &st.types;
    let mean_i = types.mean();
    let a_part = AgentModel::action_part(action_range, a);
    let db = st.agent.agent_dim();
    // E[b] and, for the type-gain term, E[W(i) b]
    let mean_b: Vec<f64> = match gain {
        Gain::Fixed { w } => (0..db)
            .map(|c| w.iter().zip(a_part).map(|(row, ar)| row[c] * ar).sum())
            .collect(),
        Gain::FromType(t) => (0..db)
            .map(|c| (0..t.rows).map(|k| mean_i[t.index(k, c)] * a_part[k]).sum())
            .collect(),
    };
    let mut o = ch.mean_given(s, a, &mean_i, &mean_b);
    if let Some(tw) = &ch.type_gain {
        // replace E[W] E[b] by E[W b]
        for (r, ov) in o.iter_mut().enumerate() {
            for (c, &mb) in mean_b.iter().enumerate() {
                let p = tw.index(r, c);
                let exact: f64 = match gain {
                    Gain::Fixed { .. } => mean_i[p] * mb,
                    Gain::FromType(t) => (0..t.rows)
                        .map(|k| a_part[k] * types.second_moment(p, t.index(k, c)))
                        .sum(),
                };
                *ov += exact - mean_i[p] * mb;
            }
        }
    }
    Ok(st.phi_x.eval(s, a, &o))
}

fn point_initial_state(ctx: &PlanningContext) -> Result<&[f64]> {
    match &ctx.initial_state {
        InitialState::Point { state } => Ok(state),
        _ => Err(Error::Precondition(
            "exact evaluation needs a point-mass initial state".into(),
        )),
    }
}

/// Policy-averaged feature mean `Σ_a π(a|s_1) μ(a)` for a one-stage problem.
pub fn policy_feature_mean_h1(ctx: &PlanningContext, policy: &MarkovPolicy) -> Result<Vec<f64>> {
    if ctx.horizon != 1 {
        return Err(Error::Precondition("exact evaluation requires H = 1".into()));
    }
    check_policy(ctx, policy)?;
    let s = point_initial_state(ctx)?;
    let probs = policy.probs(0, s);
    let mut out = vec![0.0; ctx.stages[0].phi_x.dim];
    for (a, &p) in ctx.action_set.iter().zip(probs) {
        if p == 0.0 {
            continue;
        }
        for (acc, v) in out.iter_mut().zip(feature_mean(ctx, 0, s, a)?) {
            *acc += p * v;
        }
    }
    Ok(out)
}

/// Exact `J(M, π)` for `H = 1`.
pub fn evaluate_policy_exact_h1(ctx: &PlanningContext, model: &AggregatedModel, policy: &MarkovPolicy) -> Result<f64> {
    model.validate(ctx)?;
    Ok(dot(&policy_feature_mean_h1(ctx, policy)?, &model.reward[0]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySearch {
    pub index: usize,
    pub value: f64,
    pub values: Vec<ValueEstimate>,
}

fn evaluate<R: RngCore + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    policy: &MarkovPolicy,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<ValueEstimate> {
    if cfg.exact_h1 {
        Ok(ValueEstimate::exact(evaluate_policy_exact_h1(ctx, model, policy)?))
    } else {
        evaluate_policy_mc(ctx, model, policy, cfg, rng)
    }
}

/// Exhaustive argmax of `J(M, π)` over `policy_class`, lowest index on ties.
/// Every policy is evaluated on the same rollout noise.
pub fn optimal_policy_search<R: RngCore + ?Sized>(
    ctx: &PlanningContext,
    model: &AggregatedModel,
    policy_class: &[MarkovPolicy],
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<PolicySearch> {
    if policy_class.is_empty() {
        return Err(Error::Config("policy class is empty".into()));
    }
    let shared = EvalConfig {
        crn: true,
        seed: if cfg.crn { cfg.seed } else { rng.next_u64() },
        ..*cfg
    };
    let values: Vec<ValueEstimate> = policy_class
        .iter()
        .map(|p| evaluate(ctx, model, p, &shared, rng))
        .collect::<Result<_>>()?;
    let (index, value) = argmax_first(values.iter().map(|v| v.mean));
    Ok(PolicySearch { index, value, values })
}

/// First index attaining the maximum.
pub fn argmax_first(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.into_iter().enumerate() {
        if v > best.1 || (k == 0 && v.is_nan()) {
            best = (k, v);
        }
    }
    best
}

/// First index attaining the minimum.
pub fn argmin_first(values: impl IntoIterator<Item = f64>) -> (usize, f64) {
    let (k, v) = argmax_first(values.into_iter().map(|v| -v));
    (k, -v)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suboptimality {
    pub raw: f64,
    pub clamped: f64,
    pub j_star: f64,
    pub j_policy: f64,
}

impl Suboptimality {
    pub fn new(j_star: f64, j_policy: f64) -> Self {
        let raw = j_star - j_policy;
        Self {
            raw,
            clamped: raw.max(0.0),
            j_star,
            j_policy,
        }
    }
}

/// `J(M*, π*) - J(M*, π)` with both terms on common random numbers.
pub fn suboptimality<R: RngCore + ?Sized>(
    ctx: &PlanningContext,
    true_model: &AggregatedModel,
    policy: &MarkovPolicy,
    policy_class: &[MarkovPolicy],
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<Suboptimality> {
    let shared = EvalConfig {
        crn: true,
        seed: if cfg.crn { cfg.seed } else { rng.next_u64() },
        ..*cfg
    };
    let best = optimal_policy_search(ctx, true_model, policy_class, &shared, rng)?;
    let mine = evaluate(ctx, true_model, policy, &shared, rng)?;
    Ok(Suboptimality::new(best.value, mine.mean))
}
