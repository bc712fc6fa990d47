//! Forward simulation of a strategic MDP and offline data collection.

use rand::Rng;
use rayon::prelude::*;

use crate::env::behavior::{encode_history, BehaviorPolicy};
use crate::env::dataset::{HiddenTrajectory, ObservableTrajectory, OfflineDataset};
use crate::env::spec::{matvec, AgentModel, EnvStructure, Gain, StrategicMdpSpec};
use crate::error::{Error, Result};
use crate::rng::{categorical, std_normal, std_normal_vec, substream};

/// The agent's best response to `a` at stage `h`.
pub fn best_response(env: &EnvStructure, h: usize, s: &[f64], a: &[f64], i: &[f64]) -> Result<Vec<f64>> {
    env.check_stage(h)?;
    match &env.stage(h).agent {
        AgentModel::ClosedFormLinear { action_range, gain } => {
            let a = AgentModel::action_part(action_range, a);
            let w = match gain {
                Gain::Fixed { w } => w.clone(),
                Gain::FromType(t) => t.read(i),
            };
            let cols = w.first().map_or(0, Vec::len);
            Ok((0..cols)
                .map(|c| w.iter().zip(a).map(|(row, ar)| row[c] * ar).sum())
                .collect())
        }
        AgentModel::FiniteArgmax { candidates, utility } => {
            let mut best: Option<(usize, f64)> = None;
            for (k, b) in candidates.iter().enumerate() {
                let u = utility.eval(h, s, a, i, b);
                if best.is_none_or(|(_, bu)| u > bu) {
                    best = Some((k, u));
                }
            }
            best.map(|(k, _)| candidates[k].clone())
                .ok_or_else(|| Error::Config("agent candidate set is empty".into()))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub agent_type: Vec<f64>,
    pub agent_action: Vec<f64>,
}

/// One environment transition. Draws, in order: the type, the channel noise,
/// the reward noise and the transition noise; every source is drawn even when
/// its scale is zero, so streams stay aligned across parameter changes.
pub fn step<R: Rng + ?Sized>(
    spec: &StrategicMdpSpec,
    h: usize,
    s: &[f64],
    a: &[f64],
    rng: &mut R,
) -> Result<StepOutcome> {
    let env = &*spec.structure;
    env.check_stage(h)?;
    let st = env.stage(h);
    let i = st.types.sample(rng);
    let b = best_response(env, h, s, a, &i)?;
    let noise = std_normal_vec(rng, st.channel.noise_dim());
    let o = st.channel.observe(s, a, &i, &b, &noise);
    let x = st.phi_x.eval(s, a, &o);
    let eps = std_normal(rng);
    let reward =
        crate::linalg::dot(&x, &spec.reward_params[h]) + st.reward_confounder.eval(&i)[0] + spec.eps_scale * eps;
    let drift = matvec(&spec.transition_params[h], &x);
    let f2 = st.transition_confounder.eval(&i);
    let next_state = drift
        .iter()
        .zip(&f2)
        .map(|(g, f)| g + f + env.sigma * std_normal(rng))
        .collect();
    Ok(StepOutcome {
        observation: o,
        reward,
        next_state,
        agent_type: i,
        agent_action: b,
    })
}

fn collect_one(
    spec: &StrategicMdpSpec,
    policy: &BehaviorPolicy,
    seed: u64,
    k: usize,
) -> Result<(ObservableTrajectory, HiddenTrajectory)> {
    let env = &*spec.structure;
    let mut rng = substream(seed, k as u64);
    let horizon = env.horizon;
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    let mut action_indices = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut types = Vec::with_capacity(horizon);
    let mut agent_actions = Vec::with_capacity(horizon);
    states.push(env.initial_state.sample(&mut rng));
    for h in 0..horizon {
        let history = encode_history(env, &states, &action_indices, &observations);
        let probs = policy.probs(h, &history, &states[h], env.action_set.len())?;
        let idx = categorical(&mut rng, &probs);
        let a = env.action_set[idx].clone();
        let out = step(spec, h, &states[h], &a, &mut rng)?;
        states.push(out.next_state);
        actions.push(a);
        action_indices.push(idx);
        observations.push(out.observation);
        rewards.push(out.reward);
        types.push(out.agent_type);
        agent_actions.push(out.agent_action);
    }
    Ok((
        ObservableTrajectory {
            states,
            actions,
            action_indices,
            observations,
            rewards,
        },
        HiddenTrajectory { types, agent_actions },
    ))
}

/// Collects `k` i.i.d. trajectories. Trajectory `t` uses substream `(seed, t)`,
/// so the result does not depend on the thread count.
pub fn collect_dataset(
    spec: &StrategicMdpSpec,
    policy: &BehaviorPolicy,
    k: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let rows: Vec<_> = (0..k)
        .into_par_iter()
        .map(|t| collect_one(spec, policy, seed, t))
        .collect::<Result<_>>()?;
    let (observed, hidden) = rows.into_iter().unzip();
    Ok(OfflineDataset {
        horizon: spec.horizon(),
        behavior_policy_tag: policy.tag(),
        seed,
        observed,
        hidden,
    })
}
