//! Strategic bandit: the principal announces `a1`, an agent of type `(z, W)`
//! responds with `b = W a1`, the principal observes `o = z + W b` and then
//! picks `a2` from `o`.
//!
//! The principal action vector is `(a1, onehot(a1), onehot(a2))`; rewards are
//! linear in `onehot(a2) ⊗ (o, 1)` and the instrument is
//! `onehot(a1) ⊗ onehot(a2)`.

use serde::{Deserialize, Serialize};

use crate::aggregated::PlanningContext;
use crate::env::{
    best_response, AgentModel, Block, ConfounderMap, EnvStructure, FeatureMap, Gain, InitialState, InputDims,
    LinearChannel, ObservationChannel, StageStructure, StrategicMdpSpec, TypeDistribution, TypeMatrix,
};
use crate::error::{dim_check, Error, Result};

/// Second-phase rule mapping the observation to an `a2` index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SecondRule {
    Always {
        a2: usize,
    },
    /// `above` when `o >= cut`, otherwise `below`.
    Threshold {
        cut: f64,
        below: usize,
        above: usize,
    },
}

impl SecondRule {
    pub fn pick(&self, o: f64) -> usize {
        match *self {
            SecondRule::Always { a2 } => a2,
            SecondRule::Threshold { cut, below, above } => {
                if o >= cut {
                    above
                } else {
                    below
                }
            }
        }
    }

    fn max_index(&self) -> usize {
        match *self {
            SecondRule::Always { a2 } => a2,
            SecondRule::Threshold { below, above, .. } => below.max(above),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BanditRecipe {
    pub a1_values: Vec<f64>,
    pub a2_count: usize,
    pub z_values: Vec<f64>,
    pub w_values: Vec<f64>,
    /// Reward confounder `g = kappa (z - E z)`.
    pub kappa: f64,
    /// `[slope, intercept]` per `a2`, flattened.
    pub theta_star: Vec<f64>,
    pub eps_scale: f64,
    pub sigma: f64,
    pub rules: Vec<SecondRule>,
}

impl Default for BanditRecipe {
    fn default() -> Self {
        Self {
            a1_values: vec![-1.0, 0.0, 1.0],
            a2_count: 2,
            z_values: vec![-1.0, 1.0],
            w_values: vec![0.5, 1.5],
            kappa: 1.0,
            theta_star: vec![0.0, 0.3, -0.2, 0.5],
            eps_scale: 0.3,
            sigma: 0.1,
            rules: vec![
                SecondRule::Always { a2: 0 },
                SecondRule::Always { a2: 1 },
                SecondRule::Threshold {
                    cut: 0.0,
                    below: 0,
                    above: 1,
                },
            ],
        }
    }
}

/// One policy of the class: a deterministic `a1` and a second-phase rule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditPolicy {
    pub a1_index: usize,
    pub rule: SecondRule,
}

fn onehot(len: usize, idx: usize) -> Vec<f64> {
    (0..len).map(|k| f64::from(u8::from(k == idx))).collect()
}

impl BanditRecipe {
    pub fn action_vector(&self, a1_index: usize, a2_index: usize) -> Vec<f64> {
        let mut v = vec![self.a1_values[a1_index]];
        v.extend(onehot(self.a1_values.len(), a1_index));
        v.extend(onehot(self.a2_count, a2_index));
        v
    }

    pub fn policies(&self) -> Vec<BanditPolicy> {
        (0..self.a1_values.len())
            .flat_map(|a1_index| self.rules.iter().map(move |&rule| BanditPolicy { a1_index, rule }))
            .collect()
    }
}

pub fn build_strategic_bandit(recipe: &BanditRecipe) -> Result<StrategicMdpSpec> {
    let n1 = recipe.a1_values.len();
    let n2 = recipe.a2_count;
    if n1 == 0 || n2 == 0 || recipe.z_values.is_empty() || recipe.w_values.is_empty() {
        return Err(Error::Config("bandit grids and type supports must be nonempty".into()));
    }
    dim_check(recipe.theta_star.len() == 2 * n2, || {
        format!("theta_star must have length {}", 2 * n2)
    })?;
    if recipe.rules.is_empty() || recipe.rules.iter().any(|r| r.max_index() >= n2) {
        return Err(Error::Config(
            "second-phase rules must be nonempty and refer to existing a2 values".into(),
        ));
    }
    let mut support = Vec::new();
    for &z in &recipe.z_values {
        for &w in &recipe.w_values {
            support.push(vec![z, w]);
        }
    }
    let weights = vec![1.0 / support.len() as f64; support.len()];
    let mean_z = recipe.z_values.iter().sum::<f64>() / recipe.z_values.len() as f64;
    let action_set: Vec<Vec<f64>> = (0..n1)
        .flat_map(|i| (0..n2).map(move |j| (i, j)))
        .map(|(i, j)| recipe.action_vector(i, j))
        .collect();
    let inputs = InputDims {
        state: 1,
        action: 1 + n1 + n2,
        obs: 1,
    };
    let a2_block = Block::action_slice(1 + n1, n2);
    let phi = Block::kron(a2_block.clone(), Block::Concat(vec![Block::obs(), Block::Intercept]));
    let psi = Block::kron(Block::action_slice(1, n1), a2_block);
    let w = TypeMatrix {
        offset: 1,
        rows: 1,
        cols: 1,
    };
    let stage = StageStructure {
        types: TypeDistribution::Finite { support, weights },
        agent: AgentModel::ClosedFormLinear {
            action_range: Some((0, 1)),
            gain: Gain::FromType(w),
        },
        channel: ObservationChannel::Linear(LinearChannel {
            obs_dim: 1,
            from_type: Some(vec![vec![1.0, 0.0]]),
            type_gain: Some(w),
            ..Default::default()
        }),
        reward_confounder: ConfounderMap::Linear {
            weights: vec![vec![recipe.kappa, 0.0]],
            center: vec![mean_z, 0.0],
        },
        transition_confounder: ConfounderMap::Zero { out_dim: 1 },
        phi_x: FeatureMap::new(phi, inputs)?,
        psi_z: FeatureMap::new(psi, inputs)?,
    };
    let structure = EnvStructure {
        horizon: 1,
        state_dim: 1,
        action_set,
        stages: vec![stage],
        sigma: recipe.sigma,
        initial_state: InitialState::Point { state: vec![0.0] },
    };
    StrategicMdpSpec::new(
        structure,
        vec![recipe.theta_star.clone()],
        vec![vec![vec![0.0; 2 * n2]]],
        recipe.eps_scale,
    )
}

/// Exact feature mean of each policy under the planning population.
pub fn bandit_feature_means(
    ctx: &PlanningContext,
    recipe: &BanditRecipe,
    policies: &[BanditPolicy],
) -> Result<Vec<Vec<f64>>> {
    let st = ctx.stage(0);
    let TypeDistribution::Finite { support, weights } = &st.types else {
        return Err(Error::Precondition(
            "bandit feature means need a finite population".into(),
        ));
    };
    if !st.channel.is_deterministic() {
        return Err(Error::Precondition(
            "bandit feature means need a deterministic channel".into(),
        ));
    }
    let s = [0.0];
    policies
        .iter()
        .map(|p| {
            let mut mu = vec![0.0; st.phi_x.dim];
            // the agent only reacts to a1
            let probe = recipe.action_vector(p.a1_index, 0);
            for (i, w) in support.iter().zip(weights) {
                let b = best_response(ctx, 0, &s, &probe, i)?;
                let o = st.channel.observe(&s, &probe, i, &b, &[0.0]);
                let a = recipe.action_vector(p.a1_index, p.rule.pick(o[0]));
                for (m, v) in mu.iter_mut().zip(st.phi_x.eval(&s, &a, &o)) {
                    *m += w * v;
                }
            }
            Ok(mu)
        })
        .collect()
}
