//! Recommendation with noncompliant agents: the principal recommends one of
//! two items, the agent picks the item maximizing `<b, p> + beta <b, a> +
//! <b, gamma> s` and the principal observes the choice, `o = b`.
//!
//! The preference vector `p = (u, -u)` confounds both the reward and the next
//! state. Features are `(1, s) ⊗ b`, instruments `(1, s) ⊗ a`.

use serde::{Deserialize, Serialize};

use crate::aggregated::MarkovPolicy;
use crate::env::{
    AgentModel, AgentUtility, Block, ConfounderMap, EnvStructure, FeatureMap, InitialState, InputDims, LinearChannel,
    ObservationChannel, StageStructure, StrategicMdpSpec, TypeDistribution,
};
use crate::error::{dim_check, Error, Result};

const ITEMS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoncompliantRecipe {
    pub horizon: usize,
    /// Support of the preference strength `u`, drawn uniformly.
    pub preference_values: Vec<f64>,
    /// Weight the agent puts on following the recommendation.
    pub beta: f64,
    /// State sensitivity of each item's utility.
    pub gamma: [f64; ITEMS],
    pub kappa_reward: f64,
    pub kappa_transition: f64,
    /// Reward weights on `(b, s b)`.
    pub theta_star: Vec<f64>,
    /// Transition weights on `(b, s b)`.
    pub transition_star: Vec<f64>,
    pub sigma: f64,
    pub eps_scale: f64,
    pub initial_states: Vec<f64>,
    /// State grid of the deterministic policy class.
    pub policy_grid: Vec<f64>,
}

impl Default for NoncompliantRecipe {
    fn default() -> Self {
        Self {
            horizon: 2,
            preference_values: vec![-1.0, -0.3, 0.3, 1.0],
            beta: 0.8,
            gamma: [0.5, 0.0],
            kappa_reward: 1.0,
            kappa_transition: 1.0,
            theta_star: vec![1.0, 0.2, 0.3, -0.3],
            transition_star: vec![0.5, -0.5, 0.4, 0.2],
            sigma: 0.3,
            eps_scale: 0.3,
            initial_states: vec![-1.0, 1.0],
            policy_grid: vec![-1.0, 1.0],
        }
    }
}

impl NoncompliantRecipe {
    /// Agents who always follow the recommendation, so `o = a`.
    pub fn compliant() -> Self {
        Self {
            beta: 10.0,
            ..Self::default()
        }
    }

    pub fn actions(&self) -> Vec<Vec<f64>> {
        (0..ITEMS)
            .map(|k| (0..ITEMS).map(|j| f64::from(u8::from(j == k))).collect())
            .collect()
    }

    /// Every deterministic map from (stage, grid point) to an item.
    pub fn policies(&self) -> Result<Vec<MarkovPolicy>> {
        let g = self.policy_grid.len();
        let cells = self.horizon * g;
        if g == 0 || cells > 16 {
            return Err(Error::Config(format!(
                "policy grid of {g} points over {} stages gives too many policies",
                self.horizon
            )));
        }
        let grid: Vec<Vec<f64>> = self.policy_grid.iter().map(|&s| vec![s]).collect();
        (0..ITEMS.pow(cells as u32))
            .map(|code| {
                let choice: Vec<Vec<usize>> = (0..self.horizon)
                    .map(|h| (0..g).map(|c| (code / ITEMS.pow((h * g + c) as u32)) % ITEMS).collect())
                    .collect();
                MarkovPolicy::deterministic(grid.clone(), &choice, ITEMS)
            })
            .collect()
    }
}

pub fn build_noncompliant_rec(recipe: &NoncompliantRecipe) -> Result<StrategicMdpSpec> {
    if recipe.horizon == 0 || recipe.preference_values.is_empty() || recipe.initial_states.is_empty() {
        return Err(Error::Config(
            "horizon, preference support and initial states must be nonempty".into(),
        ));
    }
    let d = 2 * ITEMS;
    dim_check(
        recipe.theta_star.len() == d && recipe.transition_star.len() == d,
        || format!("theta_star and transition_star must have length {d}"),
    )?;
    let support: Vec<Vec<f64>> = recipe.preference_values.iter().map(|&u| vec![u, -u]).collect();
    let n = support.len() as f64;
    let weights = vec![1.0 / n; support.len()];
    let mean_u = recipe.preference_values.iter().sum::<f64>() / n;
    let center = vec![mean_u, -mean_u];
    let identity: Vec<Vec<f64>> = (0..ITEMS)
        .map(|r| (0..ITEMS).map(|c| f64::from(u8::from(r == c))).collect())
        .collect();
    let inputs = InputDims {
        state: 1,
        action: ITEMS,
        obs: ITEMS,
    };
    let lift = || Block::Concat(vec![Block::Intercept, Block::state()]);
    let stage = StageStructure {
        types: TypeDistribution::Finite { support, weights },
        agent: AgentModel::FiniteArgmax {
            candidates: recipe.actions(),
            utility: AgentUtility::Bilinear {
                quad: 0.0,
                from_action: Some(
                    identity
                        .iter()
                        .map(|r| r.iter().map(|v| recipe.beta * v).collect())
                        .collect(),
                ),
                from_state: Some(recipe.gamma.iter().map(|&g| vec![g]).collect()),
                from_type: Some(identity.clone()),
                offset: None,
            },
        },
        channel: ObservationChannel::Linear(LinearChannel {
            obs_dim: ITEMS,
            from_agent: Some(identity),
            ..Default::default()
        }),
        reward_confounder: ConfounderMap::Linear {
            weights: vec![vec![recipe.kappa_reward, 0.0]],
            center: center.clone(),
        },
        transition_confounder: ConfounderMap::Linear {
            weights: vec![vec![recipe.kappa_transition, 0.0]],
            center,
        },
        phi_x: FeatureMap::new(Block::kron(lift(), Block::obs()), inputs)?,
        psi_z: FeatureMap::new(Block::kron(lift(), Block::action()), inputs)?,
    };
    let m = recipe.initial_states.len();
    let structure = EnvStructure {
        horizon: recipe.horizon,
        state_dim: 1,
        action_set: recipe.actions(),
        stages: vec![stage; recipe.horizon],
        sigma: recipe.sigma,
        initial_state: InitialState::Finite {
            support: recipe.initial_states.iter().map(|&s| vec![s]).collect(),
            weights: vec![1.0 / m as f64; m],
        },
    };
    StrategicMdpSpec::new(
        structure,
        vec![recipe.theta_star.clone(); recipe.horizon],
        vec![vec![recipe.transition_star.clone()]; recipe.horizon],
        recipe.eps_scale,
    )
}
