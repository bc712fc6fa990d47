//! JSON recipe for a generic confounded linear strategic MDP.

use serde::{Deserialize, Serialize};

use crate::env::features::{preset, InputDims};
use crate::env::spec::{
    AgentModel, ConfounderMap, EnvStructure, Gain, InitialState, LinearChannel, ObservationChannel, Rows,
    StageStructure, StrategicMdpSpec, TypeDistribution,
};
use crate::error::{dim_check, Error, Result};
use crate::rng::{rng_from_seed, std_normal};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvRecipe {
    pub horizon: usize,
    pub state_dim: usize,
    pub action_set: Vec<Vec<f64>>,
    /// One of the presets in [`crate::env::features::preset`].
    pub feature_map: String,
    pub confounding_kappa: f64,
    pub sigma: f64,
    pub eps_scale: f64,
    pub param_seed: u64,
    #[serde(default)]
    pub reward_params: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub transition_params: Option<Vec<Rows>>,
    #[serde(default)]
    pub channel_noise: f64,
    #[serde(default)]
    pub initial_state: Option<InitialState>,
}

impl EnvRecipe {
    /// The one-dimensional calibration instance: `a` uniform on {-1, 1},
    /// `u ~ N(0, 1)`, `o = a + u`, `r = o + u`.
    pub fn calibration_1d() -> Self {
        Self {
            horizon: 1,
            state_dim: 1,
            action_set: vec![vec![-1.0], vec![1.0]],
            feature_map: "obs".into(),
            confounding_kappa: 1.0,
            sigma: 0.0,
            eps_scale: 0.0,
            param_seed: 0,
            reward_params: Some(vec![vec![1.0]]),
            transition_params: Some(vec![vec![vec![0.0]]]),
            channel_noise: 0.0,
            initial_state: Some(InitialState::Point { state: vec![0.0] }),
        }
    }
}

fn identity(n: usize) -> Rows {
    (0..n)
        .map(|r| (0..n).map(|c| f64::from(u8::from(r == c))).collect())
        .collect()
}

/// Builds the environment described by `recipe`.
///
/// Agents copy the principal's action (`b = a`); the private type is
/// `u ~ N(0, I)` in the action space and leaks into the observation
/// `o = b + u + noise`, the reward through `kappa <u, 1/sqrt(d)>` and the
/// transition through `kappa u_{j mod d}`.
pub fn make_confounded_linear_env(recipe: &EnvRecipe) -> Result<StrategicMdpSpec> {
    let h_len = recipe.horizon;
    let d1 = recipe.state_dim;
    if h_len == 0 || d1 == 0 {
        return Err(Error::Config("horizon and state_dim must be positive".into()));
    }
    if recipe.action_set.is_empty() {
        return Err(Error::Config("action_set is empty".into()));
    }
    let d = recipe.action_set[0].len();
    dim_check(d > 0 && recipe.action_set.iter().all(|a| a.len() == d), || {
        "action vectors must share a positive dimension".into()
    })?;
    let kappa = recipe.confounding_kappa;
    if !(kappa >= 0.0) {
        return Err(Error::Config("confounding_kappa must be nonnegative".into()));
    }
    let inputs = InputDims {
        state: d1,
        action: d,
        obs: d,
    };
    let (phi_x, psi_z) = preset(&recipe.feature_map, inputs)?;
    let n = phi_x.dim;

    let reward_confounder = if kappa == 0.0 {
        ConfounderMap::Zero { out_dim: 1 }
    } else {
        ConfounderMap::Linear {
            weights: vec![vec![kappa / (d as f64).sqrt(); d]],
            center: vec![0.0; d],
        }
    };
    let transition_confounder = if kappa == 0.0 {
        ConfounderMap::Zero { out_dim: d1 }
    } else {
        ConfounderMap::Linear {
            weights: (0..d1)
                .map(|j| (0..d).map(|c| if c == j % d { kappa } else { 0.0 }).collect())
                .collect(),
            center: vec![0.0; d],
        }
    };
    let stage = StageStructure {
        types: TypeDistribution::Gaussian {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        },
        agent: AgentModel::ClosedFormLinear {
            action_range: None,
            gain: Gain::Fixed { w: identity(d) },
        },
        channel: ObservationChannel::Linear(LinearChannel {
            obs_dim: d,
            from_agent: Some(identity(d)),
            from_type: Some(identity(d)),
            noise_scale: recipe.channel_noise,
            ..Default::default()
        }),
        reward_confounder,
        transition_confounder,
        phi_x,
        psi_z,
    };
    let structure = EnvStructure {
        horizon: h_len,
        state_dim: d1,
        action_set: recipe.action_set.clone(),
        stages: vec![stage; h_len],
        sigma: recipe.sigma,
        initial_state: recipe.initial_state.clone().unwrap_or(InitialState::Gaussian {
            mean: vec![0.0; d1],
            std: vec![1.0; d1],
        }),
    };

    let mut rng = rng_from_seed(recipe.param_seed);
    let mut drawn_reward = Vec::with_capacity(h_len);
    let mut drawn_transition = Vec::with_capacity(h_len);
    let scale = 0.5 / (n as f64).sqrt();
    for _ in 0..h_len {
        drawn_reward.push((0..n).map(|_| std_normal(&mut rng)).collect::<Vec<_>>());
        drawn_transition.push(
            (0..d1)
                .map(|_| (0..n).map(|_| scale * std_normal(&mut rng)).collect())
                .collect::<Rows>(),
        );
    }
    let reward_params = recipe.reward_params.clone().unwrap_or(drawn_reward);
    let transition_params = recipe.transition_params.clone().unwrap_or(drawn_transition);
    StrategicMdpSpec::new(structure, reward_params, transition_params, recipe.eps_scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recipe() -> EnvRecipe {
        EnvRecipe {
            horizon: 2,
            state_dim: 2,
            action_set: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]],
            feature_map: "state_obs_intercept".into(),
            confounding_kappa: 0.7,
            sigma: 0.1,
            eps_scale: 0.2,
            param_seed: 42,
            reward_params: None,
            transition_params: None,
            channel_noise: 0.0,
            initial_state: None,
        }
    }

    #[test]
    fn parameters_are_deterministic_in_the_seed() {
        let a = make_confounded_linear_env(&recipe()).unwrap();
        let b = make_confounded_linear_env(&recipe()).unwrap();
        assert_eq!(a.reward_params, b.reward_params);
        assert_eq!(a.transition_params, b.transition_params);
        let mut other = recipe();
        other.param_seed = 43;
        assert_ne!(
            make_confounded_linear_env(&other).unwrap().reward_params,
            a.reward_params
        );
    }

    #[test]
    fn zero_kappa_means_no_confounding() {
        let mut r = recipe();
        r.confounding_kappa = 0.0;
        let spec = make_confounded_linear_env(&r).unwrap();
        for st in &spec.structure.stages {
            assert!(st.reward_confounder.is_zero());
            assert!(st.transition_confounder.is_zero());
        }
    }

    #[test]
    fn mismatched_dimensions_are_rejected() {
        let mut r = recipe();
        r.reward_params = Some(vec![vec![1.0]; 2]);
        assert!(matches!(make_confounded_linear_env(&r), Err(Error::Dimension(_))));
        let mut r = recipe();
        r.action_set.push(vec![1.0]);
        assert!(make_confounded_linear_env(&r).is_err());
    }

    #[test]
    fn recipe_json_keys() {
        let json = serde_json::to_value(recipe()).unwrap();
        for key in [
            "horizon",
            "state_dim",
            "action_set",
            "feature_map",
            "confounding_kappa",
            "sigma",
            "eps_scale",
            "param_seed",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
