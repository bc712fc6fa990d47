//! Strategic regression: one round, agents of type `(z, W)` best-respond with
//! `b = Wᵀa` and the principal observes `o = z + W Wᵀ a`.

use serde::{Deserialize, Serialize};

use crate::env::{
    AgentModel, Block, ConfounderMap, EnvStructure, FeatureMap, Gain, InitialState, InputDims, LinearChannel,
    ObservationChannel, StageStructure, StrategicMdpSpec, TypeDistribution, TypeMatrix,
};
use crate::error::{dim_check, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionRecipe {
    pub dim: usize,
    pub theta_star: Vec<f64>,
    /// Mean effort matrix `E[W]`, row-major `dim x dim`.
    pub w_mean: Vec<Vec<f64>>,
    /// Standard deviation of each entry of `W` around its mean.
    pub w_noise: f64,
    pub z_mean: Vec<f64>,
    pub z_std: f64,
    /// Reward confounder `g = kappa <z - E z, 1> / sqrt(d)`.
    pub kappa: f64,
    pub eps_scale: f64,
    pub sigma: f64,
    /// Number of actions on the unit circle (`dim = 2`) or evenly spaced on
    /// `[-radius, radius]` (`dim = 1`).
    pub grid_size: usize,
    pub radius: f64,
    /// Explicit action grid, overriding `grid_size`.
    pub action_grid: Option<Vec<Vec<f64>>>,
}

impl Default for RegressionRecipe {
    fn default() -> Self {
        Self {
            dim: 2,
            theta_star: vec![1.0, 0.5],
            w_mean: vec![vec![1.0, 0.3], vec![0.0, 0.8]],
            w_noise: 0.2,
            z_mean: vec![0.0, 0.0],
            z_std: 1.0,
            kappa: 1.0,
            eps_scale: 0.5,
            sigma: 0.1,
            grid_size: 360,
            radius: 1.0,
            action_grid: None,
        }
    }
}

impl RegressionRecipe {
    /// `d = 1`, `W = 1`, `z ~ N(0, 1)`, `g = z`, `θ* = 1`, actions `{-1, 1}`:
    /// population OLS slope 1.5, IV slope 1.
    pub fn calibration_1d() -> Self {
        Self {
            dim: 1,
            theta_star: vec![1.0],
            w_mean: vec![vec![1.0]],
            w_noise: 0.0,
            z_mean: vec![0.0],
            z_std: 1.0,
            kappa: 1.0,
            eps_scale: 0.0,
            sigma: 0.0,
            grid_size: 2,
            radius: 1.0,
            action_grid: Some(vec![vec![-1.0], vec![1.0]]),
        }
    }

    pub fn actions(&self) -> Result<Vec<Vec<f64>>> {
        if let Some(g) = &self.action_grid {
            return Ok(g.clone());
        }
        let n = self.grid_size;
        if n == 0 {
            return Err(Error::Config("grid_size must be positive".into()));
        }
        match self.dim {
            1 if n == 1 => Ok(vec![vec![self.radius]]),
            1 => Ok((0..n)
                .map(|k| vec![-self.radius + 2.0 * self.radius * k as f64 / (n - 1) as f64])
                .collect()),
            2 => Ok((0..n)
                .map(|k| {
                    let t = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                    vec![self.radius * t.cos(), self.radius * t.sin()]
                })
                .collect()),
            d => Err(Error::Config(format!(
                "automatic action grids support dim 1 or 2, got {d}; pass action_grid"
            ))),
        }
    }
}

pub fn build_strategic_regression(recipe: &RegressionRecipe) -> Result<StrategicMdpSpec> {
    let d = recipe.dim;
    if d == 0 {
        return Err(Error::Config("dim must be positive".into()));
    }
    dim_check(recipe.theta_star.len() == d && recipe.z_mean.len() == d, || {
        format!("theta_star and z_mean must have length {d}")
    })?;
    dim_check(
        recipe.w_mean.len() == d && recipe.w_mean.iter().all(|r| r.len() == d),
        || format!("w_mean must be {d}x{d}"),
    )?;
    if !(recipe.w_noise >= 0.0 && recipe.z_std >= 0.0 && recipe.kappa >= 0.0) {
        return Err(Error::Config("w_noise, z_std and kappa must be nonnegative".into()));
    }
    let actions = recipe.actions()?;
    let type_dim = d + d * d;
    let mut mean = recipe.z_mean.clone();
    mean.extend(recipe.w_mean.iter().flatten());
    let mut std = vec![recipe.z_std; d];
    std.extend(std::iter::repeat_n(recipe.w_noise, d * d));
    let w = TypeMatrix {
        offset: d,
        rows: d,
        cols: d,
    };
    let pick_z: Vec<Vec<f64>> = (0..d)
        .map(|r| (0..type_dim).map(|c| f64::from(u8::from(r == c))).collect())
        .collect();
    let mut g_weights = vec![0.0; type_dim];
    for gw in g_weights.iter_mut().take(d) {
        *gw = recipe.kappa / (d as f64).sqrt();
    }
    let inputs = InputDims {
        state: 1,
        action: d,
        obs: d,
    };
    let stage = StageStructure {
        types: TypeDistribution::Gaussian {
            mean: mean.clone(),
            std,
        },
        agent: AgentModel::ClosedFormLinear {
            action_range: None,
            gain: Gain::FromType(w),
        },
        channel: ObservationChannel::Linear(LinearChannel {
            obs_dim: d,
            from_type: Some(pick_z),
            type_gain: Some(w),
            ..Default::default()
        }),
        reward_confounder: if recipe.kappa == 0.0 {
            ConfounderMap::Zero { out_dim: 1 }
        } else {
            ConfounderMap::Linear {
                weights: vec![g_weights],
                center: mean,
            }
        },
        transition_confounder: ConfounderMap::Zero { out_dim: 1 },
        phi_x: FeatureMap::new(Block::obs(), inputs)?,
        psi_z: FeatureMap::new(Block::action(), inputs)?,
    };
    let structure = EnvStructure {
        horizon: 1,
        state_dim: 1,
        action_set: actions,
        stages: vec![stage],
        sigma: recipe.sigma,
        initial_state: InitialState::Point { state: vec![0.0] },
    };
    StrategicMdpSpec::new(
        structure,
        vec![recipe.theta_star.clone()],
        vec![vec![vec![0.0; d]]],
        recipe.eps_scale,
    )
}
