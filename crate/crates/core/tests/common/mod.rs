#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plan_iv::env::{
    AgentModel, Block, ConfounderMap, EnvStructure, FeatureMap, Gain, InitialState, InputDims, LinearChannel,
    ObservationChannel, StageStructure, StrategicMdpSpec, TypeDistribution,
};
use plan_iv::iv::{StageDesign, TargetTag};
use plan_iv::rng::{rng_from_seed, std_normal};

pub fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|r| (0..n).map(|c| f64::from(u8::from(r == c))).collect())
        .collect()
}

/// One-stage structure where the agent copies the action and `o = b`.
pub fn copy_stage(state: usize, action: usize, types: TypeDistribution, phi: Block, psi: Block) -> StageStructure {
    let inputs = InputDims {
        state,
        action,
        obs: action,
    };
    StageStructure {
        types,
        agent: AgentModel::ClosedFormLinear {
            action_range: None,
            gain: Gain::Fixed { w: identity(action) },
        },
        channel: ObservationChannel::Linear(LinearChannel {
            obs_dim: action,
            from_agent: Some(identity(action)),
            ..Default::default()
        }),
        reward_confounder: ConfounderMap::Zero { out_dim: 1 },
        transition_confounder: ConfounderMap::Zero { out_dim: state },
        phi_x: FeatureMap::new(phi, inputs).unwrap(),
        psi_z: FeatureMap::new(psi, inputs).unwrap(),
    }
}

pub fn structure(
    stages: Vec<StageStructure>,
    state_dim: usize,
    actions: Vec<Vec<f64>>,
    sigma: f64,
    s0: Vec<f64>,
) -> EnvStructure {
    EnvStructure {
        horizon: stages.len(),
        state_dim,
        action_set: actions,
        stages,
        sigma,
        initial_state: InitialState::Point { state: s0 },
    }
}

pub fn spec(env: EnvStructure, theta: Vec<Vec<f64>>, big_theta: Vec<Vec<Vec<f64>>>, eps: f64) -> StrategicMdpSpec {
    StrategicMdpSpec::new(env, theta, big_theta, eps).unwrap()
}

pub fn point_type(v: Vec<f64>) -> TypeDistribution {
    TypeDistribution::Finite {
        support: vec![v],
        weights: vec![1.0],
    }
}

/// Random overidentified design with `x` correlated to `z`.
pub fn random_design(seed: u64, k: usize, m: usize, n: usize) -> StageDesign {
    let mut rng = rng_from_seed(seed);
    let z = DMatrix::from_fn(k, m, |_, _| std_normal(&mut rng));
    let mix = DMatrix::from_fn(m, n, |_, _| std_normal(&mut rng));
    let noise = DMatrix::from_fn(k, n, |_, _| 0.5 * std_normal(&mut rng));
    let x = &z * mix + noise;
    let y = DVector::from_fn(k, |_, _| std_normal(&mut rng));
    StageDesign::new(x, z, y, 0, TargetTag::Reward).unwrap()
}

/// The one-dimensional confounded design: `z` uniform on {-1, 1}, `x = z + u`,
/// `y = x + u`, `u ~ N(0, 1)`.
pub fn confounded_1d(seed: u64, k: usize) -> StageDesign {
    let mut rng = rng_from_seed(seed);
    let mut z = DMatrix::zeros(k, 1);
    let mut x = DMatrix::zeros(k, 1);
    let mut y = DVector::zeros(k);
    for r in 0..k {
        let zr = if std_normal(&mut rng) < 0.0 { -1.0 } else { 1.0 };
        let u = std_normal(&mut rng);
        z[(r, 0)] = zr;
        x[(r, 0)] = zr + u;
        y[r] = zr + 2.0 * u;
    }
    StageDesign::new(x, z, y, 0, TargetTag::Reward).unwrap()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Projection onto the column span of `z` through a thin QR factorization.
pub fn qr_projection(z: &DMatrix<f64>) -> DMatrix<f64> {
    let q = z.clone().qr().q();
    &q * q.transpose()
}

/// Inner maximization of `(1/K) Σ e_k βᵀz_k - (1/2K) Σ (βᵀz_k)² - (λ/2K)|β|²`
/// by plain gradient ascent.
pub fn loss_by_ascent(d: &StageDesign, theta: &[f64], lambda: f64) -> f64 {
    let k = d.k() as f64;
    let e = &d.y - &d.x * DVector::from_column_slice(theta);
    let mut g = d.z.transpose() * &d.z;
    for i in 0..g.nrows() {
        g[(i, i)] += lambda;
    }
    let ze = d.z.transpose() * &e;
    let lmax = g.clone().symmetric_eigen().eigenvalues.max();
    let mut beta = DVector::zeros(d.m());
    for _ in 0..20_000 {
        let grad = (&ze - &g * &beta) / k;
        if grad.norm() < 1e-15 {
            break;
        }
        beta += grad * (k / lmax);
    }
    (2.0 * beta.dot(&ze) - beta.dot(&(&g * &beta))) / (2.0 * k)
}
