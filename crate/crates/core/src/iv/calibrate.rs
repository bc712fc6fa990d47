//! Calibration of the threshold constant on an unconfounded twin environment.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{collect_dataset, BehaviorPolicy, ConfounderMap, EnvStructure, StrategicMdpSpec, TypeDistribution};
use crate::error::{Error, Result};
use crate::iv::ellipsoid::ConfidenceEllipsoid;
use crate::iv::fit_all::fit_all;
use crate::iv::threshold::ThresholdSettings;
use crate::rng::{derive_seed, rng_from_seed};

/// Smallest `c0` on a 0.1 grid with `P(q ≤ c0) ≥ 1 - δ` over the samples.
pub fn calibrate_c0(stats: &[f64], delta: f64) -> Result<f64> {
    if stats.is_empty() {
        return Err(Error::Config("no calibration statistics".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config("delta must lie in (0, 1)".into()));
    }
    let mut q: Vec<f64> = stats.to_vec();
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite calibration statistic".into()));
    }
    q.sort_by(f64::total_cmp);
    let need = ((1.0 - delta) * q.len() as f64 - 1e-9).ceil().max(1.0) as usize;
    let quantile = q[need - 1];
    let mut c0 = ((quantile * 10.0).ceil() / 10.0).max(0.1);
    // guard against the grid value rounding just below the order statistic
    while q.iter().filter(|&&v| v <= c0).count() < need {
        c0 += 0.1;
    }
    Ok((c0 * 10.0).round() / 10.0)
}

/// Per-coordinate variance of a confounder under the type population.
pub fn confounder_variance(types: &TypeDistribution, map: &ConfounderMap) -> Vec<f64> {
    let d = map.out_dim();
    match (types, map) {
        (_, ConfounderMap::Zero { .. }) => vec![0.0; d],
        (TypeDistribution::Gaussian { std, .. }, ConfounderMap::Linear { weights, .. }) => weights
            .iter()
            .map(|row| row.iter().zip(std).map(|(w, s)| w * w * s * s).sum())
            .collect(),
        (TypeDistribution::Finite { support, weights }, _) => {
            let vals: Vec<Vec<f64>> = support.iter().map(|i| map.eval(i)).collect();
            (0..d)
                .map(|j| {
                    let mean: f64 = vals.iter().zip(weights).map(|(v, w)| w * v[j]).sum();
                    vals.iter().zip(weights).map(|(v, w)| w * (v[j] - mean).powi(2)).sum()
                })
                .collect()
        }
        (TypeDistribution::Gaussian { .. }, ConfounderMap::Custom { .. }) => {
            let mut rng = rng_from_seed(0x5EED);
            let n = 100_000;
            let draws: Vec<Vec<f64>> = (0..n).map(|_| map.eval(&types.sample(&mut rng))).collect();
            (0..d)
                .map(|j| {
                    let mean = draws.iter().map(|v| v[j]).sum::<f64>() / n as f64;
                    draws.iter().map(|v| (v[j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                })
                .collect()
        }
    }
}

/// The same environment with the confounders removed and their variance moved
/// into independent noise.
pub fn unconfounded_twin(spec: &StrategicMdpSpec) -> Result<StrategicMdpSpec> {
    let env = &*spec.structure;
    let mut extra_eps: f64 = 0.0;
    let mut extra_sigma: f64 = 0.0;
    let mut stages = env.stages.clone();
    for st in &mut stages {
        extra_eps = extra_eps.max(confounder_variance(&st.types, &st.reward_confounder)[0]);
        extra_sigma = confounder_variance(&st.types, &st.transition_confounder)
            .into_iter()
            .fold(extra_sigma, f64::max);
        st.reward_confounder = ConfounderMap::Zero { out_dim: 1 };
        st.transition_confounder = ConfounderMap::Zero { out_dim: env.state_dim };
    }
    let structure = EnvStructure {
        stages,
        sigma: (env.sigma * env.sigma + extra_sigma).sqrt(),
        ..env.clone()
    };
    Ok(StrategicMdpSpec {
        structure: Arc::new(structure),
        reward_params: spec.reward_params.clone(),
        transition_params: spec.transition_params.clone(),
        eps_scale: (spec.eps_scale * spec.eps_scale + extra_eps).sqrt(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c0_reward: f64,
    pub c0_transition: f64,
    /// Per replication, the largest normalized distance of a true reward parameter.
    pub q_reward: Vec<f64>,
    pub q_transition: Vec<f64>,
}

impl Calibration {
    pub fn apply(&self, settings: &ThresholdSettings) -> ThresholdSettings {
        ThresholdSettings {
            c0: self.c0_reward,
            c0_transition: Some(self.c0_transition),
            ..*settings
        }
    }
}

/// Normalized distance `√((θ* - θ̂)ᵀA(θ* - θ̂)) / c` of a true parameter.
pub fn normalized_distance(e: &ConfidenceEllipsoid, truth: &[f64]) -> f64 {
    let c = e.radius();
    let q = e.quad_form(truth).max(0.0).sqrt();
    if c == 0.0 {
        if q == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        q / c
    }
}

/// Runs `reps` replications on the unconfounded twin of `spec` at sample size
/// `k` and returns per-family constants. Thresholds use the structure of
/// `spec`, so the constants transfer to it.
pub fn calibrate_thresholds(
    spec: &StrategicMdpSpec,
    behavior: &BehaviorPolicy,
    k: usize,
    reps: usize,
    settings: &ThresholdSettings,
    lambda: Option<f64>,
    seed: u64,
) -> Result<Calibration> {
    if reps == 0 {
        return Err(Error::Config("calibration needs at least one replication".into()));
    }
    let twin = unconfounded_twin(spec)?;
    let unit = ThresholdSettings {
        c0: 1.0,
        c0_transition: Some(1.0),
        ..*settings
    };
    let mut q_reward = Vec::with_capacity(reps);
    let mut q_transition = Vec::with_capacity(reps);
    for rep in 0..reps {
        let ds = collect_dataset(&twin, behavior, k, derive_seed(seed, rep as u64))?;
        let fits = fit_all(&spec.structure, &ds.observed, lambda, &unit)?;
        let mut qr: f64 = 0.0;
        let mut qt: f64 = 0.0;
        for s in &fits.stages {
            qr = qr.max(normalized_distance(&s.reward.ellipsoid()?, &spec.reward_params[s.h]));
            for (j, t) in s.transition.iter().enumerate() {
                qt = qt.max(normalized_distance(&t.ellipsoid()?, &spec.transition_params[s.h][j]));
            }
        }
        q_reward.push(qr);
        q_transition.push(qt);
    }
    Ok(Calibration {
        c0_reward: calibrate_c0(&q_reward, settings.delta)?,
        c0_transition: calibrate_c0(&q_transition, settings.delta)?,
        q_reward,
        q_transition,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c0_is_the_rounded_up_quantile() {
        let q: Vec<f64> = (1..=100).map(|i| i as f64 / 50.0).collect();
        // 95th smallest is 1.9
        assert_eq!(calibrate_c0(&q, 0.05).unwrap(), 1.9);
        assert_eq!(calibrate_c0(&[0.01, 0.02], 0.5).unwrap(), 0.1);
        assert_eq!(calibrate_c0(&[1.23], 0.05).unwrap(), 1.3);
        assert!(calibrate_c0(&[], 0.05).is_err());
    }

    #[test]
    fn variance_of_linear_confounders() {
        let types = TypeDistribution::Gaussian {
            mean: vec![0.0, 0.0],
            std: vec![1.0, 2.0],
        };
        let map = ConfounderMap::Linear {
            weights: vec![vec![0.5, 0.5]],
            center: vec![0.0, 0.0],
        };
        assert!((confounder_variance(&types, &map)[0] - 1.25).abs() < 1e-12);
        let finite = TypeDistribution::Finite {
            support: vec![vec![1.0, 0.0], vec![-1.0, 0.0]],
            weights: vec![0.5, 0.5],
        };
        assert!((confounder_variance(&finite, &map)[0] - 0.25).abs() < 1e-12);
    }
}
