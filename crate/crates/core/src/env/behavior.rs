//! Behavior policies used for offline data collection.

use std::fmt;
use std::sync::Arc;

use crate::aggregated::MarkovPolicy;
use crate::env::spec::{check_probability_vector, EnvStructure};
use crate::error::{Error, Result};

/// `(h, encoded history, s_h) -> probabilities over the action set`.
pub type HistoryPolicyFn = Arc<dyn Fn(usize, &[f64], &[f64]) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub enum BehaviorPolicy {
    Uniform,
    Fixed(Vec<f64>),
    PerStage(Vec<Vec<f64>>),
    Markov(MarkovPolicy),
    Custom { tag: String, f: HistoryPolicyFn },
}

impl fmt::Debug for BehaviorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tag())
    }
}

impl BehaviorPolicy {
    pub fn tag(&self) -> String {
        match self {
            BehaviorPolicy::Uniform => "uniform".into(),
            BehaviorPolicy::Fixed(_) => "fixed".into(),
            BehaviorPolicy::PerStage(_) => "per_stage".into(),
            BehaviorPolicy::Markov(_) => "markov".into(),
            BehaviorPolicy::Custom { tag, .. } => tag.clone(),
        }
    }

    /// Action probabilities at stage `h`, validated to be a distribution.
    pub fn probs(&self, h: usize, history: &[f64], s: &[f64], n_actions: usize) -> Result<Vec<f64>> {
        let p = match self {
            BehaviorPolicy::Uniform => vec![1.0 / n_actions as f64; n_actions],
            BehaviorPolicy::Fixed(p) => p.clone(),
            BehaviorPolicy::PerStage(rows) => rows
                .get(h)
                .cloned()
                .ok_or_else(|| Error::Config(format!("behavior policy has no row for stage {h}")))?,
            BehaviorPolicy::Markov(pi) => pi.probs(h, s).to_vec(),
            BehaviorPolicy::Custom { f, .. } => f(h, history, s),
        };
        if p.len() != n_actions {
            return Err(Error::Dimension(format!(
                "behavior policy returned {} probabilities for {n_actions} actions",
                p.len()
            )));
        }
        if let BehaviorPolicy::Uniform = self {
            return Ok(p);
        }
        check_probability_vector(&p)?;
        Ok(p)
    }
}

/// Width of one `(s, a-index, o)` history record.
pub fn history_record_width(env: &EnvStructure) -> usize {
    let max_obs = env.stages.iter().map(|s| s.channel.obs_dim()).max().unwrap_or(0);
    env.state_dim + 1 + max_obs
}

/// Flat encoding of the first `h` history records, zero-padded to `H - 1` records.
pub fn encode_history(env: &EnvStructure, states: &[Vec<f64>], actions: &[usize], obs: &[Vec<f64>]) -> Vec<f64> {
    let width = history_record_width(env);
    let mut out = vec![0.0; width * env.horizon.saturating_sub(1)];
    for t in 0..actions.len().min(env.horizon.saturating_sub(1)) {
        let rec = &mut out[t * width..(t + 1) * width];
        rec[..env.state_dim].copy_from_slice(&states[t]);
        rec[env.state_dim] = actions[t] as f64;
        rec[env.state_dim + 1..env.state_dim + 1 + obs[t].len()].copy_from_slice(&obs[t]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_distributions() {
        assert!(BehaviorPolicy::Fixed(vec![0.5, 0.6]).probs(0, &[], &[0.0], 2).is_err());
        assert!(BehaviorPolicy::Fixed(vec![1.5, -0.5]).probs(0, &[], &[0.0], 2).is_err());
        assert!(BehaviorPolicy::Fixed(vec![0.5]).probs(0, &[], &[0.0], 2).is_err());
        let p = BehaviorPolicy::Uniform.probs(0, &[], &[0.0], 4).unwrap();
        assert_eq!(p, vec![0.25; 4]);
    }
}
