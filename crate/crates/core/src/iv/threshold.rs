//! Radii of the confidence sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iv::design::TargetTag;

/// Inputs of a single threshold evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    pub c0: f64,
    pub delta: f64,
    /// Uniform bound `L` on the function class.
    pub l_bound: f64,
    pub sigma: f64,
    pub horizon: usize,
    pub state_dim: usize,
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub target: TargetTag,
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.c0 > 0.0) {
            return Err(Error::Config(format!("c0 must be positive, got {}", self.c0)));
        }
        if self.k < 1 || self.horizon < 1 || self.state_dim < 1 {
            return Err(Error::Config("K, H and d1 must be positive".into()));
        }
        if !(self.l_bound >= 0.0 && self.sigma >= 0.0) {
            return Err(Error::Config("L and sigma must be nonnegative".into()));
        }
        Ok(())
    }

    /// `L_{K,x} = L + σ √((ln H + 1) ln(K x))`, `x = 1` for rewards and `d1` for transitions.
    pub fn l_k(&self) -> f64 {
        let x = if self.target.is_reward() {
            1.0
        } else {
            self.state_dim as f64
        };
        let k = self.k as f64;
        let inner = ((self.horizon as f64).ln() + 1.0) * (k * x).ln();
        self.l_bound + self.sigma * inner.max(0.0).sqrt()
    }
}

/// `c0 L_{K,x} (√(max(m, n) ln K / K) + √(ln(H d1 / δ) / K))`.
pub fn threshold_linear(cfg: &ThresholdConfig) -> Result<f64> {
    cfg.validate()?;
    let k = cfg.k as f64;
    let dim = cfg.m.max(cfg.n) as f64;
    let first = (dim * k.ln() / k).sqrt();
    let second = ((cfg.horizon as f64 * cfg.state_dim as f64 / cfg.delta).ln() / k).sqrt();
    Ok(cfg.c0 * cfg.l_k() * (first + second))
}

/// Eigenvalue decay of the kernel class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decay {
    Exponential,
    Polynomial { alpha: f64 },
}

/// Kernel-class radius for exponential or polynomial (`α > 1`) eigen-decay.
pub fn threshold_rkhs(decay: Decay, cfg: &ThresholdConfig) -> Result<f64> {
    cfg.validate()?;
    let k = cfg.k as f64;
    let first = match decay {
        Decay::Exponential => (k.ln() / k).sqrt(),
        Decay::Polynomial { alpha } => {
            if !(alpha > 1.0) {
                return Err(Error::Config(format!("polynomial decay needs alpha > 1, got {alpha}")));
            }
            (k.ln() / k.powf(alpha / (alpha + 1.0))).sqrt()
        }
    };
    let second = ((cfg.state_dim as f64 / cfg.delta).ln() / k).sqrt();
    Ok(cfg.c0 * cfg.l_k() * (first + second))
}

/// Function class used to pick the threshold formula.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdClass {
    #[default]
    Linear,
    Rkhs {
        decay: Decay,
    },
}

/// The `threshold` block of an experiment configuration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdSettings {
    /// Constant for reward targets.
    pub c0: f64,
    /// Constant for transition targets; `c0` when absent.
    pub c0_transition: Option<f64>,
    pub delta: f64,
    #[serde(rename = "L")]
    pub l_bound: f64,
    pub class: ThresholdClass,
    /// Norm bound on linear test functions; only used for warnings.
    pub test_bound: Option<f64>,
    /// Calibrate `c0` on an unconfounded twin before fitting.
    pub calibrate: bool,
    pub calibration_reps: usize,
}

impl Default for ThresholdSettings {
    fn default() -> Self {
        Self {
            c0: 1.0,
            c0_transition: None,
            delta: 0.05,
            l_bound: 1.0,
            class: ThresholdClass::Linear,
            test_bound: None,
            calibrate: false,
            calibration_reps: 100,
        }
    }
}

impl ThresholdSettings {
    pub fn c0_for(&self, target: TargetTag) -> f64 {
        match target {
            TargetTag::Reward => self.c0,
            TargetTag::Transition(_) => self.c0_transition.unwrap_or(self.c0),
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn config(
        &self,
        target: TargetTag,
        sigma: f64,
        horizon: usize,
        state_dim: usize,
        k: usize,
        m: usize,
        n: usize,
    ) -> ThresholdConfig {
        ThresholdConfig {
            c0: self.c0_for(target),
            delta: self.delta,
            l_bound: self.l_bound,
            sigma,
            horizon,
            state_dim,
            k,
            m,
            n,
            target,
        }
    }

    pub fn radius(&self, cfg: &ThresholdConfig) -> Result<f64> {
        match self.class {
            ThresholdClass::Linear => threshold_linear(cfg),
            ThresholdClass::Rkhs { decay } => threshold_rkhs(decay, cfg),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ThresholdConfig {
        ThresholdConfig {
            c0: 1.0,
            delta: 0.1,
            l_bound: 1.0,
            sigma: 0.0,
            horizon: 1,
            state_dim: 1,
            k: 100,
            m: 5,
            n: 5,
            target: TargetTag::Reward,
        }
    }

    #[test]
    fn transition_targets_use_k_times_d1() {
        let mut c = base();
        c.sigma = 1.0;
        c.horizon = 3;
        c.state_dim = 4;
        let r = c.l_k();
        c.target = TargetTag::Transition(0);
        let t = c.l_k();
        assert!((r - (1.0 + ((3f64.ln() + 1.0) * 100f64.ln()).sqrt())).abs() < 1e-12);
        assert!((t - (1.0 + ((3f64.ln() + 1.0) * 400f64.ln()).sqrt())).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs() {
        let mut c = base();
        c.delta = 1.0;
        assert!(threshold_linear(&c).is_err());
        let mut c = base();
        c.c0 = 0.0;
        assert!(threshold_linear(&c).is_err());
    }
}
