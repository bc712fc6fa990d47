//! Per-stage regression designs built from observable data only.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::aggregated::PlanningContext;
use crate::env::ObservableTrajectory;
use crate::error::{Error, Result};

/// Which quantity a design regresses: the reward or one coordinate of the next state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum TargetTag {
    Reward,
    Transition(usize),
}

impl TargetTag {
    pub fn is_reward(&self) -> bool {
        matches!(self, TargetTag::Reward)
    }
}

impl fmt::Display for TargetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetTag::Reward => f.write_str("reward"),
            TargetTag::Transition(j) => write!(f, "transition({j})"),
        }
    }
}

impl FromStr for TargetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "reward" {
            return Ok(TargetTag::Reward);
        }
        s.strip_prefix("transition(")
            .and_then(|r| r.strip_suffix(')'))
            .and_then(|j| j.parse().ok())
            .map(TargetTag::Transition)
            .ok_or_else(|| Error::Config(format!("unknown target tag `{s}`")))
    }
}

impl From<TargetTag> for String {
    fn from(t: TargetTag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for TargetTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// Covariates `X` (K x n), instruments `Z` (K x m) and targets `y`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageDesign {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub y: DVector<f64>,
    pub h: usize,
    pub target: TargetTag,
}

impl StageDesign {
    pub fn new(x: DMatrix<f64>, z: DMatrix<f64>, y: DVector<f64>, h: usize, target: TargetTag) -> Result<Self> {
        let d = Self { x, z, y, h, target };
        d.validate()?;
        Ok(d)
    }

    pub fn k(&self) -> usize {
        self.y.len()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn m(&self) -> usize {
        self.z.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.y.len();
        if k == 0 {
            return Err(Error::Degenerate("design has no rows".into()));
        }
        if self.x.nrows() != k || self.z.nrows() != k {
            return Err(Error::Dimension(format!(
                "X, Z and y must share the row count (got {}, {}, {k})",
                self.x.nrows(),
                self.z.nrows()
            )));
        }
        if self.x.ncols() == 0 || self.z.ncols() == 0 {
            return Err(Error::Dimension("X and Z need at least one column".into()));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.x.as_slice()) || !finite(self.z.as_slice()) || !finite(self.y.as_slice()) {
            return Err(Error::Numerical("design contains NaN or infinite entries".into()));
        }
        Ok(())
    }

    /// Refuses designs with fewer rows than parameters or instruments.
    pub fn require_enough_rows(&self) -> Result<()> {
        if self.k() < self.m().max(self.n()) {
            return Err(Error::Degenerate(format!(
                "K = {} is below max(m, n) = {}",
                self.k(),
                self.m().max(self.n())
            )));
        }
        Ok(())
    }

    pub fn with_target(&self, y: DVector<f64>, target: TargetTag) -> Result<Self> {
        Self::new(self.x.clone(), self.z.clone(), y, self.h, target)
    }
}

/// Covariates, instruments, rewards and next states of one stage.
#[derive(Clone, Debug)]
pub struct StageData {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub rewards: DVector<f64>,
    /// K x d1.
    pub next_states: DMatrix<f64>,
}

impl StageData {
    pub fn design(&self, h: usize, target: TargetTag) -> Result<StageDesign> {
        let y = match target {
            TargetTag::Reward => self.rewards.clone(),
            TargetTag::Transition(j) => {
                if j >= self.next_states.ncols() {
                    return Err(Error::Dimension(format!("no state coordinate {j}")));
                }
                self.next_states.column(j).into_owned()
            }
        };
        StageDesign::new(self.x.clone(), self.z.clone(), y, h, target)
    }
}

/// Evaluates the feature maps on every trajectory, one block per stage.
pub fn stage_data(ctx: &PlanningContext, observed: &[ObservableTrajectory]) -> Result<Vec<StageData>> {
    if observed.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    let k = observed.len();
    (0..ctx.horizon)
        .map(|h| {
            let st = ctx.stage(h);
            let mut x = DMatrix::zeros(k, st.phi_x.dim);
            let mut z = DMatrix::zeros(k, st.psi_z.dim);
            let mut rewards = DVector::zeros(k);
            let mut next_states = DMatrix::zeros(k, ctx.state_dim);
            for (row, t) in observed.iter().enumerate() {
                if t.horizon() != ctx.horizon {
                    return Err(Error::Dimension(format!(
                        "trajectory {row} has horizon {} but the context has {}",
                        t.horizon(),
                        ctx.horizon
                    )));
                }
                let (s, a, o) = (&t.states[h], &t.actions[h], &t.observations[h]);
                let xr = st.phi_x.try_eval(s, a, o)?;
                let zr = st.psi_z.try_eval(s, a, o)?;
                for (c, v) in xr.iter().enumerate() {
                    x[(row, c)] = *v;
                }
                for (c, v) in zr.iter().enumerate() {
                    z[(row, c)] = *v;
                }
                rewards[row] = t.rewards[h];
                if t.states[h + 1].len() != ctx.state_dim {
                    return Err(Error::Dimension(format!("trajectory {row}: next state dimension")));
                }
                for (c, v) in t.states[h + 1].iter().enumerate() {
                    next_states[(row, c)] = *v;
                }
            }
            Ok(StageData {
                x,
                z,
                rewards,
                next_states,
            })
        })
        .collect()
}
