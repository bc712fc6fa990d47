//! Feature maps `(s, a, o) -> R^n` built from a small block algebra.
//!
//! A map is a tree of blocks: raw slices of the state, action or observation,
//! a constant intercept, concatenations, and Kronecker products. The tree is
//! serializable, so recipes can declare their covariate and instrument maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Intercept,
    /// `state[start..start+len]`; the whole vector when `range` is absent.
    State {
        #[serde(default)]
        range: Option<(usize, usize)>,
    },
    Action {
        #[serde(default)]
        range: Option<(usize, usize)>,
    },
    Obs {
        #[serde(default)]
        range: Option<(usize, usize)>,
    },
    Concat(Vec<Block>),
    Kron(Box<Block>, Box<Block>),
}

impl Block {
    pub fn state() -> Self {
        Block::State { range: None }
    }
    pub fn action() -> Self {
        Block::Action { range: None }
    }
    pub fn obs() -> Self {
        Block::Obs { range: None }
    }
    pub fn action_slice(start: usize, len: usize) -> Self {
        Block::Action {
            range: Some((start, len)),
        }
    }
    pub fn kron(a: Block, b: Block) -> Self {
        Block::Kron(Box::new(a), Box::new(b))
    }

    fn dim(&self, dims: InputDims) -> Result<usize> {
        let slice_dim = |range: &Option<(usize, usize)>, full: usize, what: &str| match range {
            None => Ok(full),
            Some((start, len)) if start + len <= full => Ok(*len),
            Some((start, len)) => Err(Error::Dimension(format!(
                "{what} slice {start}+{len} exceeds dimension {full}"
            ))),
        };
        match self {
            Block::Intercept => Ok(1),
            Block::State { range } => slice_dim(range, dims.state, "state"),
            Block::Action { range } => slice_dim(range, dims.action, "action"),
            Block::Obs { range } => slice_dim(range, dims.obs, "observation"),
            Block::Concat(parts) => parts.iter().map(|p| p.dim(dims)).sum(),
            Block::Kron(a, b) => Ok(a.dim(dims)? * b.dim(dims)?),
        }
    }

    /// Polynomial degree in the observation.
    fn obs_degree(&self) -> usize {
        match self {
            Block::Obs { .. } => 1,
            Block::Intercept | Block::State { .. } | Block::Action { .. } => 0,
            Block::Concat(parts) => parts.iter().map(Block::obs_degree).max().unwrap_or(0),
            Block::Kron(a, b) => a.obs_degree() + b.obs_degree(),
        }
    }

    fn eval_into(&self, s: &[f64], a: &[f64], o: &[f64], out: &mut Vec<f64>) {
        let slice = |v: &[f64], range: &Option<(usize, usize)>, out: &mut Vec<f64>| match range {
            None => out.extend_from_slice(v),
            Some((start, len)) => out.extend_from_slice(&v[*start..start + len]),
        };
        match self {
            Block::Intercept => out.push(1.0),
            Block::State { range } => slice(s, range, out),
            Block::Action { range } => slice(a, range, out),
            Block::Obs { range } => slice(o, range, out),
            Block::Concat(parts) => {
                for p in parts {
                    p.eval_into(s, a, o, out);
                }
            }
            Block::Kron(x, y) => {
                let mut left = Vec::new();
                let mut right = Vec::new();
                x.eval_into(s, a, o, &mut left);
                y.eval_into(s, a, o, &mut right);
                for l in &left {
                    for r in &right {
                        out.push(l * r);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub state: usize,
    pub action: usize,
    pub obs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub block: Block,
    pub inputs: InputDims,
    pub dim: usize,
}

impl FeatureMap {
    pub fn new(block: Block, inputs: InputDims) -> Result<Self> {
        let dim = block.dim(inputs)?;
        if dim == 0 {
            return Err(Error::Dimension("feature map has dimension 0".into()));
        }
        Ok(Self { block, inputs, dim })
    }

    pub fn eval(&self, s: &[f64], a: &[f64], o: &[f64]) -> Vec<f64> {
        debug_assert_eq!(s.len(), self.inputs.state);
        debug_assert_eq!(a.len(), self.inputs.action);
        debug_assert_eq!(o.len(), self.inputs.obs);
        let mut out = Vec::with_capacity(self.dim);
        self.block.eval_into(s, a, o, &mut out);
        out
    }

    /// Checked evaluation for inputs coming from outside the crate.
    pub fn try_eval(&self, s: &[f64], a: &[f64], o: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.inputs.state || a.len() != self.inputs.action || o.len() != self.inputs.obs {
            return Err(Error::Dimension(format!(
                "feature map expects (s,a,o) dims {:?}, got ({}, {}, {})",
                self.inputs,
                s.len(),
                a.len(),
                o.len()
            )));
        }
        Ok(self.eval(s, a, o))
    }

    pub fn is_affine_in_obs(&self) -> bool {
        self.block.obs_degree() <= 1
    }

    pub fn uses_obs(&self) -> bool {
        self.block.obs_degree() > 0
    }
}

/// Named covariate/instrument pairs accepted by environment recipes.
pub fn preset(name: &str, inputs: InputDims) -> Result<(FeatureMap, FeatureMap)> {
    let (x, z) = match name {
        "obs" => (Block::obs(), Block::action()),
        "obs_intercept" => (
            Block::Concat(vec![Block::obs(), Block::Intercept]),
            Block::Concat(vec![Block::action(), Block::Intercept]),
        ),
        "state_obs" => (
            Block::Concat(vec![Block::state(), Block::obs()]),
            Block::Concat(vec![Block::state(), Block::action()]),
        ),
        "state_obs_intercept" => (
            Block::Concat(vec![Block::state(), Block::obs(), Block::Intercept]),
            Block::Concat(vec![Block::state(), Block::action(), Block::Intercept]),
        ),
        other => return Err(Error::Config(format!("unknown feature_map preset `{other}`"))),
    };
    Ok((FeatureMap::new(x, inputs)?, FeatureMap::new(z, inputs)?))
}
