//! Offline planning in strategic MDPs from confounded data.
//!
//! The crate simulates environments where a principal acts, a best-responding
//! agent with a private type generates an observation, and the private type
//! confounds both reward and transition. From such offline data it fits
//! reward and transition models with instrumental-variable regression, builds
//! confidence ellipsoids around them, and picks a policy by maximizing the
//! worst-case value over the ellipsoids.
//!
//! * [`env`]: environment specification, simulation and datasets.
//! * [`aggregated`]: population-averaged MDP and policy evaluation.
//! * [`iv`]: minimax IV loss, 2SLS, thresholds, ellipsoids, kernel IV.
//! * [`planner`]: pessimistic planning over candidate models.
//! * [`apps`]: ready-made application instances.
//! * [`bench`]: experiment harness behind the `plan-iv` binary.

// `!(x >= 0.0)` rejects NaN along with negatives
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregated;
pub mod apps;
pub mod bench;
pub mod env;
pub mod error;
pub mod iv;
pub mod linalg;
pub mod planner;
pub mod rng;

pub use error::{Error, Result};
