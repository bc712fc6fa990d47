//! Strategic MDP definition, simulation and offline data collection.

pub mod behavior;
pub mod dataset;
pub mod features;
pub mod recipe;
pub mod simulate;
pub mod spec;

pub use behavior::BehaviorPolicy;
pub use dataset::{HiddenTrajectory, ObservableTrajectory, OfflineDataset};
pub use features::{Block, FeatureMap, InputDims};
pub use recipe::{make_confounded_linear_env, EnvRecipe};
pub use simulate::{best_response, collect_dataset, step, StepOutcome};
pub use spec::{
    AgentModel, AgentUtility, ConfounderMap, EnvStructure, Gain, InitialState, LinearChannel, ObservationChannel,
    StageStructure, StrategicMdpSpec, TypeDistribution, TypeMatrix,
};
