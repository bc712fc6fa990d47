//! Instrumental-variable estimation and confidence sets.

pub mod calibrate;
pub mod design;
pub mod ellipsoid;
pub mod fit_all;
pub mod kernel;
pub mod linear;
pub mod threshold;

pub use calibrate::{calibrate_c0, calibrate_thresholds, unconfounded_twin, Calibration};
pub use design::{stage_data, StageData, StageDesign, TargetTag};
pub use ellipsoid::{ConfidenceEllipsoid, LinearMin};
pub use fit_all::{default_lambda, fit_all, FitRecord, FitSet, StageFits};
pub use kernel::{fit_kernel_iv, Kernel, KernelFit, KernelSpec};
pub use linear::{
    dual_maximizer, fit_2sls, fit_2sls_with, ill_posedness_linear, minimax_loss_linear, naive_ols, projected_mse,
    TwoSlsFit,
};
pub use threshold::{threshold_linear, threshold_rkhs, Decay, ThresholdClass, ThresholdConfig, ThresholdSettings};
