//! Gaussian-process velocity fields and trajectory rollout.
//!
//! Each (entering direction, maneuver) cluster gets a pair of independent GPs
//! mapping position to `vx` and `vy`. Hyperparameters are fitted by Adam on
//! the negative log marginal likelihood; future positions come from repeatedly
//! querying the field and taking an Euler step.

mod kernel;
mod model;
mod rollout;

pub use kernel::{kernel_eval, KernelConfig, KernelKind};
pub use model::{
    fit_gpr, median_pairwise_distance, nlml, nlml_and_grad, posterior_predict, subsample_indices, GprModel,
    GprModelRecord, GprSettings, Standardization,
};
pub use rollout::{rollout, train_cluster_models, ClusterModels, GprModelPair, RolloutConfig, RolloutMode};
