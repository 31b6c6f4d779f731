//! Regression models, local SGD training, aggregation rules, and evaluation
//! metrics for the federated verification task.

mod aggregate;
mod metrics;
mod model;

use thiserror::Error;

pub use aggregate::{
    apply_update, fedavg_round, fedasync_update, pre_weight, protected_weights, semiasync_update,
    update_delta, upload_threshold, UploadPolicy,
};
pub use metrics::{evaluate, RegressionMetrics};
pub use model::{
    global_loss, load_checkpoint, local_loss, local_train, mse_gradient, predict, save_checkpoint,
    Arch, LocalDataset, ModelState, TrainingConfig,
};

/// Loss threshold past which a run is treated as diverged.
pub const DIVERGENCE_LOSS_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlError {
    #[error("input has dimension {got}, model expects {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("model architectures do not match: {0} vs {1}")]
    ArchMismatch(String, String),
    #[error("training diverged: loss {0} is non-finite or above the cap")]
    NonFiniteLoss(f64),
    #[error("aggregation weights invalid: {0}")]
    BadWeights(String),
    #[error("all pre-weights are zero")]
    AllZero,
    #[error("minimum weight {w_min} is infeasible for {n} updates")]
    InfeasibleFloor { w_min: f64, n: usize },
    #[error("targets have zero variance; R^2 is undefined")]
    DegenerateTargets,
    #[error("dataset invalid: {0}")]
    BadDataset(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
