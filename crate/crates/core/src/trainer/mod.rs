//! Optimizers, the training loop and OA / AA / Kappa evaluation.

mod metrics;
mod optim;
mod train;

pub use metrics::{confusion_matrix, EvalReport};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    evaluate, gamma_sweep, predict_pixels, resolve_loss, sweep_csv, train, EpochRecord, History,
    SweepRow, TrainConfig,
};
