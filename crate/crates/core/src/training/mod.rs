//! Datasets, standardization, the coupled losses, Adam with a staircase schedule, and the
//! training loop.

mod data;
mod loss;
mod optim;
mod train;

pub use data::{build_dataset, PairBatch, PairSampler, Preprocessor, TrajectoryData, STD_FLOOR};
pub use loss::{
    evaluate_losses, loss_ae, loss_flow, loss_pred, loss_pred_reduced, loss_stab, objective,
    total_objective, LossValues, LossWeights,
};
pub use optim::{adam_step, lr_schedule, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use train::{train, History, HistoryRow, TrainConfig, TrainOutcome};
