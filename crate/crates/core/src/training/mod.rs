//! Splitting, optimization, and the epoch loop.

mod optim;
mod split;
mod trainer;

pub use optim::{adam_step, clip_global_norm, Adam, OptimizerSpec};
pub use split::{largest_remainder, stratified_split, Split, SplitIndices, SplitSpec};
pub use trainer::{history_csv, loss_and_accuracy, predict_all, train, EpochRecord, TrainOutcome, TrainSettings};
