//! Losses, optimization, and learning-curve logging.

pub mod loss;
pub mod optim;
pub mod runlog;
pub mod sweep;
pub mod trainer;

pub use loss::{symmetry_loss, task_loss, LossSpec, SymmetrySpec};
pub use optim::{OptimizerSpec, ScheduleFreeAdamW};
pub use runlog::{read_runlogs, CurvePoint, RunLog, RunMeta};
pub use trainer::{evaluate, symmetry_flops_multiplier, train, TrainOutcome, TrainSpec};
