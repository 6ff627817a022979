//! Staged training, evaluation, persistence and the command line.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod eval;
pub mod losses;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{LossWeights, StageConfig, TrainConfig};
pub use eval::{evaluate, EvalReport, Metrics, Planner};
pub use losses::{drive_loss, total_loss};
pub use train::{run_stage, train_stages, TrainingLog};
