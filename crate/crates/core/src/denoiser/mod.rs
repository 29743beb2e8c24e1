//! The noise-prediction network, its training loop and checkpoint format.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{Checkpoint, CheckpointHeader, TrainingMeta, FORMAT_VERSION, MAGIC};
pub use mlp::{time_embedding, Activation, Architecture, DenoiserModel, Tape};
pub use train::{train, train_from, OptimizerInfo, TrainConfig, Trained};
