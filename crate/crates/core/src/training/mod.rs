//! Joint optimization of the neural field, the NeuS variance and the pose
//! increments, with warm-up filtering and coarse-to-fine annealing.

mod adam;
mod checkpoint;
mod config;
mod trainer;

pub use adam::{cosine_lr, Adam};
pub use checkpoint::{Checkpoint, CheckpointHeader, PoseRecord, CHECKPOINT_FORMAT};
pub use config::{anneal_alpha, TrainConfig};
pub use trainer::{fit_sphere_prior, run_training, Batch, Gradients, LogRow, RunPaths, StepStats, TermWeights, TrainOutcome, Trainer, CSV_HEADER, MAX_NONFINITE_STEPS};
