//! Quantization-aware training at toy scale.

pub mod adam;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod trainer;

pub use adam::{adam_step, AdamParams, AdamState};
pub use config::{cosine_warmup_lr, phase_groups, LossMask, ParamGroup, TrainConfig};
pub use data::{load_dataset, synthetic_dataset, Sample};
pub use gradcheck::{finite_diff_check, GradCheck};
pub use graph::{example_loss, Example, GradStore, LinearMode, ParamStore};
pub use ops::bitlinear_train_step;
pub use trainer::{history_csv, train_toy, StepLog, TrainReport};
