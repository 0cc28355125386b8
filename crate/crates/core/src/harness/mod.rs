//! Desk-scale adaptation experiments.
//!
//! A randomly initialized attention stack plays the frozen base model. A
//! teacher copy receives a structured perturbation on selected projections,
//! and adapters are trained by AdamW to reproduce the teacher's outputs
//! under a mean-squared-error loss.

mod model;
mod optim;
mod task;
mod train;

pub use model::{AdaptedModel, FactorId, Model, Recorded};
pub use optim::{AdamW, LinearWarmup};
pub use task::{make_task, TaskInstance, TeacherKind, ToyTask, REGISTERED_TASKS};
pub use train::{compare_schemes, max_delta_rank, train, ComparisonRow, StepRecord, TrainConfig, TrainLog};
