//! Optimizer, learning-rate schedules, stage plans and the training loop.

pub mod optimizer;
pub mod plan;
pub mod run;
pub mod schedule;

pub use optimizer::{clip_global_norm, AdamW, AdamWConfig, StepStats, ADAM_EPS};
pub use plan::{Stage, TrainPlan};
pub use run::{planned_steps, run_stage, StageData, StageReport, StepRecord};
pub use schedule::{Schedule, ScheduleKind, Warmup};
