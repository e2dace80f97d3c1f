//! Micro-batch streaming engine: windows, triggers, the state store and the
//! four-step pipeline with empty-key release prediction.

pub mod config;
pub mod pipeline;
pub mod sink;
pub mod store;
pub mod window;

pub use config::{Calibration, NoiseOverrides, PipelineConfig};
pub use pipeline::{
    handle_due_predictions, predict_empty_release, run_pipeline, BudgetReport, ContributionAudit, Engine,
    FaultPlan, FaultPoint, RunReport,
};
pub use sink::{JsonLinesSink, MemorySink, ReleaseSink};
pub use store::{KeyState, Progress, StateStore};
pub use window::{assign_windows, split_into_batches, MicroBatch, WindowSpec, Windowed};
