//! Asynchronous dual-rate runtime: batch planning under a latency model, the
//! simulated and threaded pipelines, and their event traces.

pub mod pipeline;
pub mod plan;
pub mod synthetic;
pub mod trace;

pub use pipeline::{
    run_pipeline, run_sequential, Backend, Environment, Pipeline, PipelineRun, Stale, TickInput, WallStats,
};
pub use plan::{
    plan_mode, plan_schedule, BatchPlan, Constraint, CostModel, Infeasible, ModePlan, PipelineConfig, PlannedBatch,
};
pub use synthetic::{SyntheticBackend, SyntheticEnv};
pub use trace::{Event, MissKind, ScheduleTrace, TraceStats};
