//! Deterministic discrete-event simulation of federated verification runs.

mod config;
mod data;
mod diagnostics;
mod engine;
mod event;
mod trace;

use thiserror::Error;

pub use config::{
    AggregationConfig, BaselineConfig, DataSpec, ExperimentConfig, LatencyModel, Method,
    ModelConfig, ModelKind, StopRule,
};
pub use data::{
    generate_dataset, generate_population, DatasetBundle, GeneratorTruth, ACTION_VOCAB, GOAL_VOCAB,
};
pub use diagnostics::{
    estimate_trigger_bias, measure_staleness, pl_diagnostic, stop_check, PlReport, StalenessReport,
};
pub use engine::{
    build_inputs, run_baseline, run_method, run_ssafl, run_with_inputs, RunOutput, SimInputs,
};
pub use event::{EventKind, EventQueue, SimEvent};
pub use trace::{
    write_metrics_csv, EventTrace, MetricsRow, RunSummary, TraceEvent, TraceKind, WindowRecord,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid experiment spec: {0}")]
    BadSpec(String),
    #[error("intent: {0}")]
    Intent(#[from] crate::intent::IntentError),
    #[error("training: {0}")]
    Fl(#[from] crate::fl::FlError),
    #[error("no aggregation windows in trace")]
    NoWindows,
    #[error("diagnostic run diverged (final loss {0})")]
    Diverged(f64),
    #[error("io: {0}")]
    Io(String),
}
