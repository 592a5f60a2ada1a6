//! Benchmark harness: configuration, experiment orchestration, persistence
//! and plot-data output for the `neutra` command.

pub mod bench;
pub mod cli;
pub mod config;
pub mod corner;
pub mod output;
pub mod pipeline;

pub use config::{ExperimentConfig, Method, ModelKind, UsageError};
pub use pipeline::{execute, execute_with_flow, RunOutcome};
