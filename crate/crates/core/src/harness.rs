//! Experiment plumbing: configuration files, the benchmark runner, CSV
//! persistence and the file-based ask/tell workflow.

mod asktell;
mod bench;
mod config;

pub use asktell::{export_function, suggest, tell, AskTellState};
pub use bench::{
    read_summary_csv, read_trace_csv, run_bench, summarise, write_summary_csv, write_trace_csv,
    BenchOutcome, SummaryRow, TraceRow,
};
pub use config::{ExperimentConfig, ObjectiveConfig, ObjectiveKind, KNOWN_KEYS};
