//! Retention benchmark: workloads, timed phases, overhead breakdown and
//! report output.

pub mod breakdown;
pub mod config;
pub mod experiment;
pub mod report;
pub mod sweep;
pub mod workload;

pub use breakdown::{breakdown_report, Breakdown};
pub use config::{Kernel, Layout, Model, WorkloadConfig};
pub use experiment::{run_experiment, BenchReport, Bytes, PhaseStats};
pub use report::{emit_report, ReportFormat};
pub use sweep::{sweep_breakdown, sweep_dataset_size, sweep_working_set, RATIOS, SIZES};
pub use workload::{generate, Op, Pattern, Workload};
