//! Experiment harness: configuration, metrics, the runner, CSV export, and
//! hyperparameter sweeps. The CLI in `bin/desom` is a thin wrapper over
//! this module.

pub mod config;
pub mod export;
pub mod metrics;
pub mod runner;
pub mod sweep;

pub use config::{ExperimentConfig, MetricsConfig, ProblemConfig, SeedConfig, SolverSpec};
pub use export::{export_csv, parse_csv, write_outputs};
pub use metrics::{drift_metric, error_metric, fit_contraction, lyapunov_metric};
pub use runner::{run_experiment, ExperimentResult, SolverTrajectory, TrajectoryRow};
