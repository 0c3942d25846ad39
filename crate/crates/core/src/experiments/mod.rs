//! Config-driven convergence studies and their CSV reports.

pub mod config;
pub mod problems;
pub mod report;
pub mod runner;

pub use config::{ExperimentConfig, Overrides, ProblemKind, StrategySpec};
pub use problems::{build_problem, ProblemSetup};
pub use report::{fit_eoc, read_csv, EocRecord, ExperimentReport, ReportRow};
pub use runner::run_experiment;
