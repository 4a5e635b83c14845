//! Experiment harness for `physkrig`: configuration, runners and reports.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{Experiment, Method, Overrides, Param, RunConfig};
pub use error::RunError;
pub use experiments::{run, Mode, Outcome};
pub use report::{RunReport, Status};
