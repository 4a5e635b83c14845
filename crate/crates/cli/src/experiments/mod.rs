//! Experiment runners.

mod bench;
mod flow;
mod ode;
mod scalar2d;

use std::path::Path;

use physkrig::calibration::{calibrate, sigma2_at, CalibrationResult, Criterion};
use physkrig::{MultiIndex, ObservationSet};

use crate::config::{Experiment, Param, RunConfig};
use crate::error::RunError;
use crate::report::{write_atomic, Artifacts, RunReport, Status};

pub use bench::{bench_rows, expected_ck_evals, expected_lk_evals};
pub use flow::{cylinder_layout, flow_problem};
pub use ode::{ode_problem, OdeProblem};
pub use scalar2d::{most_square, Scalar2dProblem};

/// Report, output tables and the error of a failed run.
#[derive(Debug)]
pub struct Outcome {
    pub report: RunReport,
    pub artifacts: Artifacts,
    pub error: Option<RunError>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, RunError::exit_code)
    }

    pub fn is_ok(&self) -> bool {
        self.report.status == Status::Ok
    }

    /// Write every table and `report.json` into `dir`. Tables of a failed
    /// run are skipped; the report is always written.
    pub fn write(&self, dir: &Path) -> Result<(), RunError> {
        if self.is_ok() {
            for (name, t) in &self.artifacts.files {
                write_atomic(dir, name, t.render().as_bytes())?;
            }
        }
        write_atomic(dir, "report.json", self.report.to_json().as_bytes())
    }
}

/// What to run for a validated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Experiment,
    Benchmark,
}

pub fn run(cfg: &RunConfig, mode: Mode) -> Outcome {
    let mut report = RunReport::new(cfg.clone());
    let mut artifacts = Artifacts::default();
    let res = cfg.validate().and_then(|_| match mode {
        Mode::Benchmark => bench::run_benchmark(cfg, &mut report, &mut artifacts),
        Mode::Experiment => match cfg.experiment {
            Experiment::Ode1d => ode::run_ode1d(cfg, &mut report, &mut artifacts),
            Experiment::Calibrate => ode::run_calibrate(cfg, &mut report, &mut artifacts),
            Experiment::Scalar2d => scalar2d::run_scalar2d(cfg, &mut report, &mut artifacts),
            Experiment::FlowCylinder | Experiment::FlowCsv => flow::run_flow(cfg, &mut report, &mut artifacts),
        },
    });
    if let Err(e) = &res {
        log::error!("{e}");
        report.fail(e);
    }
    Outcome {
        report,
        artifacts,
        error: res.err(),
    }
}

/// Report for a configuration that could not be read.
pub fn config_failure(cfg: RunConfig, e: RunError) -> Outcome {
    let mut report = RunReport::new(cfg);
    report.fail(&e);
    Outcome {
        report,
        artifacts: Artifacts::default(),
        error: Some(e),
    }
}

pub(crate) fn mi(orders: &[u32]) -> MultiIndex {
    MultiIndex::new(orders.to_vec())
}

/// Kernel parameters in use: fixed values from the config, otherwise
/// calibrated with `crit`.
pub(crate) struct Fitted {
    pub theta: f64,
    pub sigma2: f64,
    pub calibration: Option<CalibrationResult>,
}

pub(crate) fn resolve_kernel(
    cfg: &RunConfig,
    crit: Criterion<'_>,
    obs: &ObservationSet,
    dim: usize,
    rep: &mut RunReport,
) -> Result<Fitted, RunError> {
    let scfg = cfg.solve_config();
    let calibration = match cfg.kernel.theta {
        Param::Auto => Some(calibrate(crit, obs, dim, &cfg.search(), &scfg)?),
        Param::Value(_) => None,
    };
    let theta = match (cfg.kernel.theta, &calibration) {
        (Param::Value(t), _) => t,
        (Param::Auto, Some(c)) => c.theta_hat,
        (Param::Auto, None) => unreachable!(),
    };
    let sigma2 = match (cfg.kernel.sigma2, &calibration) {
        (Param::Value(s), _) => s,
        (Param::Auto, Some(c)) => c.sigma2_hat,
        (Param::Auto, None) => {
            let e = sigma2_at(crit, obs, dim, theta, &scfg)?;
            rep.warnings.extend(e.warning);
            e.value
        }
    };
    if let Some(c) = &calibration {
        rep.warnings.extend(c.warnings.iter().cloned());
        rep.detail("criterion_value", c.criterion_value);
        rep.detail("criterion_evaluations", c.trace.len());
    }
    rep.theta_hat = Some(theta);
    rep.sigma2_hat = Some(sigma2);
    Ok(Fitted {
        theta,
        sigma2,
        calibration,
    })
}

/// `(mean squared error, relative L2 error)` of `pred` against `truth`.
pub(crate) fn errors(pred: &[f64], truth: &[f64]) -> (f64, f64) {
    let num: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = truth.iter().map(|b| b * b).sum();
    let rel = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    (num / pred.len().max(1) as f64, rel)
}
