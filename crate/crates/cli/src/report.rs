//! Run report and output files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorDetail {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Timing {
    pub construction_s: f64,
    pub inversion_s: f64,
}

/// One `(method, p)` cell of the cost benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: crate::config::Method,
    pub p: usize,
    /// Prediction atoms: `q` for co-Kriging, the `2p` collocation atoms for Lagrangian Kriging.
    pub prediction_atoms: usize,
    pub construction_s: f64,
    pub inversion_s: f64,
    pub cov_eval_count: u64,
    pub expected_cov_eval_count: u64,
    pub nugget_used: f64,
    pub constraint_residual_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub status: Status,
    pub error: Option<ErrorDetail>,
    pub theta_hat: Option<f64>,
    pub sigma2_hat: Option<f64>,
    pub mse_vs_truth: Option<f64>,
    pub rel_l2: Option<f64>,
    pub constraint_residual_max: Option<f64>,
    pub timing: Timing,
    pub cov_eval_count: u64,
    pub nugget_used: Option<f64>,
    pub warnings: Vec<String>,
    pub layout: BTreeMap<String, Value>,
    pub details: BTreeMap<String, Value>,
    pub bench: Vec<BenchRow>,
}

impl RunReport {
    pub fn new(config: RunConfig) -> Self {
        RunReport {
            config,
            status: Status::Ok,
            error: None,
            theta_hat: None,
            sigma2_hat: None,
            mse_vs_truth: None,
            rel_l2: None,
            constraint_residual_max: None,
            timing: Timing::default(),
            cov_eval_count: 0,
            nugget_used: None,
            warnings: Vec::new(),
            layout: BTreeMap::new(),
            details: BTreeMap::new(),
            bench: Vec::new(),
        }
    }

    pub fn fail(&mut self, e: &RunError) {
        self.status = Status::Failed;
        self.error = Some(ErrorDetail {
            kind: e.kind().to_string(),
            message: e.to_string(),
            exit_code: e.exit_code(),
        });
    }

    pub fn detail(&mut self, key: &str, v: impl Into<Value>) {
        self.details.insert(key.to_string(), v.into());
    }

    pub fn layout_entry(&mut self, key: &str, v: impl Into<Value>) {
        self.layout.insert(key.to_string(), v.into());
    }

    pub fn add_fit(&mut self, meta: &physkrig::predictors::FitMeta) {
        self.timing.construction_s += meta.construction_s;
        self.timing.inversion_s += meta.inversion_s;
        self.cov_eval_count += meta.cov_evals;
        self.nugget_used = Some(self.nugget_used.unwrap_or(0.0).max(meta.nugget_used));
    }

    /// Copy with wall times rounded to whole milliseconds.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        r.timing.construction_s = ms(r.timing.construction_s);
        r.timing.inversion_s = ms(r.timing.inversion_s);
        for b in &mut r.bench {
            b.construction_s = ms(b.construction_s);
            b.inversion_s = ms(b.inversion_s);
        }
        r
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rounded()).expect("report serializes")
    }
}

fn ms(s: f64) -> f64 {
    (s.max(0.0) * 1e3).round() / 1e3
}

/// Write `contents` to `dir/name` through a temporary file in `dir`.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(dir.join(name)).map_err(|e| RunError::Io(e.to_string()))?;
    Ok(())
}

/// Numeric CSV table with round-trip float formatting.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Text(&'static str),
}

impl Table {
    pub fn new(header: Vec<&'static str>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Int(i) => i.to_string(),
                    Cell::Real(v) => format!("{v:.16e}"),
                    Cell::Text(t) => t.to_string(),
                })
                .collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Named output files of a run.
#[derive(Debug, Clone, Default)]
pub struct Artifacts {
    pub files: Vec<(String, Table)>,
}

impl Artifacts {
    pub fn add(&mut self, name: &str, t: Table) {
        self.files.push((name.to_string(), t));
    }
}
