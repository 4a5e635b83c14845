//! Run configuration: a TOML file merged with command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Ode1d,
    Scalar2d,
    FlowCylinder,
    FlowCsv,
    Calibrate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Sk,
    Ok,
    Ck,
    Lk,
    LkInterp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Sk => "sk",
            Method::Ok => "ok",
            Method::Ck => "ck",
            Method::Lk => "lk",
            Method::LkInterp => "lk-interp",
        }
    }
}

/// A kernel parameter: fixed, or calibrated from the data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Param {
    #[default]
    Auto,
    Value(f64),
}

impl Param {
    pub fn value(self) -> Option<f64> {
        match self {
            Param::Auto => None,
            Param::Value(v) => Some(v),
        }
    }
}

impl FromStr for Param {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Param::Auto);
        }
        s.parse::<f64>()
            .map(Param::Value)
            .map_err(|_| format!("expected a number or `auto`, got `{s}`"))
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Param::Auto => f.write_str("auto"),
            Param::Value(v) => write!(f, "{v}"),
        }
    }
}

impl Serialize for Param {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Param::Auto => s.serialize_str("auto"),
            Param::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Param {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Param::Value(v)),
            Raw::Int(v) => Ok(Param::Value(v as f64)),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSpec {
    pub theta: Param,
    pub sigma2: Param,
}

/// Problem sizes. Unset counts take the experiment's documented default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Counts {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    /// Gradient-sum rows (2D scalar) or boundary rows (flow).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q1: Option<usize>,
    /// Laplacian rows (2D scalar) or continuity rows (flow).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q2: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    F1,
    #[default]
    F2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scalar2dSpec {
    pub target: Target,
    /// Square domain `[lo, hi]²`.
    pub domain: [f64; 2],
}

impl Default for Scalar2dSpec {
    fn default() -> Self {
        Scalar2dSpec {
            target: Target::F2,
            domain: [0.0, std::f64::consts::PI],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    #[default]
    Ring,
    Scattered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuitySpec {
    pub nx: usize,
    pub ny: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub margin: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outer_radius: Option<f64>,
    /// When set, `nx = round(ny · aspect)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aspect: Option<f64>,
}

impl Default for ContinuitySpec {
    fn default() -> Self {
        let c = physkrig::flowlab::CylinderLayout::default().continuity;
        ContinuitySpec {
            nx: c.nx,
            ny: c.ny,
            x_range: [c.x_range.0, c.x_range.1],
            y_range: [c.y_range.0, c.y_range.1],
            margin: c.margin,
            outer_radius: c.outer_radius,
            aspect: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSpec {
    pub freestream: [f64; 2],
    pub center: [f64; 2],
    pub radius: f64,
    pub placement: Placement,
    /// Ring radius in units of the cylinder radius.
    pub ring_radius: f64,
    /// Annulus of scattered observations in units of the cylinder radius.
    pub scatter: [f64; 2],
    pub pred_n: usize,
    pub pred_radius: f64,
    pub continuity: ContinuitySpec,
    /// Velocity-field CSV read by `flow-csv`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    /// Compare against the cylinder oracle (always on for `flow-cylinder`).
    pub oracle_truth: bool,
    /// Lengthscale of the second two-step stage.
    pub theta2: Param,
}

impl Default for FlowSpec {
    fn default() -> Self {
        let l = physkrig::flowlab::CylinderLayout::default();
        FlowSpec {
            freestream: [1.0, 0.0],
            center: [0.0, 0.0],
            radius: 1.0,
            placement: Placement::Ring,
            ring_radius: 2.0,
            scatter: [1.5, 3.0],
            pred_n: l.pred_n,
            pred_radius: l.pred_radius,
            continuity: ContinuitySpec::default(),
            input: None,
            oracle_truth: false,
            theta2: Param::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSpec {
    pub sweep: Vec<usize>,
    /// Co-Kriging prediction count.
    pub q: usize,
    pub methods: Vec<Method>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            sweep: vec![100, 250, 500, 1000],
            q: 100,
            methods: vec![Method::Ck, Method::Lk],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub method: Method,
    pub kernel: KernelSpec,
    pub counts: Counts,
    pub seed: u64,
    pub nugget: f64,
    pub output_dir: PathBuf,
    /// Optimizer evaluation budget.
    pub budget: usize,
    pub scalar2d: Scalar2dSpec,
    pub flow: FlowSpec,
    pub bench: BenchSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: Experiment::Ode1d,
            method: Method::Ck,
            kernel: KernelSpec::default(),
            counts: Counts::default(),
            seed: 0,
            nugget: 1e-10,
            output_dir: PathBuf::from("out"),
            budget: physkrig::calibration::DEFAULT_BUDGET,
            scalar2d: Scalar2dSpec::default(),
            flow: FlowSpec::default(),
            bench: BenchSpec::default(),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub method: Option<Method>,
    pub theta: Option<Param>,
    pub sigma2: Option<Param>,
    pub nugget: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn invalid(field: &str, reason: impl Into<String>) -> RunError {
    RunError::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, RunError> {
        toml::from_str(text).map_err(|e| invalid("config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.method {
            self.method = m;
        }
        if let Some(t) = o.theta {
            self.kernel.theta = t;
        }
        if let Some(s) = o.sigma2 {
            self.kernel.sigma2 = s;
        }
        if let Some(n) = o.nugget {
            self.nugget = n;
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(p) = &o.out {
            self.output_dir = p.clone();
        }
    }

    /// Fill unset counts with the experiment defaults.
    pub fn resolved_counts(&self) -> Counts {
        let c = self.counts;
        match self.experiment {
            Experiment::Ode1d | Experiment::Calibrate => Counts {
                n: c.n.or(Some(4)),
                p: c.p.or(Some(10)),
                q: c.q.or(c.p).or(Some(10)),
                ..c
            },
            Experiment::Scalar2d => Counts {
                n: c.n.or(Some(10)),
                q: c.q.or(Some(900)),
                q1: c.q1.or(Some(50)),
                q2: c.q2.or(Some(100)),
                ..c
            },
            Experiment::FlowCylinder | Experiment::FlowCsv => Counts {
                n: c.n.or(Some(12)),
                q1: c.q1.or(Some(10)),
                ..c
            },
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if !(self.nugget >= 0.0 && self.nugget.is_finite()) {
            return Err(invalid("nugget", format!("must be finite and non-negative, got {}", self.nugget)));
        }
        for (name, p) in [("kernel.theta", self.kernel.theta), ("kernel.sigma2", self.kernel.sigma2)] {
            if let Param::Value(v) = p {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(name, format!("must be positive, got {v}")));
                }
            }
        }
        if self.budget < 8 {
            return Err(invalid("budget", format!("need at least 8 evaluations, got {}", self.budget)));
        }
        let c = self.resolved_counts();
        let positive = |name: &str, v: Option<usize>| -> Result<(), RunError> {
            match v {
                Some(0) => Err(invalid(&format!("counts.{name}"), "must be positive")),
                _ => Ok(()),
            }
        };
        match self.experiment {
            Experiment::Ode1d | Experiment::Calibrate => {
                positive("n", c.n)?;
                positive("p", c.p)?;
                positive("q", c.q)?;
                if c.p.unwrap_or(0) < 2 || c.q.unwrap_or(0) < 2 {
                    return Err(invalid("counts.p", "need at least two equispaced points"));
                }
            }
            Experiment::Scalar2d => {
                positive("n", c.n)?;
                positive("q", c.q)?;
                if matches!(self.method, Method::Ok | Method::LkInterp) {
                    return Err(invalid("method", format!("`{}` is not offered for scalar2d", self.method.name())));
                }
                let [lo, hi] = self.scalar2d.domain;
                if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                    return Err(invalid("scalar2d.domain", "need lo < hi"));
                }
            }
            Experiment::FlowCylinder | Experiment::FlowCsv => {
                positive("n", c.n)?;
                if !matches!(self.method, Method::Sk | Method::Ck | Method::Lk) {
                    return Err(invalid("method", format!("`{}` is not offered for flow", self.method.name())));
                }
                if self.experiment == Experiment::FlowCsv && self.flow.input.is_none() {
                    return Err(invalid("flow.input", "flow-csv needs an input file"));
                }
                if !(self.flow.radius > 0.0) {
                    return Err(invalid("flow.radius", "must be positive"));
                }
            }
        }
        if self.bench.sweep.is_empty() || self.bench.sweep.contains(&0) || self.bench.q == 0 {
            return Err(invalid("bench", "sweep and q must be positive"));
        }
        Ok(())
    }

    pub fn solve_config(&self) -> physkrig::predictors::SolveConfig {
        physkrig::predictors::SolveConfig {
            nugget: self.nugget,
            jitter_escalation: physkrig::predictors::DEFAULT_ESCALATION.to_vec(),
        }
    }

    pub fn search(&self) -> physkrig::calibration::SearchConfig {
        physkrig::calibration::SearchConfig {
            bounds: None,
            budget: self.budget,
        }
    }
}
