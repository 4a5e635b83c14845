use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use physkrig_cli::config::{Experiment, Method, Overrides, Param, RunConfig, Target};
use physkrig_cli::experiments::{config_failure, run, Mode};

#[derive(Parser)]
#[command(name = "physkrig", version, about = "Kriging with differential constraints: experiment runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Lengthscale, or `auto` to calibrate.
    #[arg(long)]
    theta: Option<Param>,
    /// Process variance, or `auto` to estimate.
    #[arg(long)]
    sigma2: Option<Param>,
    #[arg(long)]
    nugget: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Cmd {
    /// `f + f'' = 0` with sin observations on [0, 2π].
    Ode1d {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
    },
    /// Scalar field on a square with gradient-sum and Laplacian rows.
    Scalar2d {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        target: Option<Target>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        q1: Option<usize>,
        #[arg(long)]
        q2: Option<usize>,
    },
    /// Flow around a cylinder, from the analytic field or a velocity CSV.
    Flow {
        #[command(flatten)]
        common: Common,
        /// Velocity CSV (`kind,x,y,a,b`); switches to the CSV experiment.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Construction and inversion cost over a collocation sweep.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        sweep: Option<Vec<usize>>,
        /// Co-Kriging prediction count.
        #[arg(long)]
        q: Option<usize>,
        #[arg(long, value_enum, value_delimiter = ',')]
        methods: Option<Vec<Method>>,
    },
    /// Criterion trace of a calibration on the ODE setup.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
    },
}

impl Cmd {
    fn common(&self) -> &Common {
        match self {
            Cmd::Ode1d { common, .. }
            | Cmd::Scalar2d { common, .. }
            | Cmd::Flow { common, .. }
            | Cmd::Bench { common, .. }
            | Cmd::Calibrate { common, .. } => common,
        }
    }

    /// Apply the subcommand and its flags to `cfg`.
    fn configure(&self, cfg: &mut RunConfig) -> Mode {
        let c = self.common();
        cfg.apply(&Overrides {
            method: c.method,
            theta: c.theta,
            sigma2: c.sigma2,
            nugget: c.nugget,
            seed: c.seed,
            out: c.out.clone(),
        });
        match self {
            Cmd::Ode1d { n, p, q, .. } => {
                cfg.experiment = Experiment::Ode1d;
                set(&mut cfg.counts.n, *n);
                set(&mut cfg.counts.p, *p);
                set(&mut cfg.counts.q, *q);
            }
            Cmd::Calibrate { n, p, .. } => {
                cfg.experiment = Experiment::Calibrate;
                set(&mut cfg.counts.n, *n);
                set(&mut cfg.counts.p, *p);
            }
            Cmd::Scalar2d { target, n, q1, q2, .. } => {
                cfg.experiment = Experiment::Scalar2d;
                if let Some(t) = target {
                    cfg.scalar2d.target = *t;
                }
                set(&mut cfg.counts.n, *n);
                set(&mut cfg.counts.q1, *q1);
                set(&mut cfg.counts.q2, *q2);
            }
            Cmd::Flow { input, n, .. } => {
                if let Some(path) = input {
                    cfg.flow.input = Some(path.clone());
                    cfg.experiment = Experiment::FlowCsv;
                } else if cfg.experiment != Experiment::FlowCsv {
                    cfg.experiment = Experiment::FlowCylinder;
                }
                set(&mut cfg.counts.n, *n);
            }
            Cmd::Bench { sweep, q, methods, .. } => {
                cfg.experiment = Experiment::Ode1d;
                if let Some(s) = sweep {
                    cfg.bench.sweep = s.clone();
                }
                if let Some(q) = q {
                    cfg.bench.q = *q;
                }
                if let Some(m) = methods {
                    cfg.bench.methods = m.clone();
                }
                return Mode::Benchmark;
            }
        }
        Mode::Experiment
    }
}

fn set(slot: &mut Option<usize>, v: Option<usize>) {
    if v.is_some() {
        *slot = v;
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.cmd.common().verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let loaded = match &cli.cmd.common().config {
        Some(path) => RunConfig::load(path),
        None => Ok(RunConfig::default()),
    };
    let (outcome, dir) = match loaded {
        Ok(mut cfg) => {
            let mode = cli.cmd.configure(&mut cfg);
            (run(&cfg, mode), cfg.output_dir.clone())
        }
        Err(e) => {
            let mut cfg = RunConfig::default();
            cli.cmd.configure(&mut cfg);
            let dir = cfg.output_dir.clone();
            (config_failure(cfg, e), dir)
        }
    };
    if let Err(e) = outcome.write(&dir) {
        eprintln!("physkrig: cannot write outputs to {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    let r = &outcome.report;
    match &outcome.error {
        None => {
            let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6e}"));
            println!(
                "ok theta_hat={} sigma2_hat={} mse_vs_truth={} constraint_residual_max={} report={}",
                fmt(r.theta_hat),
                fmt(r.sigma2_hat),
                fmt(r.mse_vs_truth),
                fmt(r.constraint_residual_max),
                dir.join("report.json").display()
            );
        }
        Some(e) => eprintln!("physkrig: {e}"),
    }
    ExitCode::from(outcome.exit_code() as u8)
}
