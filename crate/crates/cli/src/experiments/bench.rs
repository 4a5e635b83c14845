//! Construction and inversion cost of co-Kriging and Lagrangian Kriging
//! over a sweep of collocation counts on the ODE setup.

use physkrig::calibration::Criterion;
use physkrig::predictors::{co_kriging, lagrangian_kriging};
use physkrig::{ExtendedPoint, SqExpKernel};

use super::{ode_problem, resolve_kernel};
use crate::config::{Method, RunConfig};
use crate::error::RunError;
use crate::report::{Artifacts, BenchRow, Cell, RunReport, Table};

/// `(n+c)(n+c+1)/2 + (n+c)q`.
pub fn expected_ck_evals(n: usize, c: usize, q: usize) -> u64 {
    let m = (n + c) as u64;
    m * (m + 1) / 2 + m * q as u64
}

/// `n(n+1)/2 + nℓ`.
pub fn expected_lk_evals(n: usize, l: usize) -> u64 {
    let n = n as u64;
    n * (n + 1) / 2 + n * l as u64
}

/// One row per `(p, method)`, with unrounded wall times.
pub fn bench_rows(cfg: &RunConfig, rep: &mut RunReport) -> Result<Vec<BenchRow>, RunError> {
    let n = cfg.resolved_counts().n.unwrap();
    let q = cfg.bench.q;
    let scfg = cfg.solve_config();
    let base = ode_problem(n, 2, 2, cfg.seed)?;
    let fit = resolve_kernel(cfg, Criterion::SimpleLoo, &base.obs, 1, rep)?;
    let ku = SqExpKernel::unit(fit.theta, 1)?;
    rep.layout_entry("n", n);
    rep.layout_entry("q", q);
    rep.layout_entry("sweep", cfg.bench.sweep.clone());

    let mut rows = Vec::new();
    for &p in &cfg.bench.sweep {
        let prob = ode_problem(n, p, q, cfg.seed)?;
        let c = prob.ops.n_atoms();
        for &m in &cfg.bench.methods {
            let row = match m {
                Method::Ck => {
                    let pred: Vec<ExtendedPoint> = prob.pred_x.iter().map(|&x| ExtendedPoint::value(vec![x])).collect();
                    let w = co_kriging(&ku, &prob.obs, &prob.ops, &pred, None, &scfg)?;
                    BenchRow {
                        method: m,
                        p,
                        prediction_atoms: q,
                        construction_s: w.meta.construction_s,
                        inversion_s: w.meta.inversion_s,
                        cov_eval_count: w.meta.cov_evals,
                        expected_cov_eval_count: expected_ck_evals(n, c, q),
                        nugget_used: w.meta.nugget_used,
                        constraint_residual_max: None,
                    }
                }
                Method::Lk => {
                    let w = lagrangian_kriging(&ku, &prob.obs, &prob.ops, None, &scfg)?;
                    BenchRow {
                        method: m,
                        p,
                        prediction_atoms: c,
                        construction_s: w.meta.construction_s,
                        inversion_s: w.meta.inversion_s,
                        cov_eval_count: w.meta.cov_evals,
                        expected_cov_eval_count: expected_lk_evals(n, c),
                        nugget_used: w.meta.nugget_used,
                        constraint_residual_max: Some(prob.ops.residual(&w.predictions).amax()),
                    }
                }
                other => {
                    return Err(RunError::Config {
                        field: "bench.methods".into(),
                        reason: format!("`{}` is not benchmarked", other.name()),
                    })
                }
            };
            log::info!(
                "{} p={p}: construction {:.3}s, inversion {:.3}s, {} evaluations",
                row.method.name(),
                row.construction_s,
                row.inversion_s,
                row.cov_eval_count
            );
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn run_benchmark(cfg: &RunConfig, rep: &mut RunReport, art: &mut Artifacts) -> Result<(), RunError> {
    let rows = bench_rows(cfg, rep)?;
    let mut t = Table::new(vec![
        "method",
        "p",
        "prediction_atoms",
        "construction_s",
        "inversion_s",
        "cov_eval_count",
        "expected_cov_eval_count",
    ]);
    for r in &rows {
        rep.timing.construction_s += r.construction_s;
        rep.timing.inversion_s += r.inversion_s;
        rep.cov_eval_count += r.cov_eval_count;
        rep.nugget_used = Some(rep.nugget_used.unwrap_or(0.0).max(r.nugget_used));
        t.push(vec![
            Cell::Text(r.method.name()),
            Cell::Int(r.p as i64),
            Cell::Int(r.prediction_atoms as i64),
            Cell::Real((r.construction_s * 1e3).round() / 1e3),
            Cell::Real((r.inversion_s * 1e3).round() / 1e3),
            Cell::Int(r.cov_eval_count as i64),
            Cell::Int(r.expected_cov_eval_count as i64),
        ]);
    }
    let lk_max = rows.iter().filter_map(|r| r.constraint_residual_max).fold(None, |a: Option<f64>, b| {
        Some(a.map_or(b, |a| a.max(b)))
    });
    rep.constraint_residual_max = lk_max;
    rep.bench = rows;
    art.add("bench.csv", t);
    Ok(())
}
