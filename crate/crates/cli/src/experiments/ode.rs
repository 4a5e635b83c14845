//! `f + f'' = 0` on `[0, 2π]` with sin observations.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use physkrig::calibration::{evaluate, Criterion};
use physkrig::predictors::{mse_objective_columns, ordinary_kriging};
use physkrig::uq::{var_ck, var_lk};
use physkrig::{
    encode_pointwise, gram, gram_symmetric, EvalCounter, ExtendedPoint, ObservationSet, OperatorRow, OperatorSystem,
    SqExpKernel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{errors, mi, resolve_kernel};
use crate::config::{Method, RunConfig};
use crate::error::RunError;
use crate::report::{Artifacts, Cell, RunReport, Table};

pub struct OdeProblem {
    pub obs: ObservationSet,
    pub obs_x: Vec<f64>,
    pub colloc_x: Vec<f64>,
    pub pred_x: Vec<f64>,
    /// Equation rows at the collocation points.
    pub ops: OperatorSystem,
    /// Equation rows at the observation locations.
    pub ops_at_obs: OperatorSystem,
    /// `ops` embedded over its atoms and the order-0 prediction atoms.
    pub atoms: OperatorSystem,
}

fn equispaced(k: usize) -> Vec<f64> {
    (0..k).map(|i| TAU * i as f64 / (k - 1) as f64).collect()
}

fn rows_at(xs: &[f64]) -> Result<OperatorSystem, RunError> {
    let rows: Vec<OperatorRow> = xs
        .iter()
        .map(|&x| OperatorRow::new(vec![x], vec![(1.0, mi(&[0])), (1.0, mi(&[2]))]))
        .collect();
    Ok(encode_pointwise(&rows, &vec![0.0; xs.len()])?)
}

/// `n` seeded uniform sin observations, `p` collocation and `q`
/// prediction points equispaced with both ends.
pub fn ode_problem(n: usize, p: usize, q: usize, seed: u64) -> Result<OdeProblem, RunError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obs_x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
    let locs: Vec<Vec<f64>> = obs_x.iter().map(|&x| vec![x]).collect();
    let vals: Vec<f64> = obs_x.iter().map(|x| x.sin()).collect();
    let obs = ObservationSet::from_values(&locs, &vals)?;
    let colloc_x = equispaced(p);
    let pred_x = equispaced(q);
    let ops = rows_at(&colloc_x)?;
    let value_atoms: Vec<ExtendedPoint> = pred_x.iter().map(|&x| ExtendedPoint::value(vec![x])).collect();
    let atoms = ops.with_atoms(&value_atoms)?;
    Ok(OdeProblem {
        ops_at_obs: rows_at(&obs_x)?,
        obs,
        obs_x,
        colloc_x,
        pred_x,
        ops,
        atoms,
    })
}

impl OdeProblem {
    /// Index of each prediction point's order-0 atom.
    pub fn value_indices(&self) -> Vec<usize> {
        self.pred_x
            .iter()
            .map(|&x| {
                self.atoms
                    .colloc_points
                    .iter()
                    .position(|a| a.m.is_zero() && a.x[0] == x)
                    .expect("prediction atom present")
            })
            .collect()
    }
}

fn criterion(method: Method, prob: &OdeProblem) -> Criterion<'_> {
    match method {
        Method::Sk | Method::Ok => Criterion::SimpleLoo,
        Method::Ck => Criterion::CoKrigingLoo(&prob.ops),
        Method::Lk => Criterion::LagrangianLoo(&prob.ops_at_obs),
        Method::LkInterp => Criterion::LagrangianInterp(&prob.ops_at_obs),
    }
}

fn problem(cfg: &RunConfig, rep: &mut RunReport) -> Result<OdeProblem, RunError> {
    let c = cfg.resolved_counts();
    let (n, p, q) = (c.n.unwrap(), c.p.unwrap(), c.q.unwrap());
    let prob = ode_problem(n, p, q, cfg.seed)?;
    rep.layout_entry("n", n);
    rep.layout_entry("p", p);
    rep.layout_entry("q", q);
    rep.layout_entry("observation_x", prob.obs_x.clone());
    Ok(prob)
}

pub fn run_ode1d(cfg: &RunConfig, rep: &mut RunReport, art: &mut Artifacts) -> Result<(), RunError> {
    let prob = problem(cfg, rep)?;
    let fit = resolve_kernel(cfg, criterion(cfg.method, &prob), &prob.obs, 1, rep)?;
    let scfg = cfg.solve_config();
    let ku = SqExpKernel::unit(fit.theta, 1)?;
    let atoms = &prob.atoms.colloc_points;

    let (mean, var_unit) = match cfg.method {
        Method::Sk => {
            let u = var_ck(&ku, &prob.obs, &OperatorSystem::empty(), atoms, &scfg)?;
            rep.add_fit(&u.meta);
            (u.mean, u.variance)
        }
        Method::Ok => {
            let n = prob.obs.len();
            let obs = prob.obs.with_mean(Some(vec![1.0; n]))?;
            let mu_star: Vec<f64> = atoms.iter().map(|a| if a.m.is_zero() { 1.0 } else { 0.0 }).collect();
            let w = ordinary_kriging(&ku, &obs, atoms, &mu_star, &scfg)?;
            rep.add_fit(&w.meta);
            let counter = EvalCounter::new();
            let k = gram_symmetric(&ku, obs.points(), &counter)? + DMatrix::identity(n, n) * w.meta.nugget_used;
            let h = gram(&ku, obs.points(), atoms, &counter)?;
            let kstar = gram_symmetric(&ku, atoms, &counter)?;
            let v = mse_objective_columns(&w.alpha, &k, &h, &kstar).map(|v| v.max(0.0));
            (w.predictions, v)
        }
        Method::Ck => {
            let u = var_ck(&ku, &prob.obs, &prob.ops, atoms, &scfg)?;
            rep.add_fit(&u.meta);
            (u.mean, u.variance)
        }
        Method::Lk | Method::LkInterp => {
            let u = var_lk(&ku, &prob.obs, &prob.atoms, &scfg)?;
            rep.add_fit(&u.uq.meta);
            let scale = u.printed.amax().max(f64::MIN_POSITIVE);
            rep.detail("asymmetry_defect", fit.sigma2 * u.asymmetry_defect);
            rep.detail("asymmetry_defect_rel", u.asymmetry_defect / scale);
            (u.uq.mean, u.uq.variance)
        }
    };
    let variance: DVector<f64> = var_unit * fit.sigma2;
    rep.constraint_residual_max = Some(prob.atoms.residual(&mean).amax());

    let idx = prob.value_indices();
    let pred: Vec<f64> = idx.iter().map(|&i| mean[i]).collect();
    let truth: Vec<f64> = prob.pred_x.iter().map(|x| x.sin()).collect();
    let (mse, rel) = errors(&pred, &truth);
    rep.mse_vs_truth = Some(mse);
    rep.rel_l2 = Some(rel);

    let mut t = Table::new(vec!["x", "m", "mean", "variance"]);
    for (i, a) in atoms.iter().enumerate() {
        t.push(vec![
            Cell::Real(a.x[0]),
            Cell::Int(a.m.orders()[0] as i64),
            Cell::Real(mean[i]),
            Cell::Real(variance[i]),
        ]);
    }
    art.add("predictions.csv", t);
    Ok(())
}

/// Criterion trace of the selected method on the ODE setup.
pub fn run_calibrate(cfg: &RunConfig, rep: &mut RunReport, art: &mut Artifacts) -> Result<(), RunError> {
    let prob = problem(cfg, rep)?;
    let crit = criterion(cfg.method, &prob);
    let fit = resolve_kernel(cfg, crit, &prob.obs, 1, rep)?;
    let trace = match fit.calibration {
        Some(c) => c.trace,
        None => {
            let v = evaluate(crit, &prob.obs, 1, fit.theta, &cfg.solve_config())?;
            rep.detail("criterion_value", v);
            vec![(fit.theta, v)]
        }
    };
    let mut t = Table::new(vec!["theta", "criterion"]);
    for (th, v) in trace {
        t.push(vec![Cell::Real(th), Cell::Real(v)]);
    }
    art.add("trace.csv", t);
    Ok(())
}
