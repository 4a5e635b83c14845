//! Scalar fields on a square with gradient-sum and Laplacian rows.

use physkrig::calibration::Criterion;
use physkrig::predictors::{co_kriging, simple_kriging};
use physkrig::uq::{var_ck, var_lk};
use physkrig::{encode_pointwise, ExtendedPoint, ObservationSet, OperatorRow, OperatorSystem, SqExpKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{errors, mi, resolve_kernel};
use crate::config::{Method, RunConfig, Target};
use crate::error::RunError;
use crate::report::{Artifacts, Cell, RunReport, Table};

/// Factor pair `(a, b)` of `c` with `a ≥ b` and `a - b` minimal.
pub fn most_square(c: usize) -> (usize, usize) {
    let mut best = (c, 1);
    for b in 1..=c {
        if b * b > c {
            break;
        }
        if c % b == 0 {
            best = (c / b, b);
        }
    }
    best
}

fn truth(t: Target, p: [f64; 2]) -> f64 {
    match t {
        Target::F1 => p[0].cos() * p[1].sin(),
        Target::F2 => p[0].exp() * p[1].sin() + 5.0,
    }
}

fn gradient_sum(t: Target, p: [f64; 2]) -> f64 {
    match t {
        Target::F1 => -p[0].sin() * p[1].sin() + p[0].cos() * p[1].cos(),
        Target::F2 => p[0].exp() * (p[1].sin() + p[1].cos()),
    }
}

fn laplacian(t: Target, p: [f64; 2]) -> f64 {
    match t {
        Target::F1 => -2.0 * p[0].cos() * p[1].sin(),
        Target::F2 => 0.0,
    }
}

/// Cell centers of the most-square partition of the box into `c` cells.
fn cell_centers(c: usize, lo: f64, hi: f64) -> Vec<[f64; 2]> {
    if c == 0 {
        return Vec::new();
    }
    let (nx, ny) = most_square(c);
    let at = |i: usize, k: usize| lo + (hi - lo) * (i as f64 + 0.5) / k as f64;
    (0..ny).flat_map(|j| (0..nx).map(move |i| [at(i, nx), at(j, ny)])).collect()
}

/// Most-square grid of `q` points including the box corners.
fn grid(q: usize, lo: f64, hi: f64) -> Vec<[f64; 2]> {
    let (nx, ny) = most_square(q);
    let at = |i: usize, k: usize| {
        if k == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (k - 1) as f64
        }
    };
    (0..ny).flat_map(|j| (0..nx).map(move |i| [at(i, nx), at(j, ny)])).collect()
}

pub struct Scalar2dProblem {
    pub obs: ObservationSet,
    pub ops: OperatorSystem,
    pub grid: Vec<[f64; 2]>,
    pub truth: Vec<f64>,
}

impl Scalar2dProblem {
    pub fn new(target: Target, domain: [f64; 2], n: usize, q1: usize, q2: usize, q: usize, seed: u64) -> Result<Self, RunError> {
        let [lo, hi] = domain;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ox: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(lo..hi), rng.random_range(lo..hi)])
            .collect();
        let locs: Vec<Vec<f64>> = ox.iter().map(|p| p.to_vec()).collect();
        let vals: Vec<f64> = ox.iter().map(|&p| truth(target, p)).collect();
        let obs = ObservationSet::from_values(&locs, &vals)?;
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for p in cell_centers(q1, lo, hi) {
            rows.push(OperatorRow::new(p.to_vec(), vec![(1.0, mi(&[1, 0])), (1.0, mi(&[0, 1]))]));
            rhs.push(gradient_sum(target, p));
        }
        for p in cell_centers(q2, lo, hi) {
            rows.push(OperatorRow::new(p.to_vec(), vec![(1.0, mi(&[2, 0])), (1.0, mi(&[0, 2]))]));
            rhs.push(laplacian(target, p));
        }
        let ops = if rows.is_empty() {
            OperatorSystem::empty()
        } else {
            encode_pointwise(&rows, &rhs)?
        };
        let grid = grid(q, lo, hi);
        let truth = grid.iter().map(|&p| truth(target, p)).collect();
        Ok(Scalar2dProblem { obs, ops, grid, truth })
    }

    pub fn grid_atoms(&self) -> Vec<ExtendedPoint> {
        self.grid.iter().map(|p| ExtendedPoint::value(p.to_vec())).collect()
    }
}

pub fn run_scalar2d(cfg: &RunConfig, rep: &mut RunReport, art: &mut Artifacts) -> Result<(), RunError> {
    let c = cfg.resolved_counts();
    let (n, q, q1, q2) = (c.n.unwrap(), c.q.unwrap(), c.q1.unwrap(), c.q2.unwrap());
    let prob = Scalar2dProblem::new(cfg.scalar2d.target, cfg.scalar2d.domain, n, q1, q2, q, cfg.seed)?;
    rep.layout_entry("n", n);
    rep.layout_entry("q1", q1);
    rep.layout_entry("q2", q2);
    rep.layout_entry("q", prob.grid.len());
    rep.layout_entry("gradient_grid", vec![most_square(q1).0, most_square(q1).1]);
    rep.layout_entry("laplacian_grid", vec![most_square(q2).0, most_square(q2).1]);
    rep.layout_entry("prediction_grid", vec![most_square(q).0, most_square(q).1]);

    let scfg = cfg.solve_config();
    let crit = match cfg.method {
        Method::Ck => Criterion::CoKrigingLoo(&prob.ops),
        _ => Criterion::SimpleLoo,
    };
    let fit = resolve_kernel(cfg, crit, &prob.obs, 2, rep)?;
    let ku = SqExpKernel::unit(fit.theta, 2)?;
    let grid_atoms = prob.grid_atoms();

    let (atoms, mean, var_unit) = match cfg.method {
        Method::Sk => {
            let u = var_ck(&ku, &prob.obs, &OperatorSystem::empty(), &grid_atoms, &scfg)?;
            rep.add_fit(&u.meta);
            (grid_atoms, u.mean, u.variance)
        }
        Method::Ck => {
            let u = var_ck(&ku, &prob.obs, &prob.ops, &grid_atoms, &scfg)?;
            rep.add_fit(&u.meta);
            if prob.ops.n_rows() > 0 {
                let at_rows = co_kriging(&ku, &prob.obs, &prob.ops, &prob.ops.colloc_points, None, &scfg)?;
                rep.constraint_residual_max = Some(prob.ops.residual(&at_rows.predictions).amax());
            }
            (grid_atoms, u.mean, u.variance)
        }
        Method::Lk => {
            let sys = prob.ops.with_atoms(&grid_atoms)?;
            let u = var_lk(&ku, &prob.obs, &sys, &scfg)?;
            rep.add_fit(&u.uq.meta);
            rep.constraint_residual_max = Some(if sys.n_rows() > 0 { sys.residual(&u.uq.mean).amax() } else { 0.0 });
            let sk = simple_kriging(&ku, &prob.obs, &grid_atoms, &scfg)?;
            let diff = grid_atoms
                .iter()
                .zip(sk.predictions.iter())
                .map(|(g, s)| {
                    let i = sys.colloc_points.iter().position(|a| a == g).expect("grid atom present");
                    (u.uq.mean[i] - s).abs()
                })
                .fold(0.0, f64::max);
            rep.detail("lk_order0_max_abs_diff_vs_sk", diff);
            (sys.colloc_points, u.uq.mean, u.uq.variance)
        }
        Method::Ok | Method::LkInterp => unreachable!("rejected by validation"),
    };

    let pred: Vec<f64> = prob
        .grid_atoms()
        .iter()
        .map(|g| mean[atoms.iter().position(|a| a == g).expect("grid atom present")])
        .collect();
    let (mse, rel) = errors(&pred, &prob.truth);
    rep.mse_vs_truth = Some(mse);
    rep.rel_l2 = Some(rel);

    let mut t = Table::new(vec!["x", "y", "mx", "my", "mean", "variance"]);
    for (i, a) in atoms.iter().enumerate() {
        t.push(vec![
            Cell::Real(a.x[0]),
            Cell::Real(a.x[1]),
            Cell::Int(a.m.orders()[0] as i64),
            Cell::Int(a.m.orders()[1] as i64),
            Cell::Real(mean[i]),
            Cell::Real(fit.sigma2 * var_unit[i]),
        ]);
    }
    art.add("predictions.csv", t);
    Ok(())
}
