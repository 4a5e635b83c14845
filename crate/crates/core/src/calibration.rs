//! Lengthscale and variance calibration by leave-one-out cross-validation.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::design::{ObservationSet, OperatorSystem};
use crate::error::{KrigingError, Result};
use crate::kernel::SqExpKernel;
use crate::predictors::{lagrangian_kriging, CoKrigingSystem, SolveConfig};
use crate::uq::var_lk;

pub const SIGMA2_FLOOR: f64 = 1e-12;
pub const DEFAULT_BUDGET: usize = 64;

/// Closed-form leave-one-out residuals from a single factorization.
/// For co-Kriging only the first `n` (primary) slots are retained.
#[derive(Debug, Clone)]
pub struct VirtualLoo {
    /// `(K⁻¹y)_i` over retained slots.
    pub weighted: DVector<f64>,
    /// `(K⁻¹)_ii` over retained slots.
    pub precision: DVector<f64>,
}

impl VirtualLoo {
    pub fn simple(k_unit: &SqExpKernel, obs: &ObservationSet, cfg: &SolveConfig) -> Result<Self> {
        Self::co_kriging(k_unit, obs, &OperatorSystem::empty(), cfg)
    }

    pub fn co_kriging(
        k_unit: &SqExpKernel,
        obs: &ObservationSet,
        ops: &OperatorSystem,
        cfg: &SolveConfig,
    ) -> Result<Self> {
        let n = obs.len();
        if n < 2 {
            return Err(KrigingError::InvalidParameter {
                name: "obs",
                reason: "leave-one-out needs at least two observations".into(),
            });
        }
        let centered = obs.with_mean(None)?;
        let sys = CoKrigingSystem::assemble(k_unit, &centered, ops, &[])?;
        let f = cfg.factor(&sys.k_plus)?;
        let w = f.solve_vec(&sys.y);
        let inv = f.inverse();
        Ok(VirtualLoo {
            weighted: w.rows(0, n).into_owned(),
            precision: inv.diagonal().rows(0, n).into_owned(),
        })
    }

    /// Leave-one-out residuals `(K⁻¹y)_i / (K⁻¹)_ii`.
    pub fn residuals(&self) -> DVector<f64> {
        self.weighted.component_div(&self.precision)
    }

    pub fn mse(&self) -> f64 {
        let n = self.weighted.len() as f64;
        self.weighted
            .iter()
            .zip(self.precision.iter())
            .map(|(w, d)| (w / d) * (w / d))
            .sum::<f64>()
            / n
    }

    /// Variance making the leave-one-out standardized residuals average to one.
    pub fn sigma2(&self) -> Sigma2Estimate {
        let n = self.weighted.len() as f64;
        let raw = self
            .weighted
            .iter()
            .zip(self.precision.iter())
            .map(|(w, d)| w * w / d)
            .sum::<f64>()
            / n;
        Sigma2Estimate::floored(raw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sigma2Estimate {
    pub value: f64,
    pub warning: Option<String>,
}

impl Sigma2Estimate {
    fn floored(raw: f64) -> Self {
        if raw.is_finite() && raw > SIGMA2_FLOOR {
            Sigma2Estimate { value: raw, warning: None }
        } else {
            let msg = format!("variance estimate {raw:e} degenerate; floored at {SIGMA2_FLOOR:e}");
            log::warn!("{msg}");
            Sigma2Estimate {
                value: SIGMA2_FLOOR,
                warning: Some(msg),
            }
        }
    }
}

/// Virtual leave-one-out MSE of centered simple Kriging.
pub fn loocv_mse_virtual(k_unit: &SqExpKernel, obs: &ObservationSet, cfg: &SolveConfig) -> Result<f64> {
    Ok(VirtualLoo::simple(k_unit, obs, cfg)?.mse())
}

/// Variance estimate at `theta_hat` under the unit-variance kernel.
pub fn sigma2_virtual(
    k_unit: &SqExpKernel,
    obs: &ObservationSet,
    theta_hat: f64,
    cfg: &SolveConfig,
) -> Result<Sigma2Estimate> {
    let k = SqExpKernel::unit(theta_hat, k_unit.dim())?;
    Ok(VirtualLoo::simple(&k, obs, cfg)?.sigma2())
}

/// Filtered virtual leave-one-out criteria of co-Kriging.
pub fn loocv_ck_virtual(
    k_unit: &SqExpKernel,
    obs: &ObservationSet,
    ops: &OperatorSystem,
    cfg: &SolveConfig,
) -> Result<VirtualLoo> {
    VirtualLoo::co_kriging(k_unit, obs, ops, cfg)
}

/// Held-out residuals and predictive variances of a constrained predictor.
#[derive(Debug, Clone)]
pub struct FoldResiduals {
    pub residuals: Vec<f64>,
    /// Unit-variance MMSE at each held-out atom.
    pub variances: Vec<f64>,
}

impl FoldResiduals {
    pub fn mse(&self) -> f64 {
        self.residuals.iter().map(|r| r * r).sum::<f64>() / self.residuals.len() as f64
    }

    /// Mean of `r²/v` over atoms with non-negligible variance.
    pub fn sigma2(&self) -> Sigma2Estimate {
        let terms: Vec<f64> = self
            .residuals
            .iter()
            .zip(&self.variances)
            .filter(|(_, &v)| v > 1e-14)
            .map(|(r, v)| r * r / v)
            .collect();
        if terms.is_empty() {
            return Sigma2Estimate::floored(0.0);
        }
        Sigma2Estimate::floored(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

/// Explicit per-fold leave-one-out of Lagrangian Kriging. `ops_at_observations`
/// holds the rows Lagrangian Kriging imposes when it predicts at the
/// observation locations; each fold refits without one observation and
/// predicts its atom under those rows.
pub fn loocv_lk(
    k_unit: &SqExpKernel,
    obs: &ObservationSet,
    ops_at_observations: &OperatorSystem,
    cfg: &SolveConfig,
) -> Result<FoldResiduals> {
    if obs.len() < 2 {
        return Err(KrigingError::InvalidParameter {
            name: "obs",
            reason: "leave-one-out needs at least two observations".into(),
        });
    }
    let folds: Vec<Result<(f64, f64)>> = (0..obs.len())
        .map(|i| {
            let held = &obs.points()[i];
            let rest = obs.without(i).with_mean(None)?;
            let sys = ops_at_observations.with_atoms(std::slice::from_ref(held))?;
            let idx = sys.colloc_points.iter().position(|a| a == held).expect("held atom present");
            let fit = lagrangian_kriging(k_unit, &rest, &sys, None, cfg)?;
            let var = var_lk(k_unit, &rest, &sys, cfg)?;
            Ok((obs.values()[i] - fit.predictions[idx], var.uq.raw_variance[idx]))
        })
        .collect();
    let mut out = FoldResiduals {
        residuals: Vec::with_capacity(obs.len()),
        variances: Vec::with_capacity(obs.len()),
    };
    for f in folds {
        let (r, v) = f?;
        out.residuals.push(r);
        out.variances.push(v);
    }
    Ok(out)
}

/// Deviations of Lagrangian predictions at the observation atoms from the
/// observed values, fitted on all observations, with the rows of
/// `ops_at_observations` imposed at those atoms.
pub fn interpolation_residuals(
    k_unit: &SqExpKernel,
    obs: &ObservationSet,
    ops_at_observations: &OperatorSystem,
    cfg: &SolveConfig,
) -> Result<FoldResiduals> {
    let centered = obs.with_mean(None)?;
    let sys = ops_at_observations.with_atoms(obs.points())?;
    let fit = lagrangian_kriging(k_unit, &centered, &sys, None, cfg)?;
    let var = var_lk(k_unit, &centered, &sys, cfg)?;
    let mut out = FoldResiduals {
        residuals: Vec::with_capacity(obs.len()),
        variances: Vec::with_capacity(obs.len()),
    };
    for (p, z) in obs.points().iter().zip(obs.values()) {
        let idx = sys.colloc_points.iter().position(|a| a == p).expect("observation atom present");
        out.residuals.push(z - fit.predictions[idx]);
        out.variances.push(var.uq.raw_variance[idx]);
    }
    Ok(out)
}

/// Mean squared interpolation deviation of Lagrangian Kriging.
pub fn interpolation_error_criterion(
    k_unit: &SqExpKernel,
    obs: &ObservationSet,
    ops_at_observations: &OperatorSystem,
    cfg: &SolveConfig,
) -> Result<f64> {
    Ok(interpolation_residuals(k_unit, obs, ops_at_observations, cfg)?.mse())
}

/// Outcome of a one-dimensional lengthscale search.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaSearch {
    pub theta: f64,
    pub value: f64,
    /// Every finite evaluation in order: grid scan first, then refinement.
    pub trace: Vec<(f64, f64)>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Log-spaced grid scan over `bounds` followed by golden-section
/// refinement, in log space, on the cell around the best grid point.
/// Roughly half the `budget` goes to each stage.
pub fn optimize_theta<F>(criterion: F, bounds: (f64, f64), budget: usize) -> Result<ThetaSearch>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(KrigingError::InvalidParameter {
            name: "bounds",
            reason: format!("need 0 < lo < hi, got ({lo}, {hi})"),
        });
    }
    if budget < 8 {
        return Err(KrigingError::InvalidParameter {
            name: "budget",
            reason: format!("need at least 8 evaluations, got {budget}"),
        });
    }
    let n_grid = budget / 2;
    let (llo, lhi) = (lo.ln(), hi.ln());
    let grid: Vec<f64> = (0..n_grid)
        .map(|i| llo + (lhi - llo) * i as f64 / (n_grid - 1) as f64)
        .collect();
    let values: Vec<Result<f64>> = grid.par_iter().map(|&g| criterion(g.exp())).collect();

    let mut trace = Vec::with_capacity(budget);
    let mut best: Option<(usize, f64)> = None;
    let mut last_err = None;
    for (i, (g, v)) in grid.iter().zip(values).enumerate() {
        match v {
            Ok(v) if v.is_finite() => {
                trace.push((g.exp(), v));
                if best.is_none_or(|(_, b)| v < b) {
                    best = Some((i, v));
                }
            }
            Ok(v) => log::warn!("criterion at theta={:e} is {v}; skipped", g.exp()),
            Err(e) => {
                log::warn!("criterion at theta={:e} failed: {e}; skipped", g.exp());
                last_err = Some(e);
            }
        }
    }
    let (ib, vb) = best.ok_or_else(|| {
        KrigingError::Optimization(match last_err {
            Some(e) => format!("criterion not finite at any grid point (last error: {e})"),
            None => "criterion not finite at any grid point".into(),
        })
    })?;

    let eval = |t: f64| -> f64 {
        match criterion(t.exp()) {
            Ok(v) if v.is_finite() => v,
            _ => f64::INFINITY,
        }
    };
    let mut a = grid[ib.saturating_sub(1)];
    let mut b = grid[(ib + 1).min(n_grid - 1)];
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c);
    let mut fd = eval(d);
    let push = |t: f64, v: f64, trace: &mut Vec<(f64, f64)>| {
        if v.is_finite() {
            trace.push((t.exp(), v));
        }
    };
    push(c, fc, &mut trace);
    push(d, fd, &mut trace);
    let mut remaining = budget.saturating_sub(n_grid + 2);
    while remaining > 0 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
            push(c, fc, &mut trace);
            remaining -= 1;
        } else if fc > fd {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
            push(d, fd, &mut trace);
            remaining -= 1;
        } else {
            a = c;
            b = d;
            c = b - INV_PHI * (b - a);
            d = a + INV_PHI * (b - a);
            fc = eval(c);
            fd = eval(d);
            push(c, fc, &mut trace);
            push(d, fd, &mut trace);
            remaining = remaining.saturating_sub(2);
        }
    }
    let mid = 0.5 * (a + b);
    let fm = eval(mid);
    push(mid, fm, &mut trace);
    let (theta, value) = [(mid, fm), (c, fc), (d, fd)]
        .into_iter()
        .fold((grid[ib], vb), |acc, (t, v)| if v <= acc.1 { (t, v) } else { acc });
    // prefer the cell midpoint on exact ties so flat criteria land centrally
    let (theta, value) = if fm == value { (mid, fm) } else { (theta, value) };
    Ok(ThetaSearch {
        theta: theta.exp(),
        value,
        trace,
    })
}

/// Which cross-validation criterion drives calibration.
#[derive(Debug, Clone, Copy)]
pub enum Criterion<'a> {
    /// Virtual leave-one-out of simple Kriging.
    SimpleLoo,
    /// Filtered virtual leave-one-out of co-Kriging.
    CoKrigingLoo(&'a OperatorSystem),
    /// Explicit per-fold leave-one-out of Lagrangian Kriging, with rows at
    /// the observation locations.
    LagrangianLoo(&'a OperatorSystem),
    /// Interpolation deviation of Lagrangian Kriging, with rows at the
    /// observation locations.
    LagrangianInterp(&'a OperatorSystem),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Defaults to `[1e-2, 1e2]` times the median pairwise distance.
    pub bounds: Option<(f64, f64)>,
    pub budget: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            bounds: None,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub theta_hat: f64,
    pub sigma2_hat: f64,
    pub criterion_value: f64,
    pub trace: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

/// Median distance between distinct observation locations.
pub fn median_pairwise_distance(obs: &ObservationSet) -> f64 {
    let mut locs: Vec<&[f64]> = Vec::new();
    for p in obs.points() {
        if !locs.iter().any(|l| *l == p.x.as_slice()) {
            locs.push(&p.x);
        }
    }
    let mut d: Vec<f64> = Vec::new();
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            d.push(locs[i].iter().zip(locs[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

fn criterion_value(c: Criterion<'_>, k: &SqExpKernel, obs: &ObservationSet, cfg: &SolveConfig) -> Result<f64> {
    match c {
        Criterion::SimpleLoo => loocv_mse_virtual(k, obs, cfg),
        Criterion::CoKrigingLoo(ops) => Ok(loocv_ck_virtual(k, obs, ops, cfg)?.mse()),
        Criterion::LagrangianLoo(ops) => Ok(loocv_lk(k, obs, ops, cfg)?.mse()),
        Criterion::LagrangianInterp(ops) => interpolation_error_criterion(k, obs, ops, cfg),
    }
}

fn sigma2_rule(c: Criterion<'_>, k: &SqExpKernel, obs: &ObservationSet, cfg: &SolveConfig) -> Result<Sigma2Estimate> {
    match c {
        Criterion::SimpleLoo => Ok(VirtualLoo::simple(k, obs, cfg)?.sigma2()),
        Criterion::CoKrigingLoo(ops) => Ok(loocv_ck_virtual(k, obs, ops, cfg)?.sigma2()),
        Criterion::LagrangianLoo(ops) => Ok(loocv_lk(k, obs, ops, cfg)?.sigma2()),
        Criterion::LagrangianInterp(ops) => Ok(interpolation_residuals(k, obs, ops, cfg)?.sigma2()),
    }
}

/// Evaluate `criterion` for the unit-variance kernel at `theta`.
pub fn evaluate(
    criterion: Criterion<'_>,
    obs: &ObservationSet,
    dim: usize,
    theta: f64,
    cfg: &SolveConfig,
) -> Result<f64> {
    criterion_value(criterion, &SqExpKernel::unit(theta, dim)?, obs, cfg)
}

/// Variance rule matching `criterion` at a fixed `theta`.
pub fn sigma2_at(
    criterion: Criterion<'_>,
    obs: &ObservationSet,
    dim: usize,
    theta: f64,
    cfg: &SolveConfig,
) -> Result<Sigma2Estimate> {
    sigma2_rule(criterion, &SqExpKernel::unit(theta, dim)?, obs, cfg)
}

/// Calibrate `(θ, σ²)`: `θ` minimizes the criterion at unit variance and
/// `σ²` follows from the matching variance rule at the optimum.
pub fn calibrate(
    criterion: Criterion<'_>,
    obs: &ObservationSet,
    dim: usize,
    search: &SearchConfig,
    cfg: &SolveConfig,
) -> Result<CalibrationResult> {
    let bounds = search.bounds.unwrap_or_else(|| {
        let m = median_pairwise_distance(obs);
        (1e-2 * m, 1e2 * m)
    });
    let s = optimize_theta(|t| evaluate(criterion, obs, dim, t, cfg), bounds, search.budget)?;
    let k = SqExpKernel::unit(s.theta, dim)?;
    let sig = sigma2_rule(criterion, &k, obs, cfg)?;
    Ok(CalibrationResult {
        theta_hat: s.theta,
        sigma2_hat: sig.value,
        criterion_value: s.value.max(0.0),
        trace: s.trace,
        warnings: sig.warning.into_iter().collect(),
    })
}
