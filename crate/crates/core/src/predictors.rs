//! Simple, ordinary, co- and Lagrangian Kriging.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::design::{gram, gram_symmetric, CovBlocks, EvalCounter, ExtendedPoint, ObservationSet, OperatorSystem};
use crate::error::{KrigingError, Result};
use crate::kernel::SqExpKernel;
use crate::linalg::{constrained_update, GramProjector, Metric, SpdFactor};

pub const DEFAULT_ESCALATION: [f64; 4] = [1e-10, 1e-8, 1e-6, 1e-4];

/// Diagonal nugget and the fallback nuggets tried when factorization fails.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveConfig {
    pub nugget: f64,
    pub jitter_escalation: Vec<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            nugget: 1e-10,
            jitter_escalation: DEFAULT_ESCALATION.to_vec(),
        }
    }
}

impl SolveConfig {
    pub fn new(nugget: f64, jitter_escalation: Vec<f64>) -> Result<Self> {
        if !(nugget >= 0.0 && nugget.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "nugget",
                reason: format!("must be a finite non-negative number, got {nugget}"),
            });
        }
        if jitter_escalation.windows(2).any(|w| w[1] <= w[0]) || jitter_escalation.iter().any(|e| !e.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "jitter_escalation",
                reason: "must be finite and strictly increasing".into(),
            });
        }
        Ok(SolveConfig { nugget, jitter_escalation })
    }

    /// Fixed nugget, no escalation.
    pub fn fixed(nugget: f64) -> Result<Self> {
        Self::new(nugget, Vec::new())
    }

    pub(crate) fn factor(&self, k: &DMatrix<f64>) -> Result<SpdFactor> {
        SpdFactor::new(k, self.nugget, &self.jitter_escalation)
    }
}

/// Solver diagnostics attached to every fit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FitMeta {
    pub nugget_used: f64,
    pub cov_evals: u64,
    /// Covariance fill plus projection through `U`.
    pub construction_s: f64,
    /// Factorization and solves.
    pub inversion_s: f64,
}

#[derive(Debug, Clone)]
pub struct KrigingWeights {
    /// `n × q`, or `(n + p) × q` for co-Kriging.
    pub alpha: DMatrix<f64>,
    /// Unbiasedness multipliers (ordinary variants).
    pub lambda: Option<DVector<f64>>,
    /// Differential-constraint multipliers (Lagrangian Kriging).
    pub lambda2: Option<DVector<f64>>,
    pub predictions: DVector<f64>,
    pub meta: FitMeta,
}

fn require_centered(obs: &ObservationSet) -> Result<()> {
    if obs.mean().is_some() {
        return Err(KrigingError::InvalidParameter {
            name: "obs.mean",
            reason: "the centered variant expects no mean vector".into(),
        });
    }
    Ok(())
}

fn require_len(name: &'static str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(KrigingError::InvalidParameter {
            name,
            reason: format!("expected length {len}, got {}", v.len()),
        });
    }
    Ok(())
}

fn require_nonempty(obs: &ObservationSet) -> Result<()> {
    if obs.is_empty() {
        return Err(KrigingError::InvalidParameter {
            name: "obs",
            reason: "at least one observation is required".into(),
        });
    }
    Ok(())
}

/// Unbiasedness weights shared by the ordinary variants.
/// Returns `(K⁻¹μ, μᵀK⁻¹μ)`.
fn mean_gamma(f: &SpdFactor, mu: &DVector<f64>, kdiag_max: f64) -> Result<(DVector<f64>, f64)> {
    let w = f.solve_vec(mu);
    let g = mu.dot(&w);
    let floor = 1e-12 * mu.norm_squared() / (mu.len() as f64 * kdiag_max.max(f64::MIN_POSITIVE));
    if !g.is_finite() || g <= floor {
        return Err(KrigingError::Degenerate(format!("μᵀK⁻¹μ = {g:e} is numerically singular")));
    }
    Ok((w, g))
}

fn max_diag(k: &DMatrix<f64>) -> f64 {
    k.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b))
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

/// Centered Kriging: `Α = K⁻¹H`, predictions `HᵀK⁻¹Z`.
pub fn simple_kriging(
    k: &SqExpKernel,
    obs: &ObservationSet,
    pred: &[ExtendedPoint],
    cfg: &SolveConfig,
) -> Result<KrigingWeights> {
    require_centered(obs)?;
    require_nonempty(obs)?;
    let counter = EvalCounter::new();
    let t0 = Instant::now();
    let kk = gram_symmetric(k, obs.points(), &counter)?;
    let h = gram(k, obs.points(), pred, &counter)?;
    let construction_s = secs(t0);
    let t1 = Instant::now();
    let f = cfg.factor(&kk)?;
    let alpha = f.solve(&h);
    let inversion_s = secs(t1);
    let predictions = alpha.tr_mul(&obs.values_vector());
    Ok(KrigingWeights {
        alpha,
        lambda: None,
        lambda2: None,
        predictions,
        meta: FitMeta {
            nugget_used: f.nugget,
            cov_evals: counter.get(),
            construction_s,
            inversion_s,
        },
    })
}

/// Kriging under the unbiasedness constraint `Αᵀμ = μ*`.
pub fn ordinary_kriging(
    k: &SqExpKernel,
    obs: &ObservationSet,
    pred: &[ExtendedPoint],
    mu_star: &[f64],
    cfg: &SolveConfig,
) -> Result<KrigingWeights> {
    require_nonempty(obs)?;
    let mu = obs.mean().ok_or(KrigingError::InvalidParameter {
        name: "obs.mean",
        reason: "ordinary Kriging needs a mean vector".into(),
    })?;
    require_len("mu_star", mu_star, pred.len())?;
    let counter = EvalCounter::new();
    let t0 = Instant::now();
    let kk = gram_symmetric(k, obs.points(), &counter)?;
    let h = gram(k, obs.points(), pred, &counter)?;
    let construction_s = secs(t0);
    let t1 = Instant::now();
    let f = cfg.factor(&kk)?;
    let mu = DVector::from_column_slice(mu);
    let (w, g) = mean_gamma(&f, &mu, max_diag(&kk))?;
    let mut alpha = f.solve(&h);
    let lambda = (DVector::from_column_slice(mu_star) - h.tr_mul(&w)) / g;
    alpha.ger(1.0, &w, &lambda, 1.0);
    let inversion_s = secs(t1);
    let predictions = alpha.tr_mul(&obs.values_vector());
    Ok(KrigingWeights {
        alpha,
        lambda: Some(lambda),
        lambda2: None,
        predictions,
        meta: FitMeta {
            nugget_used: f.nugget,
            cov_evals: counter.get(),
            construction_s,
            inversion_s,
        },
    })
}

/// Stacked co-Kriging system `K⁺`, `H⁺` and observation vector `[Z; v]`.
pub struct CoKrigingSystem {
    pub k_plus: DMatrix<f64>,
    pub h_plus: DMatrix<f64>,
    pub y: DVector<f64>,
    /// `[μ; E[Uᵀ Z⁺]]` when the model has a mean.
    pub mu_plus: Option<DVector<f64>>,
    pub cov_evals: u64,
    pub construction_s: f64,
}

impl CoKrigingSystem {
    pub fn assemble(
        k: &SqExpKernel,
        obs: &ObservationSet,
        ops: &OperatorSystem,
        pred: &[ExtendedPoint],
    ) -> Result<Self> {
        let counter = EvalCounter::new();
        let t0 = Instant::now();
        let b = CovBlocks::assemble(k, obs.points(), &ops.colloc_points, pred, false, &counter)?;
        let (n, p) = (obs.len(), ops.n_rows());
        let k12u = ops.right_mul(&b.k12);
        let u22 = ops.left_mul_t(&ops.right_mul(&b.k22));
        let mut k_plus = DMatrix::zeros(n + p, n + p);
        k_plus.view_mut((0, 0), (n, n)).copy_from(&b.k11);
        k_plus.view_mut((0, n), (n, p)).copy_from(&k12u);
        k_plus.view_mut((n, 0), (p, n)).copy_from(&k12u.transpose());
        for i in 0..p {
            for j in 0..p {
                k_plus[(n + i, n + j)] = 0.5 * (u22[(i, j)] + u22[(j, i)]);
            }
        }
        let mut h_plus = DMatrix::zeros(n + p, pred.len());
        h_plus.rows_mut(0, n).copy_from(&b.h);
        h_plus.rows_mut(n, p).copy_from(&ops.left_mul_t(&b.h2));
        let y = DVector::from_iterator(n + p, obs.values().iter().copied().chain(ops.rhs.iter().copied()));
        let mu_plus = match obs.mean() {
            None => None,
            Some(mu) => {
                let mops = match (&ops.mean, p) {
                    (Some(m), _) => m.clone(),
                    (None, 0) => DVector::zeros(0),
                    (None, _) => {
                        return Err(KrigingError::InvalidParameter {
                            name: "ops.mean",
                            reason: "a mean-bearing model needs the expected value of every equation".into(),
                        })
                    }
                };
                Some(DVector::from_iterator(n + p, mu.iter().copied().chain(mops.iter().copied())))
            }
        };
        Ok(CoKrigingSystem {
            k_plus,
            h_plus,
            y,
            mu_plus,
            cov_evals: counter.get(),
            construction_s: secs(t0),
        })
    }
}

/// Collocated co-Kriging: equation rows `UᵀZ⁺ = v` join the primary
/// observations as secondary data. The ordinary variant is selected by the
/// presence of `obs.mean` and then requires `mu_star` and `ops.mean`.
pub fn co_kriging(
    k: &SqExpKernel,
    obs: &ObservationSet,
    ops: &OperatorSystem,
    pred: &[ExtendedPoint],
    mu_star: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<KrigingWeights> {
    require_nonempty(obs)?;
    if ops.n_rows() == 0 {
        return match obs.mean() {
            None => simple_kriging(k, obs, pred, cfg),
            Some(_) => ordinary_kriging(k, obs, pred, mu_star.unwrap_or(&[]), cfg),
        };
    }
    let sys = CoKrigingSystem::assemble(k, obs, ops, pred)?;
    let t1 = Instant::now();
    let f = cfg.factor(&sys.k_plus)?;
    let mut alpha = f.solve(&sys.h_plus);
    let lambda = match &sys.mu_plus {
        None => None,
        Some(mu) => {
            let ms = mu_star.ok_or(KrigingError::InvalidParameter {
                name: "mu_star",
                reason: "ordinary co-Kriging needs the prediction means".into(),
            })?;
            require_len("mu_star", ms, pred.len())?;
            let (w, g) = mean_gamma(&f, mu, max_diag(&sys.k_plus))?;
            let lambda = (DVector::from_column_slice(ms) - sys.h_plus.tr_mul(&w)) / g;
            alpha.ger(1.0, &w, &lambda, 1.0);
            Some(lambda)
        }
    };
    let inversion_s = secs(t1);
    let predictions = alpha.tr_mul(&sys.y);
    Ok(KrigingWeights {
        alpha,
        lambda,
        lambda2: None,
        predictions,
        meta: FitMeta {
            nugget_used: f.nugget,
            cov_evals: sys.cov_evals,
            construction_s: sys.construction_s,
            inversion_s,
        },
    })
}

/// Centered Kriging mean `s = HᵀK⁻¹Z` at `atoms` and the conditional
/// covariance `K₂|₁ = K₂₂ − HᵀK⁻¹H`.
pub fn conditional_moments(
    k: &SqExpKernel,
    obs: &ObservationSet,
    atoms: &[ExtendedPoint],
    cfg: &SolveConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    require_centered(obs)?;
    require_nonempty(obs)?;
    let counter = EvalCounter::new();
    let kk = gram_symmetric(k, obs.points(), &counter)?;
    let h = gram(k, obs.points(), atoms, &counter)?;
    let k22 = gram_symmetric(k, atoms, &counter)?;
    let f = cfg.factor(&kk)?;
    let kih = f.solve(&h);
    let s = h.tr_mul(&f.solve_vec(&obs.values_vector()));
    let k21 = k22 - h.tr_mul(&kih);
    Ok((s, (&k21 + k21.transpose()) * 0.5))
}

/// `s + M U (UᵀMU)⁻¹ (v − Uᵀs)` over the atoms of `ops`; `metric = None`
/// takes `M = I`.
pub fn constrained_correction(
    metric: Option<&DMatrix<f64>>,
    ops: &OperatorSystem,
    s: &DVector<f64>,
) -> Result<DVector<f64>> {
    if s.len() != ops.n_atoms() {
        return Err(KrigingError::DimensionMismatch {
            expected: ops.n_atoms(),
            found: s.len(),
        });
    }
    let terms = ops.column_terms();
    let m = match metric {
        None => Metric::Identity,
        Some(m) => Metric::Dense(m),
    };
    constrained_update(m, &terms, &ops.rhs, s)
}

/// Co-Kriging with every prediction atom used as a collocation atom,
/// evaluated through the conditional covariance `K₂|₁`.
pub fn co_kriging_schur(
    k: &SqExpKernel,
    obs: &ObservationSet,
    ops_at_predictions: &OperatorSystem,
    cfg: &SolveConfig,
) -> Result<DVector<f64>> {
    let (s, k21) = conditional_moments(k, obs, &ops_at_predictions.colloc_points, cfg)?;
    if ops_at_predictions.n_rows() == 0 {
        return Ok(s);
    }
    constrained_correction(Some(&k21), ops_at_predictions, &s)
}

/// Lagrangian Kriging: weights minimizing the predictive MSE subject to
/// `Uᵀ Z* = v` on the predictions, at the atoms of `ops_at_predictions`.
/// Atoms with zero rows in `U` are predicted but unconstrained.
pub fn lagrangian_kriging(
    k: &SqExpKernel,
    obs: &ObservationSet,
    ops_at_predictions: &OperatorSystem,
    mu_star: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<KrigingWeights> {
    require_nonempty(obs)?;
    let ops = ops_at_predictions;
    let pred = &ops.colloc_points;
    let counter = EvalCounter::new();
    let t0 = Instant::now();
    let kk = gram_symmetric(k, obs.points(), &counter)?;
    let h = gram(k, obs.points(), pred, &counter)?;
    let terms = ops.column_terms();
    let proj = GramProjector::new(&terms, ops.n_atoms())?;
    let construction_s = secs(t0);

    let t1 = Instant::now();
    let f = cfg.factor(&kk)?;
    let z = obs.values_vector();
    let kz = f.solve_vec(&z);
    let gamma2 = z.dot(&kz);
    let mut alpha = f.solve(&h);
    let s = h.tr_mul(&kz);
    let p = ops.n_rows();
    let u_mul = |y: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(pred.len());
        for (j, c) in terms.iter().enumerate() {
            for &(i, v) in c {
                out[i] += v * y[j];
            }
        }
        out
    };

    let (lambda, lambda2, predictions) = match obs.mean() {
        None => {
            if p == 0 {
                let predictions = alpha.tr_mul(&z);
                (None, None, predictions)
            } else {
                if !(gamma2 > 0.0) || !gamma2.is_finite() {
                    return Err(KrigingError::Degenerate(format!(
                        "ZᵀK⁻¹Z = {gamma2:e}; the constrained predictor needs nonzero observations"
                    )));
                }
                let resid = &ops.rhs - ops.apply_t(&s);
                let l2 = proj.solve(&resid) / gamma2;
                alpha.ger(1.0, &kz, &u_mul(&l2), 1.0);
                let predictions = constrained_update(Metric::Identity, &terms, &ops.rhs, &s)?;
                (None, Some(l2), predictions)
            }
        }
        Some(mu) => {
            let ms = mu_star.ok_or(KrigingError::InvalidParameter {
                name: "mu_star",
                reason: "ordinary Lagrangian Kriging needs the prediction means".into(),
            })?;
            require_len("mu_star", ms, pred.len())?;
            let mu = DVector::from_column_slice(mu);
            let (w, gamma1) = mean_gamma(&f, &mu, max_diag(&kk))?;
            let gamma3 = z.dot(&w);
            let a = DVector::from_column_slice(ms) - h.tr_mul(&w);
            let l2 = if p == 0 {
                DVector::zeros(0)
            } else {
                let delta = gamma2 - gamma3 * gamma3 / gamma1;
                if !delta.is_finite() || delta.abs() <= 1e-12 * gamma2.abs() || gamma2 == 0.0 {
                    return Err(KrigingError::Degenerate(format!(
                        "γ₂ − γ₃²/γ₁ = {delta:e} vanishes (γ₂ = {gamma2:e})"
                    )));
                }
                let b = &ops.rhs - ops.apply_t(&s) - ops.apply_t(&a) * (gamma3 / gamma1);
                proj.solve(&b) / delta
            };
            let ul2 = u_mul(&l2);
            let lambda = (&a - &ul2 * gamma3) / gamma1;
            alpha.ger(1.0, &w, &lambda, 1.0);
            alpha.ger(1.0, &kz, &ul2, 1.0);
            let predictions = alpha.tr_mul(&z);
            (Some(lambda), (p > 0).then_some(l2), predictions)
        }
    };
    let inversion_s = secs(t1);
    Ok(KrigingWeights {
        alpha,
        lambda,
        lambda2,
        predictions,
        meta: FitMeta {
            nugget_used: f.nugget,
            cov_evals: counter.get(),
            construction_s,
            inversion_s,
        },
    })
}

/// `Tr(ΑᵀKΑ) − 2Tr(ΑᵀH) + Tr(K*)`.
pub fn mse_objective(alpha: &DMatrix<f64>, k: &DMatrix<f64>, h: &DMatrix<f64>, kstar: &DMatrix<f64>) -> f64 {
    mse_objective_columns(alpha, k, h, kstar).sum()
}

/// Per-prediction terms of [`mse_objective`].
pub fn mse_objective_columns(
    alpha: &DMatrix<f64>,
    k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    kstar: &DMatrix<f64>,
) -> DVector<f64> {
    let ka = k * alpha;
    DVector::from_iterator(
        alpha.ncols(),
        (0..alpha.ncols()).map(|j| {
            alpha.column(j).dot(&ka.column(j)) - 2.0 * alpha.column(j).dot(&h.column(j)) + kstar[(j, j)]
        }),
    )
}
