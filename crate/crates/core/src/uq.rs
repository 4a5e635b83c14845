//! Minimal-MSE predictive variances and squared-magnitude moments.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::design::{gram, gram_symmetric, EvalCounter, ExtendedPoint, ObservationSet, OperatorSystem};
use crate::error::{KrigingError, Result};
use crate::kernel::SqExpKernel;
use crate::linalg::GramProjector;
use crate::predictors::{constrained_correction, CoKrigingSystem, FitMeta, SolveConfig};

/// Tolerance below which a negative variance is treated as rounding noise.
pub const NEGATIVE_VARIANCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PredictiveUQ {
    pub mean: DVector<f64>,
    /// Diagonal clamped at zero.
    pub variance: DVector<f64>,
    /// Diagonal before clamping.
    pub raw_variance: DVector<f64>,
    pub covariance: Option<DMatrix<f64>>,
    pub interval_lo: DVector<f64>,
    pub interval_hi: DVector<f64>,
    pub meta: FitMeta,
}

impl PredictiveUQ {
    pub fn from_covariance(mean: DVector<f64>, cov: DMatrix<f64>, meta: FitMeta) -> Self {
        let raw = cov.diagonal();
        if let Some(v) = raw.iter().copied().find(|&v| v < -NEGATIVE_VARIANCE_TOL * cov.amax().max(1.0)) {
            log::warn!("predictive variance {v:e} is negative beyond rounding");
        }
        let variance = raw.map(|v| v.max(0.0));
        let sd = variance.map(f64::sqrt);
        PredictiveUQ {
            interval_lo: &mean - &sd * 2.0,
            interval_hi: &mean + &sd * 2.0,
            mean,
            variance,
            raw_variance: raw,
            covariance: Some(cov),
            meta,
        }
    }
}

/// Co-Kriging MMSE `K* − H⁺ᵀ(K⁺)⁻¹H⁺` for the centered model.
pub fn var_ck(
    k: &SqExpKernel,
    obs: &ObservationSet,
    ops: &OperatorSystem,
    pred: &[ExtendedPoint],
    cfg: &SolveConfig,
) -> Result<PredictiveUQ> {
    if obs.mean().is_some() {
        return Err(KrigingError::InvalidParameter {
            name: "obs.mean",
            reason: "the co-Kriging variance is implemented for the centered model".into(),
        });
    }
    let sys = CoKrigingSystem::assemble(k, obs, ops, pred)?;
    let kstar = gram_symmetric(k, pred, &EvalCounter::new())?;
    let t1 = Instant::now();
    let f = cfg.factor(&sys.k_plus)?;
    let alpha = f.solve(&sys.h_plus);
    let mean = alpha.tr_mul(&sys.y);
    let red = sys.h_plus.tr_mul(&alpha);
    let cov = kstar - (&red + red.transpose()) * 0.5;
    let meta = FitMeta {
        nugget_used: f.nugget,
        cov_evals: sys.cov_evals,
        construction_s: sys.construction_s,
        inversion_s: t1.elapsed().as_secs_f64(),
    };
    Ok(PredictiveUQ::from_covariance(mean, cov, meta))
}

/// Lagrangian Kriging variance in three readings.
#[derive(Debug, Clone)]
pub struct LagrangianUQ {
    /// `K* − (H + B)ᵀK⁻¹(H − B)` with `B = Zλ'ᵀUᵀ`, symmetrized before the
    /// diagonal is read.
    pub uq: PredictiveUQ,
    /// The unsymmetrized expression.
    pub printed: DMatrix<f64>,
    /// `K* − (H + B)ᵀK⁻¹(H + B)`.
    pub symmetric_variant: DMatrix<f64>,
    /// `max |V − Vᵀ|` of the unsymmetrized expression.
    pub asymmetry_defect: f64,
}

/// Lagrangian Kriging MMSE at the atoms of `ops_at_predictions` (centered model).
pub fn var_lk(
    k: &SqExpKernel,
    obs: &ObservationSet,
    ops_at_predictions: &OperatorSystem,
    cfg: &SolveConfig,
) -> Result<LagrangianUQ> {
    if obs.mean().is_some() {
        return Err(KrigingError::InvalidParameter {
            name: "obs.mean",
            reason: "the Lagrangian variance is implemented for the centered model".into(),
        });
    }
    let ops = ops_at_predictions;
    let atoms = &ops.colloc_points;
    let counter = EvalCounter::new();
    let t0 = Instant::now();
    let kk = gram_symmetric(k, obs.points(), &counter)?;
    let h = gram(k, obs.points(), atoms, &counter)?;
    let kstar = gram_symmetric(k, atoms, &EvalCounter::new())?;
    let terms = ops.column_terms();
    let proj = GramProjector::new(&terms, ops.n_atoms())?;
    let construction_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let f = cfg.factor(&kk)?;
    let z = obs.values_vector();
    let kz = f.solve_vec(&z);
    let kih = f.solve(&h);
    let s = h.tr_mul(&kz);
    let hkh = h.tr_mul(&kih);
    let hkh = (&hkh + hkh.transpose()) * 0.5;

    // c = Uλ'; B = Z cᵀ, so HᵀK⁻¹B = s cᵀ and BᵀK⁻¹B = γ₂ c cᵀ
    let (c, gamma2) = if ops.n_rows() == 0 {
        (DVector::zeros(atoms.len()), 0.0)
    } else {
        let gamma2 = z.dot(&kz);
        if !(gamma2 > 0.0) || !gamma2.is_finite() {
            return Err(KrigingError::Degenerate(format!("ZᵀK⁻¹Z = {gamma2:e} must be positive")));
        }
        let l2 = proj.solve(&(&ops.rhs - ops.apply_t(&s))) / gamma2;
        let mut c = DVector::zeros(atoms.len());
        for (j, col) in terms.iter().enumerate() {
            for &(i, v) in col {
                c[i] += v * l2[j];
            }
        }
        (c, gamma2)
    };
    let sct = &s * c.transpose();
    let bkb = &c * c.transpose() * gamma2;
    let printed = &kstar - &hkh + &sct - sct.transpose() + &bkb;
    let symmetric_variant = &kstar - &hkh - &sct - sct.transpose() - &bkb;
    let asymmetry_defect = (&printed - printed.transpose()).amax();
    let sym = (&printed + printed.transpose()) * 0.5;
    let mean = if ops.n_rows() == 0 {
        s
    } else {
        constrained_correction(None, ops, &s)?
    };
    let meta = FitMeta {
        nugget_used: f.nugget,
        cov_evals: counter.get(),
        construction_s,
        inversion_s: t1.elapsed().as_secs_f64(),
    };
    Ok(LagrangianUQ {
        uq: PredictiveUQ::from_covariance(mean, sym, meta),
        printed,
        symmetric_variant,
        asymmetry_defect,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadFormMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Mean and variance of `‖v‖²` for `v ~ N(μ, Σ)` in two dimensions.
pub fn quadform_moments(mean2: [f64; 2], cov2: [[f64; 2]; 2]) -> Result<QuadFormMoments> {
    let [[a, b], [b2, d]] = cov2;
    if mean2.iter().chain(cov2.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(KrigingError::InvalidParameter {
            name: "cov2",
            reason: "moments need finite inputs".into(),
        });
    }
    let scale = a.abs().max(d.abs()).max(1.0);
    if (b - b2).abs() > 1e-10 * scale {
        return Err(KrigingError::InvalidParameter {
            name: "cov2",
            reason: "covariance must be symmetric".into(),
        });
    }
    let b = 0.5 * (b + b2);
    let half_tr = 0.5 * (a + d);
    let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let lo = half_tr - disc;
    if lo < -1e-10 {
        return Err(KrigingError::InvalidParameter {
            name: "cov2",
            reason: format!("covariance has eigenvalue {lo:e} < 0"),
        });
    }
    let [m0, m1] = mean2;
    let tr = a + d;
    let tr_sq = a * a + 2.0 * b * b + d * d;
    let quad = m0 * (a * m0 + b * m1) + m1 * (b * m0 + d * m1);
    Ok(QuadFormMoments {
        mean: m0 * m0 + m1 * m1 + tr,
        variance: (2.0 * tr_sq + 4.0 * quad).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{encode_pointwise, OperatorRow};
    use crate::kernel::MultiIndex;

    #[test]
    fn chi_square_moments() {
        let eye = [[1.0, 0.0], [0.0, 1.0]];
        assert_eq!(quadform_moments([0.0, 0.0], eye).unwrap(), QuadFormMoments { mean: 2.0, variance: 4.0 });
        assert_eq!(quadform_moments([1.0, 0.0], eye).unwrap(), QuadFormMoments { mean: 3.0, variance: 8.0 });
        let z = quadform_moments([3.0, -4.0], [[0.0, 0.0], [0.0, 0.0]]).unwrap();
        assert_eq!(z, QuadFormMoments { mean: 25.0, variance: 0.0 });
        assert!(quadform_moments([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]]).is_err());
    }

    #[test]
    fn interpolated_atom_has_no_variance() {
        let k = SqExpKernel::new(1.0, 0.5, 1).unwrap();
        let obs = ObservationSet::from_values(&[vec![0.0], vec![1.0]], &[0.3, 0.8]).unwrap();
        let cfg = SolveConfig::fixed(0.0).unwrap();
        let u = var_ck(&k, &obs, &OperatorSystem::empty(), &[ExtendedPoint::value(vec![1.0])], &cfg).unwrap();
        assert!(u.variance[0] < 1e-12);
        assert!((u.mean[0] - 0.8).abs() < 1e-12);
        assert!(u.interval_lo[0] <= u.mean[0] && u.mean[0] <= u.interval_hi[0]);
    }

    #[test]
    fn printed_lagrangian_variance_is_skew_perturbed() {
        let k = SqExpKernel::new(1.0, 0.8, 1).unwrap();
        let obs = ObservationSet::from_values(&[vec![0.0], vec![0.9]], &[0.5, -0.2]).unwrap();
        let rows: Vec<_> = [0.3, 1.5]
            .iter()
            .map(|&x| OperatorRow::new(vec![x], vec![(1.0, MultiIndex::new(vec![0])), (1.0, MultiIndex::new(vec![2]))]))
            .collect();
        let ops = encode_pointwise(&rows, &[0.0, 0.0]).unwrap();
        let r = var_lk(&k, &obs, &ops, &SolveConfig::fixed(0.0).unwrap()).unwrap();
        // diagonals of the printed form and its symmetrization agree
        for i in 0..r.printed.nrows() {
            assert!((r.printed[(i, i)] - r.uq.raw_variance[i]).abs() < 1e-14);
        }
        assert!(r.asymmetry_defect >= 0.0);
    }
}
