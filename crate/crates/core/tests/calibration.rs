mod common;

use common::{ode_setup, ode_system, random_rows, spread_points_1d};
use physkrig::calibration::{
    calibrate, evaluate, interpolation_error_criterion, loocv_ck_virtual, loocv_lk, loocv_mse_virtual,
    sigma2_virtual, Criterion, SearchConfig, VirtualLoo,
};
use physkrig::predictors::{co_kriging, simple_kriging, SolveConfig};
use physkrig::uq::var_ck;
use physkrig::{encode_pointwise, ObservationSet, OperatorSystem, SqExpKernel};
use rand::Rng;

fn exact() -> SolveConfig {
    SolveConfig::fixed(0.0).unwrap()
}

/// Random simple-Kriging instance in one or two dimensions.
fn instance(seed: u64) -> (SqExpKernel, ObservationSet) {
    let mut r = common::rng(seed);
    let n = r.random_range(2..=12);
    let dim = r.random_range(1..=2);
    let locs: Vec<Vec<f64>> = if dim == 1 {
        spread_points_1d(&mut r, n, 0.0, 10.0, 0.4).into_iter().map(|x| vec![x]).collect()
    } else {
        let mut out: Vec<Vec<f64>> = Vec::new();
        while out.len() < n {
            let p = vec![r.random_range(0.0..4.0), r.random_range(0.0..4.0)];
            if out.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() > 0.5) {
                out.push(p);
            }
        }
        out
    };
    let vals: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let k = SqExpKernel::unit(r.random_range(0.4..1.2), dim).unwrap();
    (k, ObservationSet::from_values(&locs, &vals).unwrap())
}

/// Held-out residuals and unit-variance MMSE by refitting without each observation.
fn naive_folds(k: &SqExpKernel, obs: &ObservationSet, ops: &OperatorSystem) -> (Vec<f64>, Vec<f64>) {
    (0..obs.len())
        .map(|i| {
            let rest = obs.without(i);
            let at = &obs.points()[i..=i];
            let w = co_kriging(k, &rest, ops, at, None, &exact()).unwrap();
            let v = var_ck(k, &rest, ops, at, &exact()).unwrap();
            (obs.values()[i] - w.predictions[0], v.raw_variance[0])
        })
        .unzip()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[test]
fn virtual_loo_matches_refitting() {
    for seed in 0..20 {
        let (k, obs) = instance(seed);
        let (res, var) = naive_folds(&k, &obs, &OperatorSystem::empty());
        let n = obs.len() as f64;
        let naive_mse = res.iter().map(|r| r * r).sum::<f64>() / n;
        let naive_s2 = res.iter().zip(&var).map(|(r, v)| r * r / v).sum::<f64>() / n;
        let mse = loocv_mse_virtual(&k, &obs, &exact()).unwrap();
        let s2 = sigma2_virtual(&k, &obs, k.theta(), &exact()).unwrap();
        assert!(rel(mse, naive_mse) < 1e-10, "seed {seed}: {mse} vs {naive_mse}");
        assert!(rel(s2.value, naive_s2) < 1e-10, "seed {seed}");
    }
}

#[test]
fn variance_criterion_is_one_after_fit() {
    for seed in 0..20 {
        let (k, obs) = instance(seed);
        let s2 = sigma2_virtual(&k, &obs, k.theta(), &exact()).unwrap().value;
        let scaled = k.with_sigma2(s2).unwrap();
        let (res, var) = naive_folds(&scaled, &obs, &OperatorSystem::empty());
        let loovar = res.iter().zip(&var).map(|(r, v)| r * r / v).sum::<f64>() / obs.len() as f64;
        assert!((loovar - 1.0).abs() < 1e-8, "seed {seed}: {loovar}");
    }
}

#[test]
fn scaling_observations_keeps_theta() {
    let (_, obs) = instance(3);
    let search = SearchConfig::default();
    let base = calibrate(Criterion::SimpleLoo, &obs, obs.points()[0].dim(), &search, &exact()).unwrap();
    for c in [2.0, -0.5, 3.7] {
        let scaled = obs.with_values(obs.values().iter().map(|v| c * v).collect()).unwrap();
        let s = calibrate(Criterion::SimpleLoo, &scaled, obs.points()[0].dim(), &search, &exact()).unwrap();
        if c == 2.0 || c == -0.5 {
            assert_eq!(s.theta_hat, base.theta_hat);
        } else {
            assert!(rel(s.theta_hat, base.theta_hat) < 1e-6);
        }
        assert!(rel(s.sigma2_hat, c * c * base.sigma2_hat) < 1e-10);
        assert!(rel(s.criterion_value, c * c * base.criterion_value) < 1e-10);
    }
}

#[test]
fn calibration_is_deterministic() {
    let setup = ode_setup(0);
    let ops = ode_system(&setup.xs);
    let search = SearchConfig::default();
    let cfg = SolveConfig::default();
    for crit in [Criterion::SimpleLoo, Criterion::CoKrigingLoo(&ops)] {
        let a = calibrate(crit, &setup.obs, 1, &search, &cfg).unwrap();
        let b = calibrate(crit, &setup.obs, 1, &search, &cfg).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn filtered_co_kriging_loo_matches_refitting() {
    for seed in 0..10 {
        let mut r = common::rng(100 + seed);
        let xs = spread_points_1d(&mut r, 7, 0.0, 8.0, 0.4);
        let locs: Vec<Vec<f64>> = xs[..4].iter().map(|&x| vec![x]).collect();
        let vals: Vec<f64> = xs[..4].iter().map(|x| x.cos()).collect();
        let obs = ObservationSet::from_values(&locs, &vals).unwrap();
        let (rows, rhs) = random_rows(&mut r, &xs[4..]);
        let ops = encode_pointwise(&rows, &rhs).unwrap();
        let k = SqExpKernel::unit(r.random_range(0.6..1.4), 1).unwrap();

        let (res, var) = naive_folds(&k, &obs, &ops);
        let v = loocv_ck_virtual(&k, &obs, &ops, &exact()).unwrap();
        for i in 0..4 {
            assert!(rel(v.residuals()[i], res[i]) < 1e-9, "seed {seed} fold {i}");
            assert!(rel(1.0 / v.precision[i], var[i]) < 1e-9, "seed {seed} fold {i}");
        }
        let naive_mse = res.iter().map(|r| r * r).sum::<f64>() / 4.0;
        assert!(rel(v.mse(), naive_mse) < 1e-10);
    }
}

#[test]
fn empty_rows_reduce_to_simple_criteria() {
    let (k, obs) = instance(7);
    let ck = loocv_ck_virtual(&k, &obs, &OperatorSystem::empty(), &exact()).unwrap();
    let sk = VirtualLoo::simple(&k, &obs, &exact()).unwrap();
    assert_eq!(ck.mse(), sk.mse());
    assert_eq!(ck.sigma2(), sk.sigma2());

    // explicit folds of the unconstrained Lagrangian predictor are simple-Kriging folds
    let lk = loocv_lk(&k, &obs, &OperatorSystem::empty(), &exact()).unwrap();
    for i in 0..obs.len() {
        let rest = obs.without(i);
        let w = simple_kriging(&k, &rest, &obs.points()[i..=i], &exact()).unwrap();
        assert!((lk.residuals[i] - (obs.values()[i] - w.predictions[0])).abs() < 1e-10);
    }
    assert!(rel(lk.mse(), sk.mse()) < 1e-9);
    assert!(interpolation_error_criterion(&k, &obs, &OperatorSystem::empty(), &exact()).unwrap() < 1e-20);
}

#[test]
fn interpolation_minimizer_beats_loo_minimizer() {
    let setup = ode_setup(0);
    let at_obs = ode_system(&setup.obs_x);
    let search = SearchConfig::default();
    let cfg = SolveConfig::default();
    let loo = calibrate(Criterion::LagrangianLoo(&at_obs), &setup.obs, 1, &search, &cfg).unwrap();
    let interp = calibrate(Criterion::LagrangianInterp(&at_obs), &setup.obs, 1, &search, &cfg).unwrap();
    let at_loo = evaluate(Criterion::LagrangianInterp(&at_obs), &setup.obs, 1, loo.theta_hat, &cfg).unwrap();
    assert!(interp.criterion_value <= at_loo);
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

    #[test]
    fn virtual_identity_holds(seed in proptest::prelude::any::<u64>()) {
        let (k, obs) = instance(seed);
        let (res, _) = naive_folds(&k, &obs, &OperatorSystem::empty());
        let naive = res.iter().map(|r| r * r).sum::<f64>() / obs.len() as f64;
        let mse = loocv_mse_virtual(&k, &obs, &exact()).unwrap();
        proptest::prop_assert!(rel(mse, naive) < 1e-10);
    }
}
