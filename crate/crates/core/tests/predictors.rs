mod common;

use common::{dense_gram, kkt_weights, max_rel, ode_setup, ode_system, random_rows, spread_points_1d};
use nalgebra::{DMatrix, DVector};
use physkrig::predictors::{
    co_kriging, co_kriging_schur, conditional_moments, constrained_correction, lagrangian_kriging, ordinary_kriging,
    simple_kriging, SolveConfig,
};
use physkrig::{encode_pointwise, ExtendedPoint, ObservationSet, OperatorSystem, SqExpKernel};
use proptest::prelude::*;
use rand::Rng;

fn exact() -> SolveConfig {
    SolveConfig::fixed(0.0).unwrap()
}

struct Instance {
    k: SqExpKernel,
    obs: ObservationSet,
    ops: OperatorSystem,
    pred: Vec<ExtendedPoint>,
}

/// `n ≤ 6` observations, `p ≤ 2` random rows and `q ≤ 3` value atoms.
fn instance(seed: u64) -> Instance {
    let mut r = common::rng(seed);
    let n = r.random_range(2..=6);
    let p = r.random_range(1..=2);
    let q = r.random_range(1..=3);
    let xs = spread_points_1d(&mut r, n + p + q, 0.0, 8.0, 0.3);
    let obs_x = &xs[..n];
    let locs: Vec<Vec<f64>> = obs_x.iter().map(|&x| vec![x]).collect();
    let vals: Vec<f64> = obs_x.iter().map(|&x| (1.3 * x).sin() + 0.2 * x).collect();
    let (rows, rhs) = random_rows(&mut r, &xs[n..n + p]);
    Instance {
        k: SqExpKernel::new(r.random_range(0.5..2.0), r.random_range(0.6..1.4), 1).unwrap(),
        obs: ObservationSet::from_values(&locs, &vals).unwrap(),
        ops: encode_pointwise(&rows, &rhs).unwrap(),
        pred: xs[n + p..].iter().map(|&x| ExtendedPoint::value(vec![x])).collect(),
    }
}

fn constant_mean(points: &[ExtendedPoint], c: f64) -> Vec<f64> {
    points.iter().map(|p| if p.m.is_zero() { c } else { 0.0 }).collect()
}

/// `K⁺`, `H⁺` and `[Z; v]` assembled entry by entry.
fn stacked(inst: &Instance) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let (obs, ops) = (inst.obs.points(), &inst.ops);
    let (n, p) = (obs.len(), ops.n_rows());
    let k11 = dense_gram(&inst.k, obs, obs);
    let k12 = dense_gram(&inst.k, obs, &ops.colloc_points) * &ops.u;
    let k22 = ops.u.transpose() * dense_gram(&inst.k, &ops.colloc_points, &ops.colloc_points) * &ops.u;
    let mut kp = DMatrix::zeros(n + p, n + p);
    kp.view_mut((0, 0), (n, n)).copy_from(&k11);
    kp.view_mut((0, n), (n, p)).copy_from(&k12);
    kp.view_mut((n, 0), (p, n)).copy_from(&k12.transpose());
    kp.view_mut((n, n), (p, p)).copy_from(&k22);
    let mut hp = DMatrix::zeros(n + p, inst.pred.len());
    hp.rows_mut(0, n).copy_from(&dense_gram(&inst.k, obs, &inst.pred));
    hp.rows_mut(n, p)
        .copy_from(&(ops.u.transpose() * dense_gram(&inst.k, &ops.colloc_points, &inst.pred)));
    let y = DVector::from_iterator(n + p, inst.obs.values().iter().chain(ops.rhs.iter()).copied());
    (kp, hp, y)
}

#[test]
fn ordinary_kriging_matches_kkt() {
    for seed in 0..50 {
        let inst = instance(seed);
        let mu = constant_mean(inst.obs.points(), 1.0);
        let obs = inst.obs.with_mean(Some(mu.clone())).unwrap();
        let mu_star = constant_mean(&inst.pred, 1.0);
        let w = ordinary_kriging(&inst.k, &obs, &inst.pred, &mu_star, &exact()).unwrap();
        let kk = dense_gram(&inst.k, obs.points(), obs.points());
        let h = dense_gram(&inst.k, obs.points(), &inst.pred);
        let oracle = kkt_weights(&kk, &h, Some((&DVector::from_vec(mu), &DVector::from_vec(mu_star))), None);
        assert!(max_rel(&w.alpha, &oracle) < 1e-8, "seed {seed}");
    }
}

#[test]
fn co_kriging_matches_kkt() {
    for seed in 0..50 {
        let inst = instance(seed);
        let (kp, hp, y) = stacked(&inst);
        let w = co_kriging(&inst.k, &inst.obs, &inst.ops, &inst.pred, None, &exact()).unwrap();
        let simple = kkt_weights(&kp, &hp, None, None);
        assert!(max_rel(&w.alpha, &simple) < 1e-8, "seed {seed}");
        let d = (&w.predictions - simple.tr_mul(&y)).amax();
        assert!(d < 1e-8 * w.alpha.amax().max(1.0) * y.amax().max(1.0), "seed {seed}");

        let c = 0.7;
        let obs = inst.obs.with_mean(Some(constant_mean(inst.obs.points(), c))).unwrap();
        let ops = inst.ops.clone().with_constant_mean(c);
        let mu_star = constant_mean(&inst.pred, c);
        let w = co_kriging(&inst.k, &obs, &ops, &inst.pred, Some(&mu_star), &exact()).unwrap();
        let mu_plus = DVector::from_iterator(
            y.len(),
            obs.mean().unwrap().iter().chain(ops.mean.as_ref().unwrap().iter()).copied(),
        );
        let oracle = kkt_weights(&kp, &hp, Some((&mu_plus, &DVector::from_vec(mu_star))), None);
        assert!(max_rel(&w.alpha, &oracle) < 1e-8, "seed {seed}");
    }
}

#[test]
fn lagrangian_kriging_matches_kkt() {
    for seed in 0..50 {
        let inst = instance(seed);
        let ops = inst.ops.with_atoms(&inst.pred).unwrap();
        let atoms = &ops.colloc_points;
        let kk = dense_gram(&inst.k, inst.obs.points(), inst.obs.points());
        let h = dense_gram(&inst.k, inst.obs.points(), atoms);
        let z = inst.obs.values_vector();

        let w = lagrangian_kriging(&inst.k, &inst.obs, &ops, None, &exact()).unwrap();
        let oracle = kkt_weights(&kk, &h, None, Some((&ops.u, &z, &ops.rhs)));
        assert!(max_rel(&w.alpha, &oracle) < 1e-8, "simple, seed {seed}");
        assert!((&w.predictions - oracle.tr_mul(&z)).amax() < 1e-8);

        let mu = constant_mean(inst.obs.points(), 1.0);
        let obs = inst.obs.with_mean(Some(mu.clone())).unwrap();
        let mu_star = constant_mean(atoms, 1.0);
        let w = lagrangian_kriging(&inst.k, &obs, &ops, Some(&mu_star), &exact()).unwrap();
        let oracle = kkt_weights(
            &kk,
            &h,
            Some((&DVector::from_vec(mu), &DVector::from_vec(mu_star))),
            Some((&ops.u, &z, &ops.rhs)),
        );
        assert!(max_rel(&w.alpha, &oracle) < 1e-8, "ordinary, seed {seed}");
    }
}

#[test]
fn interpolation_at_observations() {
    let cfg = SolveConfig::fixed(1e-10).unwrap();
    for seed in 0..20 {
        let inst = instance(seed);
        let at = inst.obs.points().to_vec();
        let z = inst.obs.values_vector();
        let sk = simple_kriging(&inst.k, &inst.obs, &at, &cfg).unwrap();
        assert!((sk.predictions - &z).amax() < 1e-6);
        let obs = inst.obs.with_mean(Some(vec![1.0; z.len()])).unwrap();
        let ok = ordinary_kriging(&inst.k, &obs, &at, &vec![1.0; z.len()], &cfg).unwrap();
        assert!((ok.predictions - &z).amax() < 1e-6);
        let ck = co_kriging(&inst.k, &inst.obs, &inst.ops, &at, None, &cfg).unwrap();
        assert!((ck.predictions - &z).amax() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lagrangian_predictions_satisfy_constraints(seed in any::<u64>()) {
        let inst = instance(seed);
        let ops = inst.ops.with_atoms(&inst.pred).unwrap();
        let cfg = SolveConfig::default();
        let w = lagrangian_kriging(&inst.k, &inst.obs, &ops, None, &cfg).unwrap();
        prop_assert!(ops.residual(&w.predictions).amax() <= 1e-8);
        let obs = inst.obs.with_mean(Some(vec![1.0; inst.obs.len()])).unwrap();
        let mu_star = constant_mean(&ops.colloc_points, 1.0);
        let w = lagrangian_kriging(&inst.k, &obs, &ops, Some(&mu_star), &cfg).unwrap();
        prop_assert!(ops.residual(&w.predictions).amax() <= 1e-8);
    }

    #[test]
    fn closed_forms_are_affine_in_z(seed in any::<u64>(), a in -2.0f64..2.0) {
        let inst = instance(seed);
        let ops = inst.ops.with_atoms(&inst.pred).unwrap();
        let cfg = exact();
        let mut r = common::rng(seed.wrapping_add(1));
        let z2: Vec<f64> = (0..inst.obs.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let o1 = inst.obs.clone();
        let o2 = inst.obs.with_values(z2).unwrap();
        let mix: Vec<f64> = o1.values().iter().zip(o2.values()).map(|(u, v)| a * u + (1.0 - a) * v).collect();
        let om = inst.obs.with_values(mix).unwrap();
        let lk = |o: &ObservationSet| lagrangian_kriging(&inst.k, o, &ops, None, &cfg).unwrap().predictions;
        let lhs = lk(&om);
        let rhs = lk(&o1) * a + lk(&o2) * (1.0 - a);
        prop_assert!((&lhs - &rhs).amax() <= 1e-8 * lhs.amax().max(1.0));
        let sc = |o: &ObservationSet| co_kriging_schur(&inst.k, o, &ops, &cfg).unwrap();
        let lhs = sc(&om);
        let rhs = sc(&o1) * a + sc(&o2) * (1.0 - a);
        prop_assert!((&lhs - &rhs).amax() <= 1e-8 * lhs.amax().max(1.0));
    }
}

#[test]
fn identity_metric_reproduces_lagrangian_kriging() {
    for seed in 0..20 {
        let inst = instance(seed);
        let ops = inst.ops.with_atoms(&inst.pred).unwrap();
        let (s, _) = conditional_moments(&inst.k, &inst.obs, &ops.colloc_points, &exact()).unwrap();
        let via_identity = constrained_correction(None, &ops, &s).unwrap();
        let lk = lagrangian_kriging(&inst.k, &inst.obs, &ops, None, &exact()).unwrap();
        assert_eq!(via_identity, lk.predictions);
    }
}

#[test]
fn schur_form_equals_co_kriging_on_the_ode_setup() {
    let setup = ode_setup(0);
    let ops = ode_system(&setup.xs);
    let k = SqExpKernel::unit(1.46, 1).unwrap();
    let cfg = SolveConfig::default();
    let schur = co_kriging_schur(&k, &setup.obs, &ops, &cfg).unwrap();
    let ck = co_kriging(&k, &setup.obs, &ops, &ops.colloc_points, None, &cfg).unwrap();
    assert!((schur - ck.predictions).amax() < 1e-8);
}
