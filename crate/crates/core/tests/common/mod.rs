#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use physkrig::{cov, encode_pointwise, ExtendedPoint, MultiIndex, ObservationSet, OperatorRow, OperatorSystem, SqExpKernel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn m(orders: &[u32]) -> MultiIndex {
    MultiIndex::new(orders.to_vec())
}

pub fn dense_gram(k: &SqExpKernel, a: &[ExtendedPoint], b: &[ExtendedPoint]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| cov(k, &a[i], &b[j]).unwrap())
}

/// Distinct points in `[lo, hi]` with a minimum spacing.
pub fn spread_points_1d(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64, gap: f64) -> Vec<f64> {
    assert!(n as f64 * gap < 0.5 * (hi - lo), "spacing too tight to sample");
    let mut out: Vec<f64> = Vec::new();
    while out.len() < n {
        let x = r.random_range(lo..hi);
        if out.iter().all(|y| (x - y).abs() > gap) {
            out.push(x);
        }
    }
    out
}

pub fn ode_row(x: f64) -> OperatorRow {
    OperatorRow::new(vec![x], vec![(1.0, m(&[0])), (1.0, m(&[2]))])
}

/// `f + f'' = 0` at each location.
pub fn ode_system(xs: &[f64]) -> OperatorSystem {
    let rows: Vec<OperatorRow> = xs.iter().map(|&x| ode_row(x)).collect();
    encode_pointwise(&rows, &vec![0.0; xs.len()]).unwrap()
}

/// Four seeded sin observations on `[0, 2π]` and ten equispaced
/// collocation points including both ends.
pub struct OdeSetup {
    pub obs: ObservationSet,
    pub obs_x: Vec<f64>,
    pub xs: Vec<f64>,
}

pub fn ode_setup(seed: u64) -> OdeSetup {
    let mut r = rng(seed);
    let tau = std::f64::consts::TAU;
    let obs_x: Vec<f64> = (0..4).map(|_| r.random_range(0.0..tau)).collect();
    let locs: Vec<Vec<f64>> = obs_x.iter().map(|&x| vec![x]).collect();
    let vals: Vec<f64> = obs_x.iter().map(|x| x.sin()).collect();
    OdeSetup {
        obs: ObservationSet::from_values(&locs, &vals).unwrap(),
        obs_x,
        xs: (0..10).map(|i| tau * i as f64 / 9.0).collect(),
    }
}

/// Random constraint rows on orders `0..=2` at the given 1D locations.
pub fn random_rows(r: &mut ChaCha8Rng, xs: &[f64]) -> (Vec<OperatorRow>, Vec<f64>) {
    let rows = xs
        .iter()
        .map(|&x| {
            let mut terms = vec![(r.random_range(0.5..1.5), m(&[0]))];
            if r.random_bool(0.7) {
                terms.push((r.random_range(-1.0..1.0), m(&[1])));
            }
            if r.random_bool(0.7) {
                terms.push((r.random_range(-1.0..1.0), m(&[2])));
            }
            OperatorRow::new(vec![x], terms)
        })
        .collect();
    let rhs = xs.iter().map(|_| r.random_range(-1.0..1.0)).collect();
    (rows, rhs)
}

/// Weights of the equality-constrained quadratic program
/// `min Σⱼ aⱼᵀK aⱼ − 2 aⱼᵀ hⱼ` subject, per column, to `aⱼᵀμ = μ*ⱼ` (when
/// `unbiased` is given) and, jointly, `Σⱼ Uⱼᵢ aⱼᵀZ = vᵢ` (when
/// `differential` is given), solved from the dense stationarity system.
pub fn kkt_weights(
    k: &DMatrix<f64>,
    h: &DMatrix<f64>,
    unbiased: Option<(&DVector<f64>, &DVector<f64>)>,
    differential: Option<(&DMatrix<f64>, &DVector<f64>, &DVector<f64>)>,
) -> DMatrix<f64> {
    let (n, l) = (h.nrows(), h.ncols());
    let c1 = if unbiased.is_some() { l } else { 0 };
    let c2 = differential.map_or(0, |(u, _, _)| u.ncols());
    let dim = n * l + c1 + c2;
    let mut a = DMatrix::zeros(dim, dim);
    let mut b = DVector::zeros(dim);
    for j in 0..l {
        a.view_mut((j * n, j * n), (n, n)).copy_from(k);
        b.rows_mut(j * n, n).copy_from(&h.column(j));
    }
    if let Some((mu, mu_star)) = unbiased {
        for j in 0..l {
            let c = n * l + j;
            for i in 0..n {
                a[(j * n + i, c)] = -mu[i];
                a[(c, j * n + i)] = mu[i];
            }
            b[c] = mu_star[j];
        }
    }
    if let Some((u, z, v)) = differential {
        for q in 0..c2 {
            let c = n * l + c1 + q;
            for j in 0..l {
                for i in 0..n {
                    a[(j * n + i, c)] = -u[(j, q)] * z[i];
                    a[(c, j * n + i)] = u[(j, q)] * z[i];
                }
            }
            b[c] = v[q];
        }
    }
    let x = a.lu().solve(&b).expect("KKT system is nonsingular");
    DMatrix::from_fn(n, l, |i, j| x[j * n + i])
}

pub fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}
