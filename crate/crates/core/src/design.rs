//! Extended design space: atoms `(x, m)`, observation sets, linear operator
//! systems `Uᵀ Z = v`, and covariance block assembly.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{KrigingError, Result};
use crate::kernel::{MultiIndex, SqExpKernel, MAX_TOTAL_ORDER};

/// Location/derivative pair; `Z(s) = Y^(m)(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedPoint {
    pub x: Vec<f64>,
    pub m: MultiIndex,
}

impl ExtendedPoint {
    pub fn new(x: Vec<f64>, m: MultiIndex) -> Result<Self> {
        if x.len() != m.dim() {
            return Err(KrigingError::DimensionMismatch {
                expected: x.len(),
                found: m.dim(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "x",
                reason: "location must be finite".into(),
            });
        }
        Ok(ExtendedPoint { x, m })
    }

    /// Undifferentiated atom at `x`.
    pub fn value(x: Vec<f64>) -> Self {
        let d = x.len();
        ExtendedPoint {
            x,
            m: MultiIndex::zero(d),
        }
    }

    pub fn at(x: &[f64], m: MultiIndex) -> Self {
        ExtendedPoint { x: x.to_vec(), m }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Lexicographic order by location, then multi-index.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        for (a, b) in self.x.iter().zip(&other.x) {
            match a.total_cmp(b) {
                Ordering::Equal => continue,
                o => return o,
            }
        }
        self.x
            .len()
            .cmp(&other.x.len())
            .then_with(|| self.m.cmp(&other.m))
    }
}

/// Key wrapper giving atoms a total order for the canonical atom table.
#[derive(Debug, Clone, PartialEq)]
struct AtomKey(ExtendedPoint);

impl Eq for AtomKey {}

impl PartialOrd for AtomKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for AtomKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.canonical_cmp(&other.0)
    }
}

/// Primary observations `Z` at atoms, with an optional mean vector `μ`.
/// An absent mean selects the centered (simple Kriging) model.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    points: Vec<ExtendedPoint>,
    values: Vec<f64>,
    mean: Option<Vec<f64>>,
}

const DUPLICATE_TOL: f64 = 1e-12;

impl ObservationSet {
    pub fn new(points: Vec<ExtendedPoint>, values: Vec<f64>, mean: Option<Vec<f64>>) -> Result<Self> {
        if points.len() != values.len() {
            return Err(KrigingError::DimensionMismatch {
                expected: points.len(),
                found: values.len(),
            });
        }
        if let Some(mu) = &mean {
            if mu.len() != points.len() {
                return Err(KrigingError::DimensionMismatch {
                    expected: points.len(),
                    found: mu.len(),
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "values",
                reason: "observations must be finite".into(),
            });
        }
        if let Some(p) = points.first() {
            let d = p.dim();
            if let Some(bad) = points.iter().find(|q| q.dim() != d) {
                return Err(KrigingError::DimensionMismatch {
                    expected: d,
                    found: bad.dim(),
                });
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let (a, b) = (&points[i], &points[j]);
                let close = a.x.iter().zip(&b.x).all(|(u, v)| (u - v).abs() <= DUPLICATE_TOL);
                if close && a.m == b.m {
                    return Err(KrigingError::DuplicateAtom { first: i, second: j });
                }
            }
        }
        Ok(ObservationSet { points, values, mean })
    }

    /// Observations of the undifferentiated field at `locations`.
    pub fn from_values(locations: &[Vec<f64>], values: &[f64]) -> Result<Self> {
        let points = locations.iter().cloned().map(ExtendedPoint::value).collect();
        Self::new(points, values.to_vec(), None)
    }

    pub fn points(&self) -> &[ExtendedPoint] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mean(&self) -> Option<&[f64]> {
        self.mean.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn values_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.points.clone(), values, self.mean.clone())
    }

    pub fn with_mean(&self, mean: Option<Vec<f64>>) -> Result<Self> {
        Self::new(self.points.clone(), self.values.clone(), mean)
    }

    /// Copy with observation `i` removed (one leave-one-out fold).
    pub fn without(&self, i: usize) -> Self {
        let mut points = self.points.clone();
        let mut values = self.values.clone();
        points.remove(i);
        values.remove(i);
        let mean = self.mean.clone().map(|mut m| {
            m.remove(i);
            m
        });
        ObservationSet { points, values, mean }
    }

    /// Concatenation; fails on duplicate atoms across the two sets.
    pub fn concat(&self, other: &ObservationSet) -> Result<Self> {
        let mut points = self.points.clone();
        points.extend_from_slice(&other.points);
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        let mean = match (&self.mean, &other.mean) {
            (None, None) => None,
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => {
                return Err(KrigingError::InvalidParameter {
                    name: "mean",
                    reason: "cannot concatenate centered and mean-bearing sets".into(),
                })
            }
        };
        Self::new(points, values, mean)
    }
}

/// One linear equation `Σ coeff · Z(location, m) = rhs` at a single location.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorRow {
    pub location: Vec<f64>,
    pub terms: Vec<(f64, MultiIndex)>,
}

impl OperatorRow {
    pub fn new(location: Vec<f64>, terms: Vec<(f64, MultiIndex)>) -> Self {
        OperatorRow { location, terms }
    }
}

/// `Uᵀ Z⁺ = v`: `u` is `c × p`, one column per equation, rows indexed by
/// `colloc_points`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSystem {
    pub colloc_points: Vec<ExtendedPoint>,
    pub u: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Expected value of each equation's left-hand side, required only by
    /// the mean-bearing (ordinary) co-Kriging variant.
    pub mean: Option<DVector<f64>>,
}

impl OperatorSystem {
    pub fn empty() -> Self {
        OperatorSystem {
            colloc_points: Vec::new(),
            u: DMatrix::zeros(0, 0),
            rhs: DVector::zeros(0),
            mean: None,
        }
    }

    /// Build a system from explicit atoms, coefficient matrix and forcing.
    pub fn from_parts(colloc_points: Vec<ExtendedPoint>, u: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        if u.nrows() != colloc_points.len() {
            return Err(KrigingError::DimensionMismatch {
                expected: colloc_points.len(),
                found: u.nrows(),
            });
        }
        if u.ncols() != rhs.len() {
            return Err(KrigingError::DimensionMismatch {
                expected: u.ncols(),
                found: rhs.len(),
            });
        }
        for j in 0..u.ncols() {
            if u.column(j).iter().all(|&v| v == 0.0) {
                return Err(KrigingError::EmptyOperatorRow { row: j });
            }
        }
        Ok(OperatorSystem {
            colloc_points,
            u,
            rhs,
            mean: None,
        })
    }

    /// Number of equations `p`.
    pub fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    /// Number of atoms `c`.
    pub fn n_atoms(&self) -> usize {
        self.colloc_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Nonzero entries of each column of `U`.
    pub fn column_terms(&self) -> Vec<Vec<(usize, f64)>> {
        (0..self.u.ncols())
            .map(|j| {
                self.u
                    .column(j)
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| (i, v))
                    .collect()
            })
            .collect()
    }

    /// `A · U` exploiting the sparsity of `U`.
    pub fn right_mul(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.ncols(), self.n_atoms());
        let terms = self.column_terms();
        let mut out = DMatrix::zeros(a.nrows(), self.n_rows());
        for (j, col) in terms.iter().enumerate() {
            let mut dst = out.column_mut(j);
            for &(i, v) in col {
                dst.axpy(v, &a.column(i), 1.0);
            }
        }
        out
    }

    /// `Uᵀ · A` exploiting the sparsity of `U`.
    pub fn left_mul_t(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(a.nrows(), self.n_atoms());
        self.right_mul(&a.transpose()).transpose()
    }

    /// `Uᵀ · z`.
    pub fn apply_t(&self, z: &DVector<f64>) -> DVector<f64> {
        assert_eq!(z.len(), self.n_atoms());
        let terms = self.column_terms();
        DVector::from_iterator(
            terms.len(),
            terms.iter().map(|col| col.iter().map(|&(i, v)| v * z[i]).sum::<f64>()),
        )
    }

    /// Residual `Uᵀ z - v`.
    pub fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        self.apply_t(z) - &self.rhs
    }

    /// Re-index the system over `atoms`, which must contain every atom of
    /// the system; atoms not referenced by an equation get zero rows.
    pub fn embed(&self, atoms: &[ExtendedPoint]) -> Result<OperatorSystem> {
        let mut u = DMatrix::zeros(atoms.len(), self.n_rows());
        for (r, atom) in self.colloc_points.iter().enumerate() {
            let target = atoms.iter().position(|a| a == atom).ok_or_else(|| {
                KrigingError::InvalidParameter {
                    name: "atoms",
                    reason: format!("operator atom {r} missing from the target atom list"),
                }
            })?;
            for j in 0..self.n_rows() {
                u[(target, j)] += self.u[(r, j)];
            }
        }
        Ok(OperatorSystem {
            colloc_points: atoms.to_vec(),
            u,
            rhs: self.rhs.clone(),
            mean: self.mean.clone(),
        })
    }

    /// Union of the system's atoms with `extra`, in canonical order, with the
    /// system embedded over it.
    pub fn with_atoms(&self, extra: &[ExtendedPoint]) -> Result<OperatorSystem> {
        let mut table: BTreeMap<AtomKey, ()> = BTreeMap::new();
        for a in self.colloc_points.iter().chain(extra) {
            table.insert(AtomKey(a.clone()), ());
        }
        let atoms: Vec<ExtendedPoint> = table.into_keys().map(|k| k.0).collect();
        self.embed(&atoms)
    }

    /// Stack the equations of two systems over the union of their atoms.
    pub fn concat(&self, other: &OperatorSystem) -> Result<OperatorSystem> {
        if self.is_empty() && self.colloc_points.is_empty() {
            return Ok(other.clone());
        }
        if other.is_empty() && other.colloc_points.is_empty() {
            return Ok(self.clone());
        }
        let merged = self.with_atoms(&other.colloc_points)?;
        let second = other.embed(&merged.colloc_points)?;
        let (c, p1, p2) = (merged.n_atoms(), self.n_rows(), other.n_rows());
        let mut u = DMatrix::zeros(c, p1 + p2);
        u.columns_mut(0, p1).copy_from(&merged.u);
        u.columns_mut(p1, p2).copy_from(&second.u);
        let rhs = DVector::from_iterator(p1 + p2, self.rhs.iter().chain(other.rhs.iter()).copied());
        let mean = match (&self.mean, &other.mean) {
            (Some(a), Some(b)) => Some(DVector::from_iterator(
                p1 + p2,
                a.iter().chain(b.iter()).copied(),
            )),
            _ => None,
        };
        Ok(OperatorSystem {
            colloc_points: merged.colloc_points,
            u,
            rhs,
            mean,
        })
    }

    /// Equation means under a constant field mean `c`: derivatives of a
    /// constant vanish, so only order-0 coefficients contribute.
    pub fn with_constant_mean(mut self, c: f64) -> Self {
        let mean = DVector::from_iterator(
            self.n_rows(),
            (0..self.n_rows()).map(|j| {
                self.colloc_points
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.m.is_zero())
                    .map(|(i, _)| c * self.u[(i, j)])
                    .sum::<f64>()
            }),
        );
        self.mean = Some(mean);
        self
    }
}

/// Encode pointwise equations; atoms are deduplicated and sorted
/// lexicographically by (location, multi-index).
pub fn encode_pointwise(rows: &[OperatorRow], rhs: &[f64]) -> Result<OperatorSystem> {
    if rows.is_empty() {
        return Err(KrigingError::InvalidParameter {
            name: "rows",
            reason: "at least one operator row is required".into(),
        });
    }
    if rows.len() != rhs.len() {
        return Err(KrigingError::DimensionMismatch {
            expected: rows.len(),
            found: rhs.len(),
        });
    }
    let mut table: BTreeMap<AtomKey, usize> = BTreeMap::new();
    for (r, row) in rows.iter().enumerate() {
        if row.terms.iter().all(|(c, _)| *c == 0.0) {
            return Err(KrigingError::EmptyOperatorRow { row: r });
        }
        for (_, m) in &row.terms {
            let atom = ExtendedPoint::new(row.location.clone(), m.clone())?;
            table.insert(AtomKey(atom), 0);
        }
    }
    for (i, slot) in table.values_mut().enumerate() {
        *slot = i;
    }
    let mut u = DMatrix::zeros(table.len(), rows.len());
    for (j, row) in rows.iter().enumerate() {
        for (coeff, m) in &row.terms {
            let key = AtomKey(ExtendedPoint::at(&row.location, m.clone()));
            u[(table[&key], j)] += coeff;
        }
    }
    let colloc_points = table.into_keys().map(|k| k.0).collect();
    Ok(OperatorSystem {
        colloc_points,
        u,
        rhs: DVector::from_column_slice(rhs),
        mean: None,
    })
}

/// One equation imposing `(1/q) Σ_i Σ_t coeff_t Z(x_i, m_t) = rhs`.
pub fn encode_average(locations: &[Vec<f64>], terms: &[(f64, MultiIndex)], rhs: f64) -> Result<OperatorSystem> {
    if locations.is_empty() {
        return Err(KrigingError::InvalidParameter {
            name: "locations",
            reason: "at least one location is required".into(),
        });
    }
    let q = locations.len() as f64;
    let rows: Vec<OperatorRow> = locations
        .iter()
        .map(|x| OperatorRow::new(x.clone(), terms.iter().map(|(c, m)| (c / q, m.clone())).collect()))
        .collect();
    let per_point = encode_pointwise(&rows, &vec![0.0; rows.len()])?;
    let summed = per_point.u.column_sum();
    OperatorSystem::from_parts(
        per_point.colloc_points,
        DMatrix::from_column_slice(summed.len(), 1, summed.as_slice()),
        DVector::from_element(1, rhs),
    )
}

/// Counts covariance (kernel-derivative) evaluations.
#[derive(Debug, Default)]
pub struct EvalCounter(AtomicU64);

impl EvalCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, AtomicOrdering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(AtomicOrdering::Relaxed)
    }
}

/// `Cov[Z(s), Z(s2)]`.
pub fn cov(k: &SqExpKernel, s: &ExtendedPoint, s2: &ExtendedPoint) -> Result<f64> {
    k.deriv(&s.x, &s2.x, &s.m, &s2.m)
}

fn check_atoms(k: &SqExpKernel, atoms: &[ExtendedPoint]) -> Result<u32> {
    let mut max_order = 0;
    for a in atoms {
        if a.dim() != k.dim() || a.m.dim() != k.dim() {
            return Err(KrigingError::DimensionMismatch {
                expected: k.dim(),
                found: a.dim(),
            });
        }
        max_order = max_order.max(a.m.total());
    }
    Ok(max_order)
}

fn check_budget(k: &SqExpKernel, a: &[ExtendedPoint], b: &[ExtendedPoint]) -> Result<()> {
    let (oa, ob) = (check_atoms(k, a)?, check_atoms(k, b)?);
    if !a.is_empty() && !b.is_empty() && oa + ob > MAX_TOTAL_ORDER {
        return Err(KrigingError::UnsupportedOrder {
            order: oa + ob,
            max: MAX_TOTAL_ORDER,
        });
    }
    Ok(())
}

/// `|a| × |b|` covariance matrix; adds `|a|·|b|` to `counter`.
pub fn gram(k: &SqExpKernel, a: &[ExtendedPoint], b: &[ExtendedPoint], counter: &EvalCounter) -> Result<DMatrix<f64>> {
    check_budget(k, a, b)?;
    let rows = a.len();
    let mut g = DMatrix::zeros(rows, b.len());
    if rows > 0 {
        g.as_mut_slice()
            .par_chunks_mut(rows)
            .zip(b.par_iter())
            .for_each(|(col, sb)| {
                for (dst, sa) in col.iter_mut().zip(a) {
                    *dst = k.deriv_unchecked(&sa.x, &sb.x, &sa.m, &sb.m);
                }
            });
    }
    counter.add((rows * b.len()) as u64);
    Ok(g)
}

/// Symmetric covariance matrix of `a` with itself; only the lower triangle
/// is evaluated, adding `n(n+1)/2` to `counter`.
pub fn gram_symmetric(k: &SqExpKernel, a: &[ExtendedPoint], counter: &EvalCounter) -> Result<DMatrix<f64>> {
    check_budget(k, a, a)?;
    let n = a.len();
    let mut g = DMatrix::zeros(n, n);
    if n > 0 {
        g.as_mut_slice()
            .par_chunks_mut(n)
            .enumerate()
            .for_each(|(j, col)| {
                let sb = &a[j];
                for i in j..n {
                    let sa = &a[i];
                    col[i] = k.deriv_unchecked(&sa.x, &sb.x, &sa.m, &sb.m);
                }
            });
        for j in 0..n {
            for i in (j + 1)..n {
                g[(j, i)] = g[(i, j)];
            }
        }
    }
    counter.add((n * (n + 1) / 2) as u64);
    Ok(g)
}

/// Covariance blocks of the co-Kriging system: primary observations (1),
/// collocation atoms (2) and prediction atoms (*).
#[derive(Debug, Clone)]
pub struct CovBlocks {
    pub k11: DMatrix<f64>,
    pub k12: DMatrix<f64>,
    pub k22: DMatrix<f64>,
    /// Primary observations × prediction atoms.
    pub h: DMatrix<f64>,
    /// Collocation atoms × prediction atoms.
    pub h2: DMatrix<f64>,
    pub kstar: Option<DMatrix<f64>>,
}

impl CovBlocks {
    pub fn assemble(
        k: &SqExpKernel,
        obs: &[ExtendedPoint],
        colloc: &[ExtendedPoint],
        pred: &[ExtendedPoint],
        with_kstar: bool,
        counter: &EvalCounter,
    ) -> Result<Self> {
        let k11 = gram_symmetric(k, obs, counter)?;
        let k12 = gram(k, obs, colloc, counter)?;
        let k22 = gram_symmetric(k, colloc, counter)?;
        let h = gram(k, obs, pred, counter)?;
        let h2 = gram(k, colloc, pred, counter)?;
        let kstar = if with_kstar {
            Some(gram_symmetric(k, pred, &EvalCounter::new())?)
        } else {
            None
        };
        Ok(CovBlocks {
            k11,
            k12,
            k22,
            h,
            h2,
            kstar,
        })
    }
}
