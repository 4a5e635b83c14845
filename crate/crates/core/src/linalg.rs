use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{KrigingError, Result};

/// Cholesky factor of `K + nugget·I`.
pub(crate) struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    pub nugget: f64,
}

impl SpdFactor {
    /// Factor with `nugget`, escalating through the larger entries of
    /// `escalation` on failure.
    pub fn new(k: &DMatrix<f64>, nugget: f64, escalation: &[f64]) -> Result<Self> {
        let mut last = nugget;
        let tries = std::iter::once(nugget).chain(escalation.iter().copied().filter(|&e| e > nugget));
        for eps in tries {
            last = eps;
            let mut m = k.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += eps;
            }
            if let Some(chol) = Cholesky::new(m) {
                if eps != nugget {
                    log::warn!("covariance factorization needed nugget {eps:e}");
                }
                return Ok(SpdFactor { chol, nugget: eps });
            }
        }
        Err(KrigingError::Conditioning { last_nugget: last })
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }
}

/// Solver for `(UᵀU) x = b`. Columns of `U` that share no atom are
/// independent, so `UᵀU` is block diagonal over connected components.
pub(crate) struct GramProjector {
    blocks: Vec<(Vec<usize>, Cholesky<f64, Dyn>)>,
    p: usize,
}

fn components(terms: &[Vec<(usize, f64)>], n_atoms: usize) -> Vec<Vec<usize>> {
    let p = terms.len();
    let mut parent: Vec<usize> = (0..p).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut owner: Vec<Option<usize>> = vec![None; n_atoms];
    for (j, col) in terms.iter().enumerate() {
        for &(a, _) in col {
            match owner[a] {
                None => owner[a] = Some(j),
                Some(o) => {
                    let (ra, rb) = (find(&mut parent, o), find(&mut parent, j));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: Vec<Option<usize>> = vec![None; p];
    for j in 0..p {
        let r = find(&mut parent, j);
        let g = *slot[r].get_or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(j);
    }
    groups
}

impl GramProjector {
    pub fn new(terms: &[Vec<(usize, f64)>], n_atoms: usize) -> Result<Self> {
        let p = terms.len();
        let norm = terms
            .iter()
            .flat_map(|c| c.iter().map(|&(_, v)| v * v))
            .sum::<f64>()
            .sqrt();
        let tol = 1e-10 * norm.max(f64::MIN_POSITIVE);
        let mut dependent = Vec::new();
        let mut blocks = Vec::new();
        for cols in components(terms, n_atoms) {
            let mut atoms: Vec<usize> = cols.iter().flat_map(|&j| terms[j].iter().map(|t| t.0)).collect();
            atoms.sort_unstable();
            atoms.dedup();
            let dense = DMatrix::from_fn(atoms.len(), cols.len(), |r, c| {
                terms[cols[c]]
                    .iter()
                    .filter(|t| t.0 == atoms[r])
                    .map(|t| t.1)
                    .sum()
            });
            // modified Gram-Schmidt rank check
            let mut q: Vec<DVector<f64>> = Vec::new();
            for c in 0..cols.len() {
                let mut w = dense.column(c).into_owned();
                for b in &q {
                    let d = b.dot(&w);
                    w.axpy(-d, b, 1.0);
                }
                let wn = w.norm();
                if wn <= tol {
                    dependent.push(cols[c]);
                } else {
                    q.push(w / wn);
                }
            }
            if dependent.is_empty() {
                let g = dense.transpose() * &dense;
                let chol = Cholesky::new(g).ok_or_else(|| KrigingError::RankDeficient {
                    rank: p.saturating_sub(1),
                    cols: p,
                    dependent: cols.clone(),
                })?;
                blocks.push((cols, chol));
            }
        }
        if !dependent.is_empty() {
            dependent.sort_unstable();
            return Err(KrigingError::RankDeficient {
                rank: p - dependent.len(),
                cols: p,
                dependent,
            });
        }
        Ok(GramProjector { blocks, p })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        assert_eq!(b.len(), self.p);
        let mut out = DVector::zeros(self.p);
        for (cols, chol) in &self.blocks {
            let rhs = DVector::from_iterator(cols.len(), cols.iter().map(|&j| b[j]));
            let x = chol.solve(&rhs);
            for (k, &j) in cols.iter().enumerate() {
                out[j] = x[k];
            }
        }
        out
    }
}

/// Metric `M` of the constrained update `s + M U (UᵀMU)⁻¹ (v − Uᵀs)`.
pub(crate) enum Metric<'a> {
    Identity,
    Dense(&'a DMatrix<f64>),
}

/// `s + M U (UᵀMU)⁻¹ (v − Uᵀs)` where `U` is given by its column terms.
pub(crate) fn constrained_update(
    metric: Metric<'_>,
    terms: &[Vec<(usize, f64)>],
    rhs: &DVector<f64>,
    s: &DVector<f64>,
) -> Result<DVector<f64>> {
    let l = s.len();
    let p = terms.len();
    let ut = |z: &DVector<f64>| -> DVector<f64> {
        DVector::from_iterator(p, terms.iter().map(|c| c.iter().map(|&(i, v)| v * z[i]).sum::<f64>()))
    };
    let u_mul = |y: &DVector<f64>| -> DVector<f64> {
        let mut out = DVector::zeros(l);
        for (j, c) in terms.iter().enumerate() {
            for &(i, v) in c {
                out[i] += v * y[j];
            }
        }
        out
    };
    let resid = rhs - ut(s);
    match metric {
        Metric::Identity => {
            let y = GramProjector::new(terms, l)?.solve(&resid);
            Ok(s + u_mul(&y))
        }
        Metric::Dense(m) => {
            let mut mu = DMatrix::zeros(l, p);
            for (j, c) in terms.iter().enumerate() {
                let mut dst = mu.column_mut(j);
                for &(i, v) in c {
                    dst.axpy(v, &m.column(i), 1.0);
                }
            }
            let mut g = DMatrix::zeros(p, p);
            for (j, c) in terms.iter().enumerate() {
                for &(i, v) in c {
                    for r in 0..p {
                        g[(j, r)] += v * mu[(i, r)];
                    }
                }
            }
            let g = (&g + g.transpose()) * 0.5;
            let y = match Cholesky::new(g.clone()) {
                Some(ch) => ch.solve(&resid),
                None => g.lu().solve(&resid).ok_or_else(|| {
                    KrigingError::Degenerate("UᵀK₂|₁U is singular".into())
                })?,
            };
            Ok(s + mu * y)
        }
    }
}
