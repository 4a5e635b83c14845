//! Isotropic squared-exponential covariance and its mixed derivatives.
//!
//! Derivatives are closed forms in `h_i = (x_i - x'_i) / θ²` up to total
//! order four. Differentiating in the second argument only flips signs, so
//! every case reduces to
//!
//! ```text
//! ∂^m_x ∂^m2_x' k(x, x') = (-1)^|m| · B(h; indices of m ∪ m2) · k(x, x')
//! ```
//!
//! where `B` is the order-specific bracket (Hermite-like polynomial in `h`).

use std::cmp::Ordering;
use std::fmt;

use crate::error::{KrigingError, Result};

/// Highest total derivative order `|m| + |m2|` with an analytic formula.
pub const MAX_TOTAL_ORDER: u32 = 4;

/// Per-coordinate derivative orders.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(orders: Vec<u32>) -> Self {
        MultiIndex(orders)
    }

    /// The zero multi-index (no derivative) in `dim` coordinates.
    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Order one in coordinate `axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut m = vec![0; dim];
        m[axis] = 1;
        MultiIndex(m)
    }

    /// Order `order` in coordinate `axis`.
    pub fn axis(dim: usize, axis: usize, order: u32) -> Self {
        let mut m = vec![0; dim];
        m[axis] = order;
        MultiIndex(m)
    }

    pub fn orders(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&o| o == 0)
    }

    /// Copy with one more unit of derivative along `axis`.
    pub fn bumped(&self, axis: usize) -> Self {
        let mut m = self.0.clone();
        m[axis] += 1;
        MultiIndex(m)
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|o| o.to_string()).collect();
        write!(f, "({})", parts.join(";"))
    }
}

/// `k(x, x') = σ² exp(-‖x - x'‖² / (2θ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqExpKernel {
    sigma2: f64,
    theta: f64,
    dim: usize,
}

// Index tables for the fourth-order bracket: the six ways of choosing the
// pair carried by `h h` (the complement carries the delta), and the three
// perfect matchings of four indices.
const PAIRS_4: [[usize; 4]; 6] = [
    [0, 1, 2, 3],
    [0, 2, 1, 3],
    [0, 3, 1, 2],
    [1, 2, 0, 3],
    [1, 3, 0, 2],
    [2, 3, 0, 1],
];
const MATCHINGS_4: [[usize; 4]; 3] = [[0, 1, 2, 3], [0, 2, 1, 3], [0, 3, 1, 2]];
// Third order: the index carried by `h`, then the delta pair.
const SINGLES_3: [[usize; 3]; 3] = [[0, 1, 2], [1, 0, 2], [2, 0, 1]];

impl SqExpKernel {
    pub fn new(sigma2: f64, theta: f64, dim: usize) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "sigma2",
                reason: format!("must be positive and finite, got {sigma2}"),
            });
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(KrigingError::InvalidParameter {
                name: "theta",
                reason: format!("must be positive and finite, got {theta}"),
            });
        }
        if dim == 0 {
            return Err(KrigingError::InvalidParameter {
                name: "dim",
                reason: "must be at least 1".into(),
            });
        }
        Ok(SqExpKernel { sigma2, theta, dim })
    }

    /// Unit-variance kernel, the form used by the calibration criteria.
    pub fn unit(theta: f64, dim: usize) -> Result<Self> {
        Self::new(1.0, theta, dim)
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn with_sigma2(&self, sigma2: f64) -> Result<Self> {
        Self::new(sigma2, self.theta, self.dim)
    }

    pub fn with_theta(&self, theta: f64) -> Result<Self> {
        Self::new(self.sigma2, theta, self.dim)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(KrigingError::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        Ok(())
    }

    fn check_index(&self, m: &MultiIndex) -> Result<()> {
        if m.dim() != self.dim {
            return Err(KrigingError::DimensionMismatch {
                expected: self.dim,
                found: m.dim(),
            });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x2)?;
        Ok(self.eval_unchecked(x, x2))
    }

    fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(x2).map(|(a, b)| (a - b) * (a - b)).sum();
        self.sigma2 * (-r2 / (2.0 * self.theta * self.theta)).exp()
    }

    /// `∂^{|m|}_x ∂^{|m2|}_{x'} k(x, x')`, for `|m| + |m2| ≤ 4`.
    pub fn deriv(&self, x: &[f64], x2: &[f64], m: &MultiIndex, m2: &MultiIndex) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x2)?;
        self.check_index(m)?;
        self.check_index(m2)?;
        let order = m.total() + m2.total();
        if order > MAX_TOTAL_ORDER {
            return Err(KrigingError::UnsupportedOrder {
                order,
                max: MAX_TOTAL_ORDER,
            });
        }
        Ok(self.deriv_unchecked(x, x2, m, m2))
    }

    pub(crate) fn deriv_unchecked(
        &self,
        x: &[f64],
        x2: &[f64],
        m: &MultiIndex,
        m2: &MultiIndex,
    ) -> f64 {
        let mut idx = [0usize; 4];
        let mut len = 0;
        for mi in [m, m2] {
            for (axis, &o) in mi.orders().iter().enumerate() {
                for _ in 0..o {
                    idx[len] = axis;
                    len += 1;
                }
            }
        }
        let k = self.eval_unchecked(x, x2);
        if len == 0 {
            return k;
        }
        let inv_t2 = 1.0 / (self.theta * self.theta);
        let h = |a: usize| (x[idx[a]] - x2[idx[a]]) * inv_t2;
        let d = |a: usize, b: usize| if idx[a] == idx[b] { 1.0 } else { 0.0 };
        let bracket = match len {
            1 => h(0),
            2 => h(0) * h(1) - inv_t2 * d(0, 1),
            3 => {
                let single: f64 = SINGLES_3.iter().map(|t| h(t[0]) * d(t[1], t[2])).sum();
                h(0) * h(1) * h(2) - inv_t2 * single
            }
            _ => {
                let pairs: f64 = PAIRS_4
                    .iter()
                    .map(|t| h(t[0]) * h(t[1]) * d(t[2], t[3]))
                    .sum();
                let matchings: f64 = MATCHINGS_4
                    .iter()
                    .map(|t| d(t[0], t[1]) * d(t[2], t[3]))
                    .sum();
                h(0) * h(1) * h(2) * h(3) - inv_t2 * pairs + inv_t2 * inv_t2 * matchings
            }
        };
        let sign = if m.total() % 2 == 1 { -1.0 } else { 1.0 };
        sign * bracket * k
    }

    /// Nested central finite-difference approximation of [`Self::deriv`],
    /// one stencil per unit of derivative order.
    pub fn deriv_fd(
        &self,
        x: &[f64],
        x2: &[f64],
        m: &MultiIndex,
        m2: &MultiIndex,
        step: f64,
    ) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x2)?;
        self.check_index(m)?;
        self.check_index(m2)?;
        if !(step > 0.0) {
            return Err(KrigingError::InvalidParameter {
                name: "step",
                reason: format!("must be positive, got {step}"),
            });
        }
        let mut units = Vec::new();
        for (axis, &o) in m.orders().iter().enumerate() {
            units.extend(std::iter::repeat_n((false, axis), o as usize));
        }
        for (axis, &o) in m2.orders().iter().enumerate() {
            units.extend(std::iter::repeat_n((true, axis), o as usize));
        }
        let mut a = x.to_vec();
        let mut b = x2.to_vec();
        Ok(self.nested_stencil(&mut a, &mut b, &units, step))
    }

    /// Finite-difference derivative with the default step `1e-3 · θ`.
    pub fn deriv_fd_default(
        &self,
        x: &[f64],
        x2: &[f64],
        m: &MultiIndex,
        m2: &MultiIndex,
    ) -> Result<f64> {
        self.deriv_fd(x, x2, m, m2, 1e-3 * self.theta)
    }

    fn nested_stencil(
        &self,
        a: &mut [f64],
        b: &mut [f64],
        units: &[(bool, usize)],
        step: f64,
    ) -> f64 {
        let Some((&(second, axis), rest)) = units.split_first() else {
            return self.eval_unchecked(a, b);
        };
        let target = if second { &mut *b } else { &mut *a };
        let orig = target[axis];
        target[axis] = orig + step;
        let plus = self.nested_stencil(a, b, rest, step);
        let target = if second { &mut *b } else { &mut *a };
        target[axis] = orig - step;
        let minus = self.nested_stencil(a, b, rest, step);
        let target = if second { &mut *b } else { &mut *a };
        target[axis] = orig;
        (plus - minus) / (2.0 * step)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn k1() -> SqExpKernel {
        SqExpKernel::new(1.0, 1.0, 1).unwrap()
    }

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn eval_examples() {
        assert_eq!(k1().eval(&[0.0], &[0.0]).unwrap(), 1.0);
        assert_relative_eq!(k1().eval(&[0.0], &[1.0]).unwrap(), (-0.5f64).exp(), epsilon = 1e-15);
        let k = SqExpKernel::new(2.0, 3.0, 2).unwrap();
        assert_relative_eq!(
            k.eval(&[0.0, 0.0], &[3.0, 0.0]).unwrap(),
            2.0 * (-0.5f64).exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn eval_rejects_dimension_mismatch() {
        let err = k1().eval(&[0.0, 1.0], &[0.0]).unwrap_err();
        assert_eq!(err, KrigingError::DimensionMismatch { expected: 1, found: 2 });
    }

    #[test]
    fn invalid_parameters() {
        assert!(SqExpKernel::new(0.0, 1.0, 1).is_err());
        assert!(SqExpKernel::new(1.0, -1.0, 1).is_err());
        assert!(SqExpKernel::new(1.0, 1.0, 0).is_err());
        assert!(SqExpKernel::new(f64::NAN, 1.0, 1).is_err());
    }

    #[test]
    fn deriv_examples_at_coincident_points() {
        let k = k1();
        assert_eq!(k.deriv(&[0.4], &[0.4], &mi(&[1]), &mi(&[0])).unwrap(), 0.0);
        assert_relative_eq!(k.deriv(&[0.4], &[0.4], &mi(&[1]), &mi(&[1])).unwrap(), 1.0);
        assert_relative_eq!(k.deriv(&[0.4], &[0.4], &mi(&[2]), &mi(&[2])).unwrap(), 3.0);
        // second derivative of the profile at the origin is -1/θ²
        let k = SqExpKernel::new(1.0, 2.0, 1).unwrap();
        assert_relative_eq!(k.deriv(&[0.0], &[0.0], &mi(&[2]), &mi(&[0])).unwrap(), -0.25);
    }

    #[test]
    fn order_zero_delegates_to_eval() {
        let k = SqExpKernel::new(1.7, 0.8, 2).unwrap();
        let (a, b) = ([0.1, -0.4], [0.9, 0.3]);
        assert_eq!(
            k.deriv(&a, &b, &MultiIndex::zero(2), &MultiIndex::zero(2)).unwrap(),
            k.eval(&a, &b).unwrap()
        );
    }

    #[test]
    fn order_above_four_is_an_error() {
        let err = k1().deriv(&[0.0], &[1.0], &mi(&[3]), &mi(&[2])).unwrap_err();
        assert_eq!(err, KrigingError::UnsupportedOrder { order: 5, max: 4 });
    }

    #[test]
    fn first_order_matches_closed_form() {
        // ∂_x k = -(x - x')/θ² k, ∂_{x'} k = +(x - x')/θ² k
        let k = SqExpKernel::new(1.3, 0.7, 1).unwrap();
        let (x, y) = (0.5, -0.2);
        let base = k.eval(&[x], &[y]).unwrap();
        let h = (x - y) / 0.49;
        assert_relative_eq!(k.deriv(&[x], &[y], &mi(&[1]), &mi(&[0])).unwrap(), -h * base, epsilon = 1e-14);
        assert_relative_eq!(k.deriv(&[x], &[y], &mi(&[0]), &mi(&[1])).unwrap(), h * base, epsilon = 1e-14);
    }

    #[test]
    fn fd_zero_order_is_identity() {
        let k = SqExpKernel::new(1.0, 1.2, 2).unwrap();
        let (a, b) = ([0.3, 0.1], [-0.5, 0.7]);
        let z = MultiIndex::zero(2);
        assert_eq!(k.deriv_fd(&a, &b, &z, &z, 0.37).unwrap(), k.eval(&a, &b).unwrap());
    }

    #[test]
    fn fd_examples() {
        let k = k1();
        let v = k.deriv_fd(&[0.0], &[0.0], &mi(&[1]), &mi(&[1]), 1e-4).unwrap();
        assert!((v - 1.0).abs() <= 1e-6, "{v}");

        let fd = k.deriv_fd(&[0.3], &[0.0], &mi(&[2]), &mi(&[1]), 1e-3).unwrap();
        let pure_third = k.deriv(&[0.3], &[0.0], &mi(&[3]), &mi(&[0])).unwrap();
        let mixed = k.deriv(&[0.3], &[0.0], &mi(&[2]), &mi(&[1])).unwrap();
        assert!(((fd + pure_third) / pure_third).abs() <= 1e-4);
        assert!(((fd - mixed) / mixed).abs() <= 1e-4);
    }

    #[test]
    fn fd_rejects_nonpositive_step() {
        assert!(k1().deriv_fd(&[0.0], &[0.0], &mi(&[1]), &mi(&[0]), 0.0).is_err());
    }

    #[test]
    fn multi_index_ordering_is_lexicographic() {
        let mut v = vec![mi(&[0, 2]), mi(&[1, 0]), mi(&[0, 0]), mi(&[0, 1])];
        v.sort();
        assert_eq!(v, vec![mi(&[0, 0]), mi(&[0, 1]), mi(&[0, 2]), mi(&[1, 0])]);
        assert_eq!(mi(&[2, 1]).total(), 3);
        assert_eq!(MultiIndex::unit(3, 1), mi(&[0, 1, 0]));
        assert_eq!(mi(&[0, 1]).bumped(0), mi(&[1, 1]));
    }
}
