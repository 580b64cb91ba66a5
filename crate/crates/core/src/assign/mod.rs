//! Soft and hard assignment between two detection sets.
//!
//! [`sinkhorn`] solves the entropy-regularized transport problem on a
//! dustbin-augmented cost matrix and [`sinkhorn_grad`] differentiates through
//! its unrolled iterations. [`hungarian`] is the exact combinatorial solver
//! used for pseudo-labels and as a hard-assignment reference, and [`decode`]
//! turns a soft plan into unique matches.

mod hungarian;
mod sinkhorn;

use nalgebra::DMatrix;

pub use hungarian::hungarian;
pub use sinkhorn::{
    sinkhorn, sinkhorn_backward, sinkhorn_fixed, sinkhorn_grad, sinkhorn_grad_with, SinkhornGradient, SinkhornParams,
    DEFAULT_EPSILON, DEFAULT_MAX_ITERS, DEFAULT_TOL,
};

use crate::costs::CostMatrix;
use crate::error::{Error, Result};

/// Row and column masses of a transport problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Marginals {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Marginals {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.iter().chain(&b).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(
                "marginals must be finite and nonnegative".into(),
            ));
        }
        let m = Self { a, b };
        m.check_mass()?;
        Ok(m)
    }

    pub(crate) fn check_mass(&self) -> Result<()> {
        let row_mass: f64 = self.a.iter().sum();
        let col_mass: f64 = self.b.iter().sum();
        if (row_mass - col_mass).abs() > 1e-9 {
            return Err(Error::InfeasibleMarginals { row_mass, col_mass });
        }
        Ok(())
    }
}

/// Unit mass per detection; each dustbin holds the other side's count so both
/// sides carry `n1 + n2`.
pub fn default_marginals(n1: usize, n2: usize) -> Marginals {
    let mut a = vec![1.0; n1];
    a.push(n2 as f64);
    let mut b = vec![1.0; n2];
    b.push(n1 as f64);
    Marginals { a, b }
}

/// Soft assignment produced by Sinkhorn.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: DMatrix<f64>,
    pub epsilon: f64,
    pub iterations_used: usize,
    /// Iteration budget the plan was computed with.
    pub max_iters: usize,
    /// Largest absolute deviation of a row or column sum from its marginal.
    pub marginal_violation: f64,
    /// Whether the last row and column are dustbins.
    pub augmented: bool,
}

impl TransportPlan {
    pub fn real_rows(&self) -> usize {
        self.entries.nrows() - usize::from(self.augmented)
    }

    pub fn real_cols(&self) -> usize {
        self.entries.ncols() - usize::from(self.augmented)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }
}

/// Unique matches plus the indices left over on either side.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HardAssignment {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl HardAssignment {
    /// Builds the assignment from a partial matching over `rows x cols`.
    /// Matches are sorted by row.
    pub fn from_matches(mut matches: Vec<(usize, usize)>, rows: usize, cols: usize) -> Self {
        matches.sort_unstable();
        let mut row_used = vec![false; rows];
        let mut col_used = vec![false; cols];
        for &(i, j) in &matches {
            debug_assert!(!row_used[i] && !col_used[j], "matching is not injective");
            row_used[i] = true;
            col_used[j] = true;
        }
        let unmatched = |used: Vec<bool>| {
            used.iter()
                .enumerate()
                .filter_map(|(k, u)| (!u).then_some(k))
                .collect()
        };
        Self {
            matches,
            unmatched_rows: unmatched(row_used),
            unmatched_cols: unmatched(col_used),
        }
    }

    /// Sum of the matched entries, accumulated in row order.
    pub fn total_cost(&self, c: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(i, j)| c.get(i, j)).sum()
    }

    pub fn partner_of_row(&self, i: usize) -> Option<usize> {
        self.matches.iter().find(|m| m.0 == i).map(|m| m.1)
    }
}

/// Hard assignment from a transport plan.
///
/// On an augmented plan a real cell survives only when it is more likely than
/// sending both of its detections to the dustbin:
/// `P[i][j] * P[d][d] > P[i][d] * P[d][j]`. For any iterate of the scaling
/// solver this odds ratio equals `exp((gamma - c_ij) / eps)`, so the gate is
/// the dustbin threshold itself and does not drift with `eps` or with the
/// number of detections. The surviving mass is maximized with the Hungarian
/// solver; rows and columns left without a surviving cell are unmatched.
pub fn decode(p: &TransportPlan) -> HardAssignment {
    let (n1, n2) = (p.real_rows(), p.real_cols());
    let mut mass = p.entries.view((0, 0), (n1, n2)).into_owned();
    if p.augmented {
        let corner = p.get(n1, n2).ln();
        for i in 0..n1 {
            for j in 0..n2 {
                let pair = mass[(i, j)].ln() + corner;
                let dustbin = p.get(i, n2).ln() + p.get(n1, j).ln();
                if !(pair > dustbin) {
                    mass[(i, j)] = 0.0;
                }
            }
        }
    }
    let neg = CostMatrix::new(-&mass).expect("plan entries are finite");
    let kept = hungarian(&neg)
        .matches
        .into_iter()
        .filter(|&(i, j)| mass[(i, j)] > 0.0)
        .collect();
    HardAssignment::from_matches(kept, n1, n2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(rows: usize, cols: usize, v: &[f64]) -> TransportPlan {
        TransportPlan {
            entries: DMatrix::from_row_slice(rows, cols, v),
            epsilon: 0.1,
            iterations_used: 1,
            max_iters: 1,
            marginal_violation: 0.0,
            augmented: true,
        }
    }

    #[test]
    fn default_marginals_examples() {
        let m = default_marginals(2, 3);
        assert_eq!(m.a, vec![1.0, 1.0, 3.0]);
        assert_eq!(m.b, vec![1.0, 1.0, 1.0, 2.0]);
        let m = default_marginals(0, 2);
        assert_eq!(m.a, vec![2.0]);
        assert_eq!(m.b, vec![1.0, 1.0, 0.0]);
        for n1 in 0..6 {
            for n2 in 0..6 {
                let m = default_marginals(n1, n2);
                let sa: f64 = m.a.iter().sum();
                let sb: f64 = m.b.iter().sum();
                assert_eq!(sa, (n1 + n2) as f64);
                assert_eq!(sb, sa);
            }
        }
    }

    #[test]
    fn marginals_reject_mass_mismatch() {
        assert!(matches!(
            Marginals::new(vec![1.0, 1.0], vec![1.0]),
            Err(Error::InfeasibleMarginals { .. })
        ));
        assert!(Marginals::new(vec![-1.0, 2.0], vec![1.0]).is_err());
    }

    #[test]
    fn decode_near_permutation() {
        // 2x2 real block, dustbin mass small
        let p = plan(
            3,
            3,
            &[
                0.01, 0.98, 0.01, //
                0.97, 0.02, 0.01, //
                0.02, 0.00, 1.98,
            ],
        );
        let h = decode(&p);
        assert_eq!(h.matches, vec![(0, 1), (1, 0)]);
        assert!(h.unmatched_rows.is_empty());
    }

    #[test]
    fn decode_dustbin_dominated_row() {
        let p = plan(
            3,
            3,
            &[
                0.95, 0.02, 0.03, //
                0.05, 0.30, 0.65, //
                0.00, 0.68, 1.32,
            ],
        );
        let h = decode(&p);
        assert_eq!(h.matches, vec![(0, 0)]);
        assert_eq!(h.unmatched_rows, vec![1]);
        assert_eq!(h.unmatched_cols, vec![1]);
    }

    #[test]
    fn decode_empty_sides() {
        let p = plan(1, 3, &[0.0, 0.0, 0.0]);
        let h = decode(&p);
        assert!(h.matches.is_empty());
        assert_eq!(h.unmatched_cols, vec![0, 1]);
    }
}
