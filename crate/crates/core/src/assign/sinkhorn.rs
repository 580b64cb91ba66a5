//! Log-domain Sinkhorn iterations and their reverse-mode derivative.
//!
//! With `K = -C / eps` and log-scalings `u`, `v` (both starting at zero), one
//! iteration is
//!
//! ```text
//! u_i = log a_i - logsumexp_j(K_ij + v_j)
//! v_j = log b_j - logsumexp_i(K_ij + u_i)
//! ```
//!
//! and the plan is `P_ij = exp(K_ij + u_i + v_j)`. Zero-mass rows/columns get
//! `-inf` scalings and carry no plan mass.

use nalgebra::DMatrix;

use crate::costs::CostMatrix;
use crate::error::{Error, Result};

use super::{Marginals, TransportPlan};

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_MAX_ITERS: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_RELAXATION: f64 = 1.5;

/// Growth of the violation over its best value so far that makes
/// over-relaxation fall back to plain updates.
const RELAXATION_GUARD: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: f64,
    pub max_iters: usize,
    /// Stop once the largest marginal violation drops to this value.
    pub tol: f64,
    /// Over-relaxation factor `w` in `(0, 2)` for the early-stopping solver:
    /// each scaling moves to `(1 - w) * old + w * update`. `1` is plain
    /// Sinkhorn. The fixed point does not depend on `w`.
    pub relaxation: f64,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            relaxation: DEFAULT_RELAXATION,
        }
    }
}

/// Gradient of `<upstream, P>` with respect to the cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornGradient {
    pub d_cost: DMatrix<f64>,
    /// Sum of `d_cost` over the dustbin row and column (zero when the cost is
    /// not augmented).
    pub d_gamma: f64,
}

struct Problem {
    rows: usize,
    cols: usize,
    /// `-C / eps`, row-major.
    kernel: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
}

impl Problem {
    fn new(c: &CostMatrix, m: &Marginals, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be positive")));
        }
        let (rows, cols) = c.entries().shape();
        if m.a.len() != rows || m.b.len() != cols {
            return Err(Error::DimensionMismatch(format!(
                "cost is {rows}x{cols}, marginals are {}+{}",
                m.a.len(),
                m.b.len()
            )));
        }
        m.check_mass()?;
        let mut kernel = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let v = c.get(i, j);
                if !v.is_finite() {
                    return Err(Error::NonFiniteCost { row: i, col: j });
                }
                kernel.push(-v / epsilon);
            }
        }
        Ok(Self {
            rows,
            cols,
            kernel,
            log_a: m.a.iter().map(|x| x.ln()).collect(),
            log_b: m.b.iter().map(|x| x.ln()).collect(),
        })
    }

    fn k(&self, i: usize, j: usize) -> f64 {
        self.kernel[i * self.cols + j]
    }

    fn update_u(&self, v: &[f64], u: &mut [f64], w: f64) {
        for (i, ui) in u.iter_mut().enumerate() {
            *ui = if self.log_a[i] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                relax(*ui, self.log_a[i] - logsumexp((0..self.cols).map(|j| self.k(i, j) + v[j])), w)
            };
        }
    }

    fn update_v(&self, u: &[f64], v: &mut [f64], w: f64) {
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = if self.log_b[j] == f64::NEG_INFINITY {
                f64::NEG_INFINITY
            } else {
                relax(*vj, self.log_b[j] - logsumexp((0..self.rows).map(|i| self.k(i, j) + u[i])), w)
            };
        }
    }

    fn plan(&self, u: &[f64], v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| (self.k(i, j) + u[i] + v[j]).exp())
    }
}

fn relax(old: f64, new: f64, w: f64) -> f64 {
    if w == 1.0 {
        new
    } else {
        (1.0 - w) * old + w * new
    }
}

fn logsumexp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn marginal_violation(p: &DMatrix<f64>, m: &Marginals) -> f64 {
    let rows = p
        .row_iter()
        .zip(&m.a)
        .map(|(r, a)| (r.sum() - a).abs());
    let cols = p
        .column_iter()
        .zip(&m.b)
        .map(|(c, b)| (c.sum() - b).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

fn row_violation(problem: &Problem, u: &[f64], v: &[f64], m: &Marginals) -> f64 {
    (0..problem.rows)
        .map(|i| {
            let s: f64 = (0..problem.cols)
                .map(|j| (problem.k(i, j) + u[i] + v[j]).exp())
                .sum();
            (s - m.a[i]).abs()
        })
        .fold(0.0, f64::max)
}

fn run(c: &CostMatrix, m: &Marginals, params: &SinkhornParams, early_stop: bool) -> Result<TransportPlan> {
    let problem = Problem::new(c, m, params.epsilon)?;
    let mut w = if early_stop { params.relaxation } else { 1.0 };
    if !(w > 0.0 && w < 2.0) {
        return Err(Error::InvalidArgument(format!("relaxation {w} outside (0, 2)")));
    }
    let mut u = vec![0.0; problem.rows];
    let mut v = vec![0.0; problem.cols];
    let mut best = f64::INFINITY;
    let mut used = 0;
    for _ in 0..params.max_iters {
        problem.update_u(&v, &mut u, w);
        problem.update_v(&u, &mut v, w);
        used += 1;
        if !early_stop {
            continue;
        }
        let violation = if w == 1.0 {
            // column sums are exact right after a plain v update
            row_violation(&problem, &u, &v, m)
        } else {
            marginal_violation(&problem.plan(&u, &v), m)
        };
        if violation <= params.tol {
            break;
        }
        if w != 1.0 && !(violation <= RELAXATION_GUARD * best) {
            w = 1.0;
            if !violation.is_finite() {
                u.fill(0.0);
                v.fill(0.0);
            }
        }
        best = best.min(violation);
    }
    let entries = problem.plan(&u, &v);
    let marginal_violation = marginal_violation(&entries, m);
    Ok(TransportPlan {
        entries,
        epsilon: params.epsilon,
        iterations_used: used,
        max_iters: params.max_iters,
        marginal_violation,
        augmented: c.is_augmented(),
    })
}

/// Entropic OT plan; stops early once the marginal violation reaches `tol`.
pub fn sinkhorn(c: &CostMatrix, m: &Marginals, params: &SinkhornParams) -> Result<TransportPlan> {
    run(c, m, params, true)
}

/// Entropic OT plan after exactly `iters` iterations. This is the forward pass
/// that [`sinkhorn_grad`] differentiates.
pub fn sinkhorn_fixed(c: &CostMatrix, m: &Marginals, epsilon: f64, iters: usize) -> Result<TransportPlan> {
    let params = SinkhornParams {
        epsilon,
        max_iters: iters,
        tol: 0.0,
        relaxation: 1.0,
    };
    run(c, m, &params, false)
}

/// Gradient of `<upstream, P>` through `iters` unrolled iterations, together
/// with the forward plan.
pub fn sinkhorn_grad(
    c: &CostMatrix,
    m: &Marginals,
    epsilon: f64,
    iters: usize,
    upstream: &DMatrix<f64>,
) -> Result<(TransportPlan, SinkhornGradient)> {
    sinkhorn_grad_with(c, m, epsilon, iters, |_| Ok(upstream.clone()))
}

/// Like [`sinkhorn_grad`], but the upstream gradient is computed from the
/// forward plan, so losses of `P` need a single forward pass.
pub fn sinkhorn_grad_with<F>(
    c: &CostMatrix,
    m: &Marginals,
    epsilon: f64,
    iters: usize,
    upstream_fn: F,
) -> Result<(TransportPlan, SinkhornGradient)>
where
    F: FnOnce(&DMatrix<f64>) -> Result<DMatrix<f64>>,
{
    let problem = Problem::new(c, m, epsilon)?;
    let (rows, cols) = (problem.rows, problem.cols);

    // us[t], vs[t] hold the scalings after iteration t; vs[0] is the zero start.
    let mut us: Vec<Vec<f64>> = Vec::with_capacity(iters);
    let mut vs: Vec<Vec<f64>> = Vec::with_capacity(iters + 1);
    vs.push(vec![0.0; cols]);
    for t in 0..iters {
        let mut u = vec![0.0; rows];
        problem.update_u(&vs[t], &mut u, 1.0);
        let mut v = vec![0.0; cols];
        problem.update_v(&u, &mut v, 1.0);
        us.push(u);
        vs.push(v);
    }
    let zero_u = vec![0.0; rows];
    let u_final = us.last().unwrap_or(&zero_u);
    let v_final = &vs[iters];
    let entries = problem.plan(u_final, v_final);
    let upstream = upstream_fn(&entries)?;
    if upstream.shape() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "upstream gradient {:?} vs plan {:?}",
            upstream.shape(),
            (rows, cols)
        )));
    }

    // dK accumulates the gradient w.r.t. -C/eps.
    let mut d_kernel = vec![0.0; rows * cols];
    let mut du = vec![0.0; rows];
    let mut dv = vec![0.0; cols];
    for i in 0..rows {
        for j in 0..cols {
            let g = upstream[(i, j)] * entries[(i, j)];
            d_kernel[i * cols + j] += g;
            du[i] += g;
            dv[j] += g;
        }
    }

    for t in (0..iters).rev() {
        let u = &us[t];
        let v_prev = &vs[t];
        let v = &vs[t + 1];
        // v_j = log b_j - lse_i(K_ij + u_i)
        let mut du_acc = du.clone();
        for j in 0..cols {
            if problem.log_b[j] == f64::NEG_INFINITY || dv[j] == 0.0 {
                continue;
            }
            for i in 0..rows {
                let s = (problem.k(i, j) + u[i] + v[j] - problem.log_b[j]).exp();
                let g = dv[j] * s;
                d_kernel[i * cols + j] -= g;
                du_acc[i] -= g;
            }
        }
        // u_i = log a_i - lse_j(K_ij + v_prev_j)
        let mut dv_prev = vec![0.0; cols];
        for i in 0..rows {
            if problem.log_a[i] == f64::NEG_INFINITY || du_acc[i] == 0.0 {
                continue;
            }
            for j in 0..cols {
                let s = (problem.k(i, j) + v_prev[j] + u[i] - problem.log_a[i]).exp();
                let g = du_acc[i] * s;
                d_kernel[i * cols + j] -= g;
                dv_prev[j] -= g;
            }
        }
        du = vec![0.0; rows];
        dv = dv_prev;
    }

    let d_cost = DMatrix::from_fn(rows, cols, |i, j| -d_kernel[i * cols + j] / epsilon);
    let d_gamma = if c.is_augmented() {
        let last_row: f64 = d_cost.row(rows - 1).sum();
        let last_col: f64 = d_cost.column(cols - 1).sum();
        last_row + last_col - d_cost[(rows - 1, cols - 1)]
    } else {
        0.0
    };
    let marginal_violation = marginal_violation(&entries, m);
    let plan = TransportPlan {
        entries,
        epsilon,
        iterations_used: iters,
        max_iters: iters,
        marginal_violation,
        augmented: c.is_augmented(),
    };
    Ok((plan, SinkhornGradient { d_cost, d_gamma }))
}

/// Backward pass for a plan previously computed by [`sinkhorn_fixed`]. Plans
/// that stopped early have no well-defined unrolled derivative.
pub fn sinkhorn_backward(
    plan: &TransportPlan,
    c: &CostMatrix,
    m: &Marginals,
    upstream: &DMatrix<f64>,
) -> Result<SinkhornGradient> {
    if plan.iterations_used != plan.max_iters {
        return Err(Error::IterationMismatch {
            expected: plan.max_iters,
            actual: plan.iterations_used,
        });
    }
    sinkhorn_grad(c, m, plan.epsilon, plan.max_iters, upstream).map(|(_, g)| g)
}
