//! Training objective: negative log-likelihood of pseudo-labeled plan entries
//! plus a triplet margin term, and its exact gradient through the Sinkhorn
//! layer with respect to the embeddings and the dustbin cost.

use nalgebra::DMatrix;

use crate::assign::{
    decode, default_marginals, sinkhorn_grad_with, HardAssignment, TransportPlan,
    DEFAULT_EPSILON, DEFAULT_MAX_ITERS,
};
use crate::costs::{augment_dustbin, CostMatrix, Embedding};
use crate::error::{Error, Result};

/// Plan entries are clamped to this before taking the log.
pub const LOG_CLAMP: f64 = 1e-30;

/// Distance used by the triplet term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TripletDistance {
    /// Sum of absolute coordinate differences.
    #[default]
    L1,
    L2,
}

impl TripletDistance {
    pub fn eval(self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            TripletDistance::L1 => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
            TripletDistance::L2 => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        }
    }

    /// d/dx of `eval(x, y)`; the negation is d/dy.
    fn grad(self, x: &[f64], y: &[f64]) -> Vec<f64> {
        match self {
            TripletDistance::L1 => x
                .iter()
                .zip(y)
                .map(|(a, b)| {
                    let d = a - b;
                    if d > 0.0 {
                        1.0
                    } else if d < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                })
                .collect(),
            TripletDistance::L2 => {
                let n = self.eval(x, y);
                if n == 0.0 {
                    return vec![0.0; x.len()];
                }
                x.iter().zip(y).map(|(a, b)| (a - b) / n).collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub distance: TripletDistance,
    pub epsilon: f64,
    /// Unrolled Sinkhorn iterations.
    pub iters: usize,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            margin: 0.3,
            distance: TripletDistance::L1,
            epsilon: DEFAULT_EPSILON,
            iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub triplet: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
}

/// Anchor from the reference frame; positive and negative from the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// `-sum log P[i][j]` over the labeled pairs.
pub fn nll_loss(p: &TransportPlan, labels: &[(usize, usize)]) -> Result<f64> {
    let (rows, cols) = (p.real_rows(), p.real_cols());
    let mut loss = 0.0;
    for &(i, j) in labels {
        if i >= rows || j >= cols {
            return Err(Error::LabelOutOfRange { row: i, col: j, rows, cols });
        }
        loss -= p.get(i, j).max(LOG_CLAMP).ln();
    }
    Ok(loss)
}

/// Hinge `max(d(a, p) - d(a, n) + margin, 0)` with the L1 distance.
pub fn triplet_loss(anchor: &Embedding, pos: &Embedding, neg: &Embedding, margin: f64) -> Result<f64> {
    triplet_loss_with(anchor, pos, neg, margin, TripletDistance::L1)
}

pub fn triplet_loss_with(
    anchor: &Embedding,
    pos: &Embedding,
    neg: &Embedding,
    margin: f64,
    distance: TripletDistance,
) -> Result<f64> {
    if anchor.dim() != pos.dim() || anchor.dim() != neg.dim() {
        return Err(Error::DimensionMismatch(format!(
            "triplet dimensions {}/{}/{}",
            anchor.dim(),
            pos.dim(),
            neg.dim()
        )));
    }
    let d_pos = distance.eval(anchor.values(), pos.values());
    let d_neg = distance.eval(anchor.values(), neg.values());
    Ok((d_pos - d_neg + margin).max(0.0))
}

/// For each labeled pair, the hardest negative is the closest target
/// embedding other than the partner. Pairs with no candidate negative are
/// skipped.
pub fn mine_triplets(
    reference: &[Embedding],
    target: &[Embedding],
    labels: &[(usize, usize)],
    distance: TripletDistance,
) -> Vec<Triplet> {
    labels
        .iter()
        .filter_map(|&(i, j)| {
            let anchor = reference.get(i)?;
            let negative = (0..target.len())
                .filter(|&k| k != j)
                .map(|k| (k, distance.eval(anchor.values(), target[k].values())))
                .min_by(|a, b| a.1.total_cmp(&b.1))?
                .0;
            Some(Triplet {
                anchor: i,
                positive: j,
                negative,
            })
        })
        .collect()
}

fn mean_triplet(
    reference: &[Embedding],
    target: &[Embedding],
    triplets: &[Triplet],
    margin: f64,
    distance: TripletDistance,
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for t in triplets {
        let a = reference.get(t.anchor).ok_or(Error::InvalidArgument(format!("anchor {} out of range", t.anchor)))?;
        let p = target.get(t.positive).ok_or(Error::InvalidArgument(format!("positive {} out of range", t.positive)))?;
        let n = target.get(t.negative).ok_or(Error::InvalidArgument(format!("negative {} out of range", t.negative)))?;
        sum += triplet_loss_with(a, p, n, margin, distance)?;
    }
    Ok(sum / triplets.len() as f64)
}

/// `alpha * mean triplet + beta * nll`.
pub fn total_loss(
    plan: &TransportPlan,
    labels: &[(usize, usize)],
    reference: &[Embedding],
    target: &[Embedding],
    triplets: &[Triplet],
    params: &LossParams,
) -> Result<LossBreakdown> {
    let nll = nll_loss(plan, labels)?;
    let triplet = mean_triplet(reference, target, triplets, params.margin, params.distance)?;
    Ok(LossBreakdown {
        nll,
        triplet,
        total: params.alpha * triplet + params.beta * nll,
        alpha: params.alpha,
        beta: params.beta,
        margin: params.margin,
    })
}

/// Gradients of the training loss plus the forward quantities they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub breakdown: LossBreakdown,
    pub plan: TransportPlan,
    pub d_reference: Vec<Vec<f64>>,
    pub d_target: Vec<Vec<f64>>,
    pub d_gamma: f64,
}

fn unit(xs: &[Embedding], offset: usize) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut units = Vec::with_capacity(xs.len());
    let mut norms = Vec::with_capacity(xs.len());
    for (k, x) in xs.iter().enumerate() {
        let n = x.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::ZeroNormEmbedding { index: offset + k });
        }
        units.push(x.values().iter().map(|v| v / n).collect());
        norms.push(n);
    }
    Ok((units, norms))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Back-propagates through `x / |x|`.
fn through_normalization(unit: &[f64], norm: f64, d_unit: &[f64]) -> Vec<f64> {
    let proj = dot(unit, d_unit);
    unit.iter()
        .zip(d_unit)
        .map(|(u, g)| (g - u * proj) / norm)
        .collect()
}

/// Forward pass and exact gradient of the training loss with respect to every
/// embedding coordinate and the dustbin cost `gamma`, differentiating through
/// `params.iters` unrolled Sinkhorn iterations. `triplets` are held fixed.
pub fn loss_grad(
    reference: &[Embedding],
    target: &[Embedding],
    gamma: f64,
    labels: &[(usize, usize)],
    triplets: &[Triplet],
    params: &LossParams,
) -> Result<LossGradient> {
    let (n1, n2) = (reference.len(), target.len());
    let dim = reference.first().or(target.first()).map_or(0, Embedding::dim);
    if reference.iter().chain(target).any(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch("embeddings differ in dimension".into()));
    }
    for &(i, j) in labels {
        if i >= n1 || j >= n2 {
            return Err(Error::LabelOutOfRange { row: i, col: j, rows: n1, cols: n2 });
        }
    }
    let (u1, norm1) = unit(reference, 0)?;
    let (u2, norm2) = unit(target, n1)?;
    let sim = DMatrix::from_fn(n1, n2, |i, j| 1.0 - dot(&u1[i], &u2[j]));
    let cost = augment_dustbin(&CostMatrix::new(sim)?, gamma)?;
    let marginals = default_marginals(n1, n2);

    let beta = params.beta;
    let (plan, sg) = sinkhorn_grad_with(&cost, &marginals, params.epsilon, params.iters, |p| {
        let mut up = DMatrix::zeros(p.nrows(), p.ncols());
        for &(i, j) in labels {
            let v = p[(i, j)];
            if v > LOG_CLAMP {
                up[(i, j)] -= beta / v;
            }
        }
        Ok(up)
    })?;

    let mut d_u1 = vec![vec![0.0; dim]; n1];
    let mut d_u2 = vec![vec![0.0; dim]; n2];
    for i in 0..n1 {
        for j in 0..n2 {
            let g = sg.d_cost[(i, j)];
            if g == 0.0 {
                continue;
            }
            for k in 0..dim {
                d_u1[i][k] -= g * u2[j][k];
                d_u2[j][k] -= g * u1[i][k];
            }
        }
    }
    let mut d_reference: Vec<Vec<f64>> = (0..n1)
        .map(|i| through_normalization(&u1[i], norm1[i], &d_u1[i]))
        .collect();
    let mut d_target: Vec<Vec<f64>> = (0..n2)
        .map(|j| through_normalization(&u2[j], norm2[j], &d_u2[j]))
        .collect();

    if !triplets.is_empty() && params.alpha != 0.0 {
        let w = params.alpha / triplets.len() as f64;
        for t in triplets {
            let a = reference[t.anchor].values();
            let p = target[t.positive].values();
            let n = target[t.negative].values();
            let hinge = params.distance.eval(a, p) - params.distance.eval(a, n) + params.margin;
            if hinge <= 0.0 {
                continue;
            }
            let gp = params.distance.grad(a, p);
            let gn = params.distance.grad(a, n);
            for k in 0..dim {
                d_reference[t.anchor][k] += w * (gp[k] - gn[k]);
                d_target[t.positive][k] -= w * gp[k];
                d_target[t.negative][k] += w * gn[k];
            }
        }
    }

    let breakdown = total_loss(&plan, labels, reference, target, triplets, params)?;
    Ok(LossGradient {
        breakdown,
        plan,
        d_reference,
        d_target,
        d_gamma: sg.d_gamma,
    })
}

/// Outcome of [`gradient_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct DescentTrace {
    /// Total loss before each step, followed by the final loss.
    pub losses: Vec<f64>,
    pub reference: Vec<Embedding>,
    pub target: Vec<Embedding>,
    pub gamma: f64,
    /// Decoded assignment of the final plan.
    pub assignment: HardAssignment,
}

/// Plain gradient descent on the embeddings and `gamma`. Hard negatives are
/// re-mined before every step.
pub fn gradient_descent(
    reference: &[Embedding],
    target: &[Embedding],
    gamma: f64,
    labels: &[(usize, usize)],
    params: &LossParams,
    steps: usize,
    rate: f64,
) -> Result<DescentTrace> {
    let mut reference = reference.to_vec();
    let mut target = target.to_vec();
    let mut gamma = gamma;
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let triplets = mine_triplets(&reference, &target, labels, params.distance);
        let g = loss_grad(&reference, &target, gamma, labels, &triplets, params)?;
        losses.push(g.breakdown.total);
        for (x, d) in reference.iter_mut().zip(&g.d_reference) {
            for (v, dv) in x.0.iter_mut().zip(d) {
                *v -= rate * dv;
            }
        }
        for (x, d) in target.iter_mut().zip(&g.d_target) {
            for (v, dv) in x.0.iter_mut().zip(d) {
                *v -= rate * dv;
            }
        }
        gamma -= rate * g.d_gamma;
    }
    let triplets = mine_triplets(&reference, &target, labels, params.distance);
    let last = loss_grad(&reference, &target, gamma, labels, &triplets, params)?;
    losses.push(last.breakdown.total);
    Ok(DescentTrace {
        losses,
        reference,
        target,
        gamma,
        assignment: decode(&last.plan),
    })
}
