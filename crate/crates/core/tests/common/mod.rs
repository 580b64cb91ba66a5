//! Reference implementations used as oracles. They share no code with the
//! library: plain nested vectors, straightforward loops.

#![allow(dead_code)]

pub fn lse(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain scaling iterations with all-zero initial potentials.
pub fn sinkhorn(c: &[Vec<f64>], a: &[f64], b: &[f64], eps: f64, iters: usize) -> Vec<Vec<f64>> {
    let (n, m) = (a.len(), b.len());
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    for _ in 0..iters {
        for i in 0..n {
            let row: Vec<f64> = (0..m).map(|j| -c[i][j] / eps + v[j]).collect();
            u[i] = a[i].ln() - lse(&row);
        }
        for j in 0..m {
            let col: Vec<f64> = (0..n).map(|i| -c[i][j] / eps + u[i]).collect();
            v[j] = b[j].ln() - lse(&col);
        }
    }
    (0..n)
        .map(|i| (0..m).map(|j| (-c[i][j] / eps + u[i] + v[j]).exp()).collect())
        .collect()
}

pub fn augment(c: &[Vec<f64>], n1: usize, n2: usize, gamma: f64) -> Vec<Vec<f64>> {
    (0..=n1)
        .map(|i| (0..=n2).map(|j| if i < n1 && j < n2 { c[i][j] } else { gamma }).collect())
        .collect()
}

pub fn dustbin_marginals(n1: usize, n2: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![1.0; n1];
    a.push(n2 as f64);
    let mut b = vec![1.0; n2];
    b.push(n1 as f64);
    (a, b)
}

pub fn cosine(x: &[Vec<f64>], y: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let norm = |v: &Vec<f64>| v.iter().map(|t| t * t).sum::<f64>().sqrt();
    x.iter()
        .map(|xi| {
            y.iter()
                .map(|yj| {
                    let d: f64 = xi.iter().zip(yj).map(|(p, q)| p * q).sum();
                    (1.0 - d / (norm(xi) * norm(yj))).clamp(0.0, 2.0)
                })
                .collect()
        })
        .collect()
}

pub fn l1(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum()
}

pub struct LossSetup<'a> {
    pub labels: &'a [(usize, usize)],
    /// `(anchor, positive, negative)`.
    pub triplets: &'a [(usize, usize, usize)],
    pub alpha: f64,
    pub beta: f64,
    pub margin: f64,
    pub eps: f64,
    pub iters: usize,
}

/// `alpha * mean L1 triplet hinge + beta * (-sum log P[labels])`.
pub fn training_loss(x: &[Vec<f64>], y: &[Vec<f64>], gamma: f64, s: &LossSetup) -> f64 {
    let (n1, n2) = (x.len(), y.len());
    let c = augment(&cosine(x, y), n1, n2, gamma);
    let (a, b) = dustbin_marginals(n1, n2);
    let p = sinkhorn(&c, &a, &b, s.eps, s.iters);
    let nll: f64 = s.labels.iter().map(|&(i, j)| -p[i][j].max(1e-30).ln()).sum();
    let triplet = if s.triplets.is_empty() {
        0.0
    } else {
        s.triplets
            .iter()
            .map(|&(i, j, k)| (l1(&x[i], &y[j]) - l1(&x[i], &y[k]) + s.margin).max(0.0))
            .sum::<f64>()
            / s.triplets.len() as f64
    };
    s.alpha * triplet + s.beta * nll
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                go(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Permutation costs of a square matrix, ascending.
pub fn permutation_costs(c: &[Vec<f64>]) -> Vec<(f64, Vec<usize>)> {
    let mut all: Vec<(f64, Vec<usize>)> = permutations(c.len())
        .into_iter()
        .map(|p| (p.iter().enumerate().map(|(i, &j)| c[i][j]).sum(), p))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    all
}

/// `|a - f| / max(|a|, |f|, 1e-4)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}
