//! Runtime oracle battery: every solver is checked against an independent
//! reference on seeded random instances.

use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assign::{
    decode, default_marginals, hungarian, sinkhorn, sinkhorn_fixed, sinkhorn_grad, Marginals, SinkhornParams,
};
use crate::costs::{augment_dustbin, CostMatrix, Embedding, DEFAULT_GAMMA};
use crate::error::Result;
use crate::loss::{loss_grad, mine_triplets, LossParams};
use crate::metrics::{id_switches, idf1, DEFAULT_IOU_THRESH};
use crate::synth::{brute_force_assign, generate, SynthConfig};
use crate::tracker::{run_sequence, TrackerConfig};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradient components smaller than this are compared in absolute terms.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {}: {}", self.name, self.detail)
    }
}

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CostMatrix {
    CostMatrix::new(DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>())).expect("finite")
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

pub fn check_hungarian(seed: u64, per_size: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0;
    let mut total = 0;
    for n1 in 1..=6 {
        for n2 in 1..=6 {
            for _ in 0..per_size {
                let c = random_matrix(&mut rng, n1, n2);
                let fast = hungarian(&c).total_cost(&c);
                let slow = brute_force_assign(&c)?.total_cost(&c);
                if (fast - slow).abs() > 1e-12 {
                    mismatches += 1;
                }
                total += 1;
            }
        }
    }
    Ok(outcome(
        "hungarian_vs_enumeration",
        mismatches == 0,
        format!("{mismatches} mismatches over {total} instances"),
    ))
}

pub fn check_sinkhorn_marginals(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut negative = false;
    for k in 0..instances {
        let (n1, n2) = (rng.random_range(1..=10), rng.random_range(1..=10));
        let eps = [0.05, 0.1, 0.5][k % 3];
        let c = augment_dustbin(&random_matrix(&mut rng, n1, n2), DEFAULT_GAMMA)?;
        let params = SinkhornParams {
            epsilon: eps,
            max_iters: 300,
            tol: 1e-9,
            ..SinkhornParams::default()
        };
        let p = sinkhorn(&c, &default_marginals(n1, n2), &params)?;
        negative |= p.entries.iter().any(|&x| x < 0.0);
        worst = worst.max(p.marginal_violation);
    }
    Ok(outcome(
        "sinkhorn_marginals",
        !negative && worst <= 1e-6,
        format!("max violation {worst:.3e} over {instances} instances"),
    ))
}

pub fn check_sinkhorn_gradient(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let iters = 50;
    for k in 0..instances {
        let (n1, n2) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let eps = [0.05, 0.1, 0.5][k % 3];
        let base = random_matrix(&mut rng, n1, n2);
        let gamma = rng.random_range(0.2..0.8);
        let m = default_marginals(n1, n2);
        let up = DMatrix::from_fn(n1 + 1, n2 + 1, |_, _| rng.random_range(-1.0..1.0));
        let objective = |entries: &DMatrix<f64>, g: f64| -> Result<f64> {
            let real = CostMatrix::new(entries.clone())?;
            let p = sinkhorn_fixed(&augment_dustbin(&real, g)?, &m, eps, iters)?;
            Ok(p.entries.component_mul(&up).sum())
        };
        let (_, grad) = sinkhorn_grad(&augment_dustbin(&base, gamma)?, &m, eps, iters, &up)?;
        for i in 0..n1 {
            for j in 0..n2 {
                let mut plus = base.entries().clone();
                plus[(i, j)] += FD_STEP;
                let mut minus = base.entries().clone();
                minus[(i, j)] -= FD_STEP;
                let fd = (objective(&plus, gamma)? - objective(&minus, gamma)?) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(grad.d_cost[(i, j)], fd));
            }
        }
        let fd = (objective(base.entries(), gamma + FD_STEP)? - objective(base.entries(), gamma - FD_STEP)?)
            / (2.0 * FD_STEP);
        worst = worst.max(relative_error(grad.d_gamma, fd));
    }
    Ok(outcome(
        "sinkhorn_gradient",
        worst <= 1e-4,
        format!("max relative error {worst:.3e} over {instances} instances"),
    ))
}

fn random_embeddings(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Embedding> {
    (0..n)
        .map(|_| Embedding((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect()
}

fn random_labels(rng: &mut ChaCha8Rng, n1: usize, n2: usize) -> Vec<(usize, usize)> {
    use rand::seq::SliceRandom;
    let mut cols: Vec<usize> = (0..n2).collect();
    cols.shuffle(rng);
    (0..n1.min(n2))
        .filter(|_| rng.random_bool(0.8))
        .map(|i| (i, cols[i]))
        .collect()
}

pub fn check_loss_gradient(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = LossParams {
        iters: 50,
        ..LossParams::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let (n1, n2, dim) = (rng.random_range(2..=5), rng.random_range(2..=5), 8);
        let reference = random_embeddings(&mut rng, n1, dim);
        let target = random_embeddings(&mut rng, n2, dim);
        let gamma = rng.random_range(0.3..0.9);
        let labels = random_labels(&mut rng, n1, n2);
        let triplets = mine_triplets(&reference, &target, &labels, params.distance);
        let g = loss_grad(&reference, &target, gamma, &labels, &triplets, &params)?;
        let value = |r: &[Embedding], t: &[Embedding], gm: f64| -> Result<f64> {
            Ok(loss_grad(r, t, gm, &labels, &triplets, &params)?.breakdown.total)
        };
        for side in 0..2 {
            let rows = if side == 0 { n1 } else { n2 };
            for k in 0..rows {
                for d in 0..dim {
                    let shifted = |delta: f64| -> Result<f64> {
                        let mut r = reference.clone();
                        let mut t = target.clone();
                        if side == 0 {
                            r[k].0[d] += delta;
                        } else {
                            t[k].0[d] += delta;
                        }
                        value(&r, &t, gamma)
                    };
                    let fd = (shifted(FD_STEP)? - shifted(-FD_STEP)?) / (2.0 * FD_STEP);
                    let analytic = if side == 0 { g.d_reference[k][d] } else { g.d_target[k][d] };
                    worst = worst.max(relative_error(analytic, fd));
                }
            }
        }
        let fd = (value(&reference, &target, gamma + FD_STEP)? - value(&reference, &target, gamma - FD_STEP)?)
            / (2.0 * FD_STEP);
        worst = worst.max(relative_error(g.d_gamma, fd));
    }
    Ok(outcome(
        "loss_gradient",
        worst <= 1e-4,
        format!("max relative error {worst:.3e} over {instances} instances"),
    ))
}

/// Difference between the second-best and best permutation costs of a square
/// matrix, by enumeration.
pub fn permutation_margin(c: &CostMatrix) -> f64 {
    fn walk(row: usize, n: usize, used: &mut [bool], acc: f64, c: &CostMatrix, costs: &mut Vec<f64>) {
        if row == n {
            costs.push(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                walk(row + 1, n, used, acc + c.get(row, j), c, costs);
                used[j] = false;
            }
        }
    }
    let n = c.real_rows();
    let mut costs = Vec::new();
    walk(0, n, &mut vec![false; n], 0.0, c, &mut costs);
    costs.sort_by(f64::total_cmp);
    if costs.len() < 2 {
        f64::INFINITY
    } else {
        costs[1] - costs[0]
    }
}

pub const ANNEAL_EPSILON: f64 = 0.01;
pub const ANNEAL_ITERS: usize = 2000;

pub fn check_annealing(seed: u64, instances: usize) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SinkhornParams {
        epsilon: ANNEAL_EPSILON,
        max_iters: ANNEAL_ITERS,
        tol: 1e-9,
        ..SinkhornParams::default()
    };
    let uniform = Marginals::new(vec![1.0; 5], vec![1.0; 5])?;
    let mut agree = 0;
    let mut done = 0;
    while done < instances {
        let c = random_matrix(&mut rng, 5, 5);
        if permutation_margin(&c) <= 0.5 {
            continue;
        }
        let p = sinkhorn(&c, &uniform, &params)?;
        if decode(&p).matches == hungarian(&c).matches {
            agree += 1;
        }
        done += 1;
    }
    let rate = agree as f64 / instances as f64;
    Ok(outcome(
        "sinkhorn_hungarian_annealing",
        rate >= 0.99,
        format!("{agree}/{instances} agree"),
    ))
}

pub fn check_synthetic_tracking(seed: u64) -> Result<CheckOutcome> {
    let clean = generate(&SynthConfig::default(), seed)?;
    let out = run_sequence(&clean.tracker_input(), &TrackerConfig::default())?;
    let gt = clean.ground_truth();
    let clean_idf1 = idf1(&out, &gt, DEFAULT_IOU_THRESH);
    let clean_idsw = id_switches(&out, &gt, DEFAULT_IOU_THRESH);

    let noisy_config = SynthConfig {
        noise_sigma: 0.1,
        occlusions_per_object: 1,
        occlusion_length: 3,
        ..SynthConfig::default()
    };
    let noisy = generate(&noisy_config, seed)?;
    let out = run_sequence(&noisy.tracker_input(), &TrackerConfig::default())?;
    let noisy_idf1 = idf1(&out, &noisy.ground_truth(), DEFAULT_IOU_THRESH);

    Ok(outcome(
        "synthetic_idf1",
        clean_idf1 == 1.0 && clean_idsw == 0 && noisy_idf1 >= 0.95,
        format!("clean idf1={clean_idf1:.4} idsw={clean_idsw}, noisy idf1={noisy_idf1:.4}"),
    ))
}

/// Runs every check with a fixed seed.
pub fn run_all(seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_hungarian(seed, 20)?,
        check_sinkhorn_marginals(seed + 1, 200)?,
        check_sinkhorn_gradient(seed + 2, 12)?,
        check_loss_gradient(seed + 3, 10)?,
        check_annealing(seed + 4, 200)?,
        check_synthetic_tracking(seed + 5)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn margin_of_identity_like_matrix() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        assert_eq!(permutation_margin(&c), 2.0);
    }

    #[test]
    fn relative_error_has_floor() {
        assert_eq!(relative_error(1e-9, 0.0), 1e-5);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn battery_passes() {
        for c in run_all(7).unwrap() {
            println!("{c}");
            assert!(c.passed, "{c}");
        }
    }
}
