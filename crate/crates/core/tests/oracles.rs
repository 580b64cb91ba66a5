mod common;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otmot::assign::{
    decode, default_marginals, hungarian, sinkhorn, sinkhorn_fixed, sinkhorn_grad, Marginals, SinkhornParams,
};
use otmot::costs::{augment_dustbin, cosine_cost, CostMatrix, Embedding};
use otmot::geom::{iou, BoundingBox};
use otmot::loss::{loss_grad, mine_triplets, LossParams};
use otmot::metrics::{assoc_pr, id_switches, idf1, match_boxes};
use otmot::synth::brute_force_assign;
use otmot::tracker::FrameTracks;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect()
}

#[test]
fn sinkhorn_matches_reference_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (n1, n2) = (rng.random_range(1..6), rng.random_range(1..6));
        let c = random_rows(&mut rng, n1, n2);
        let gamma = rng.random_range(0.2..1.0);
        let aug = augment_dustbin(&CostMatrix::from_rows(&c).unwrap(), gamma).unwrap();
        let plan = sinkhorn_fixed(&aug, &default_marginals(n1, n2), 0.1, 40).unwrap();
        let (a, b) = common::dustbin_marginals(n1, n2);
        let want = common::sinkhorn(&common::augment(&c, n1, n2, gamma), &a, &b, 0.1, 40);
        for (got, want) in rows(&plan.entries).iter().flatten().zip(want.iter().flatten()) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }
}

#[test]
fn two_by_two_with_heavy_dustbin() {
    let c = vec![vec![0.0, 10.0], vec![10.0, 0.0]];
    let full = common::augment(&c, 2, 2, 5.0);
    let (a, b) = (vec![1.0, 1.0, 2.0], vec![1.0, 1.0, 2.0]);
    let want = common::sinkhorn(&full, &a, &b, 0.1, 20_000);
    let m = Marginals::new(a, b).unwrap();
    let params = SinkhornParams {
        epsilon: 0.1,
        max_iters: 20_000,
        tol: 1e-12,
        ..SinkhornParams::default()
    };
    let p = sinkhorn(&CostMatrix::from_rows(&full).unwrap(), &m, &params).unwrap();
    for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        assert!((p.get(i, j) - want[i][j]).abs() < 1e-4);
        assert!((p.get(i, j) - if i == j { 1.0 } else { 0.0 }).abs() < 1e-4);
    }
}

#[test]
fn three_by_four_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let (eps, iters, h) = (0.2, 30, 1e-5);
    for _ in 0..5 {
        let c = random_rows(&mut rng, 3, 4);
        let gamma = rng.random_range(0.3..0.9);
        let full = common::augment(&c, 3, 4, gamma);
        let upstream = random_rows(&mut rng, 4, 5);
        let (a, b) = common::dustbin_marginals(3, 4);
        let objective = |cost: &[Vec<f64>]| -> f64 {
            let p = common::sinkhorn(cost, &a, &b, eps, iters);
            p.iter().flatten().zip(upstream.iter().flatten()).map(|(x, w)| x * w).sum()
        };
        let aug = augment_dustbin(&CostMatrix::from_rows(&c).unwrap(), gamma).unwrap();
        let up = DMatrix::from_fn(4, 5, |i, j| upstream[i][j]);
        let (_, g) = sinkhorn_grad(&aug, &default_marginals(3, 4), eps, iters, &up).unwrap();
        let mut dustbin_sum = 0.0;
        for i in 0..4 {
            for j in 0..5 {
                let mut plus = full.clone();
                plus[i][j] += h;
                let mut minus = full.clone();
                minus[i][j] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                assert!(common::rel_err(g.d_cost[(i, j)], fd) <= 1e-4, "({i},{j}): {} vs {fd}", g.d_cost[(i, j)]);
                if i == 3 || j == 4 {
                    dustbin_sum += fd;
                }
            }
        }
        assert!(common::rel_err(g.d_gamma, dustbin_sum) <= 1e-4);
    }
}

#[test]
fn four_vs_five_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let params = LossParams::default();
    let h = 1e-5;
    for _ in 0..5 {
        let x: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut cols: Vec<usize> = (0..5).collect();
        cols.shuffle(&mut rng);
        let labels: Vec<(usize, usize)> = (0..3).map(|i| (i, cols[i])).collect();
        let ex: Vec<Embedding> = x.iter().cloned().map(Embedding).collect();
        let ey: Vec<Embedding> = y.iter().cloned().map(Embedding).collect();
        let triplets = mine_triplets(&ex, &ey, &labels, params.distance);
        let oracle_triplets: Vec<(usize, usize, usize)> =
            triplets.iter().map(|t| (t.anchor, t.positive, t.negative)).collect();
        let setup = common::LossSetup {
            labels: &labels,
            triplets: &oracle_triplets,
            alpha: params.alpha,
            beta: params.beta,
            margin: params.margin,
            eps: params.epsilon,
            iters: params.iters,
        };
        let g = loss_grad(&ex, &ey, 0.5, &labels, &triplets, &params).unwrap();
        assert!((g.breakdown.total - common::training_loss(&x, &y, 0.5, &setup)).abs() < 1e-10);
        for k in 0..4 {
            for d in 0..6 {
                let mut plus = x.clone();
                plus[k][d] += h;
                let mut minus = x.clone();
                minus[k][d] -= h;
                let fd = (common::training_loss(&plus, &y, 0.5, &setup) - common::training_loss(&minus, &y, 0.5, &setup))
                    / (2.0 * h);
                assert!(common::rel_err(g.d_reference[k][d], fd) <= 1e-4);
            }
        }
    }
}

#[test]
fn cosine_cost_matches_direct_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let x: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let ex: Vec<Embedding> = x.iter().cloned().map(Embedding).collect();
    let ey: Vec<Embedding> = y.iter().cloned().map(Embedding).collect();
    let got = cosine_cost(&ex, &ey).unwrap();
    let want = common::cosine(&x, &y);
    for i in 0..4 {
        for j in 0..3 {
            assert!((got.get(i, j) - want[i][j]).abs() < 1e-12);
        }
    }
}

#[test]
fn hungarian_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let two = CostMatrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
    assert_eq!(hungarian(&two).matches, vec![(0, 0), (1, 1)]);
    assert_eq!(hungarian(&two).total_cost(&two), 2.0);
    for _ in 0..200 {
        let c = random_rows(&mut rng, 3, 3);
        let best = &common::permutation_costs(&c)[0];
        let cost = CostMatrix::from_rows(&c).unwrap();
        let got = hungarian(&cost);
        assert!((got.total_cost(&cost) - best.0).abs() < 1e-12);
        assert_eq!(brute_force_assign(&cost).unwrap().total_cost(&cost), got.total_cost(&cost));
    }
}

#[test]
fn decode_of_separated_plan_equals_hungarian() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let unit = Marginals::new(vec![1.0; 4], vec![1.0; 4]).unwrap();
    let params = SinkhornParams {
        epsilon: 0.01,
        max_iters: 2000,
        ..SinkhornParams::default()
    };
    let mut checked = 0;
    while checked < 50 {
        let c = random_rows(&mut rng, 4, 4);
        let perms = common::permutation_costs(&c);
        if perms[1].0 - perms[0].0 < 0.3 {
            continue;
        }
        let cost = CostMatrix::from_rows(&c).unwrap();
        let plan = sinkhorn(&cost, &unit, &params).unwrap();
        let want: Vec<(usize, usize)> = perms[0].1.iter().cloned().enumerate().collect();
        assert_eq!(decode(&plan).matches, want);
        assert_eq!(hungarian(&cost).matches, want);
        checked += 1;
    }
}

#[test]
fn iou_area_arithmetic() {
    let a = BoundingBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
    let b = BoundingBox::new(5.0, 0.0, 15.0, 10.0).unwrap();
    assert!((iou(&a, &b) - 50.0 / 150.0).abs() < 1e-12);
}

fn frames(layout: &[&[(u64, f64)]]) -> Vec<FrameTracks> {
    layout.iter()
        .enumerate()
        .map(|(f, objs)| FrameTracks {
            frame: f as i64,
            tracks: objs
                .iter()
                .map(|&(id, x)| (id, BoundingBox::from_xywh(x, 0.0, 10.0, 10.0).unwrap()))
                .collect(),
        })
        .collect()
}

#[test]
fn match_boxes_is_globally_optimal() {
    // greedy on the best pair (pred 0, gt 1) would leave pred 1 unmatched
    let pred = [
        BoundingBox::from_xywh(3.0, 0.0, 10.0, 10.0).unwrap(),
        BoundingBox::from_xywh(8.0, 0.0, 10.0, 10.0).unwrap(),
    ];
    let gt = [
        BoundingBox::from_xywh(0.0, 0.0, 10.0, 10.0).unwrap(),
        BoundingBox::from_xywh(4.0, 0.0, 10.0, 10.0).unwrap(),
    ];
    let c: Vec<Vec<f64>> = pred.iter().map(|p| gt.iter().map(|g| -iou(p, g)).collect()).collect();
    let best = &common::permutation_costs(&c)[0].1;
    let want: Vec<(usize, usize)> = best.iter().cloned().enumerate().collect();
    assert_eq!(match_boxes(&pred, &gt, 0.3), want);
}

#[test]
fn split_track_counts() {
    let gt: Vec<Vec<(u64, f64)>> = (0..10).map(|f| vec![(1, f as f64)]).collect();
    let split: Vec<Vec<(u64, f64)>> = (0..10).map(|f| vec![(if f < 5 { 7 } else { 8 }, f as f64)]).collect();
    let (gt, split) = (
        frames(&gt.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        frames(&split.iter().map(Vec::as_slice).collect::<Vec<_>>()),
    );
    assert_eq!(idf1(&split, &gt, 0.5), 0.5);
    let (p, r) = assoc_pr(&split, &gt, 0.5);
    assert_eq!(p, 1.0);
    let choose2 = |n: f64| n * (n - 1.0) / 2.0;
    assert_eq!(r, 2.0 * choose2(5.0) / choose2(10.0));
    assert_eq!(id_switches(&split, &gt, 0.5), 1);
}

#[test]
fn switch_and_switch_back() {
    let gt: Vec<Vec<(u64, f64)>> = (0..9).map(|f| vec![(1, f as f64)]).collect();
    let pred: Vec<Vec<(u64, f64)>> = (0..9).map(|f| vec![(if (3..6).contains(&f) { 2 } else { 1 }, f as f64)]).collect();
    let gt = frames(&gt.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let pred = frames(&pred.iter().map(Vec::as_slice).collect::<Vec<_>>());
    assert_eq!(id_switches(&pred, &gt, 0.5), 2);
}

#[test]
fn merged_tracks_lower_precision() {
    // two gt objects far apart, predicted as one id over 4 frames each
    let gt: Vec<Vec<(u64, f64)>> = (0..4).map(|_| vec![(1, 0.0), (2, 100.0)]).collect();
    let pred: Vec<Vec<(u64, f64)>> = (0..4).map(|_| vec![(5, 0.0), (5, 100.0)]).collect();
    let gt = frames(&gt.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let pred = frames(&pred.iter().map(Vec::as_slice).collect::<Vec<_>>());
    let (p, r) = assoc_pr(&pred, &gt, 0.5);
    let choose2 = |n: f64| n * (n - 1.0) / 2.0;
    // 8 detections share one predicted id; only same-object pairs are true
    assert_eq!(p, 2.0 * choose2(4.0) / choose2(8.0));
    assert_eq!(r, 1.0);
}
