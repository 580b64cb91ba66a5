use crate::costs::CostMatrix;

use super::HardAssignment;

/// Minimum-cost assignment of `min(n1, n2)` pairs (shortest augmenting paths
/// with potentials, O(n^2 m)). Dustbin rows/columns of an augmented matrix are
/// ignored.
pub fn hungarian(c: &CostMatrix) -> HardAssignment {
    let (n1, n2) = (c.real_rows(), c.real_cols());
    if n1 == 0 || n2 == 0 {
        return HardAssignment::from_matches(Vec::new(), n1, n2);
    }
    let matches = if n1 <= n2 {
        solve(n1, n2, |i, j| c.get(i, j))
    } else {
        solve(n2, n1, |i, j| c.get(j, i))
            .into_iter()
            .map(|(j, i)| (i, j))
            .collect()
    };
    HardAssignment::from_matches(matches, n1, n2)
}

/// Rectangular solver for `n <= m`; every row gets a column.
fn solve(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    debug_assert!(n <= m);
    // 1-based internally; index 0 is the virtual start column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for row in 1..=n {
        owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(r: &[&[f64]]) -> CostMatrix {
        CostMatrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_entry() {
        let h = hungarian(&rows(&[&[5.0]]));
        assert_eq!(h.matches, vec![(0, 0)]);
    }

    #[test]
    fn two_by_two() {
        let c = rows(&[&[1.0, 2.0], &[2.0, 1.0]]);
        let h = hungarian(&c);
        assert_eq!(h.matches, vec![(0, 0), (1, 1)]);
        assert_eq!(h.total_cost(&c), 2.0);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = rows(&[&[4.0, 1.0, 3.5], &[2.0, 0.0, 5.0]]);
        let h = hungarian(&wide);
        assert_eq!(h.matches, vec![(0, 1), (1, 0)]);
        assert_eq!(h.unmatched_cols, vec![2]);

        let tall = rows(&[&[4.0, 2.0], &[1.0, 0.0], &[2.5, 5.0]]);
        let h = hungarian(&tall);
        assert_eq!(h.matches, vec![(1, 1), (2, 0)]);
        assert_eq!(h.unmatched_rows, vec![0]);
    }

    #[test]
    fn empty_sides() {
        let c = CostMatrix::new(nalgebra::DMatrix::zeros(0, 3)).unwrap();
        let h = hungarian(&c);
        assert!(h.matches.is_empty());
        assert_eq!(h.unmatched_cols, vec![0, 1, 2]);
    }

    #[test]
    fn negative_costs() {
        let c = rows(&[&[-1.0, -5.0], &[-4.0, -2.0]]);
        assert_eq!(hungarian(&c).matches, vec![(0, 1), (1, 0)]);
    }
}
