//! Minimum-cost perfect matching on a dense square cost matrix
//! (shortest augmenting paths with dual potentials, O(n³)).

/// Column assigned to every row, minimizing the total cost.
/// `cost` is row-major `n × n`.
pub fn solve(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based bookkeeping, index 0 is the virtual start column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.fill(f64::INFINITY);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let row = &cost[(i0 - 1) * n..i0 * n];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = row[j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

/// Total cost of the optimal matching.
pub fn min_cost(cost: &[f64], n: usize) -> f64 {
    solve(cost, n)
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn go(cost: &[f64], n: usize, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    go(cost, n, row + 1, used, acc + cost[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 40;
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
        let mut a = solve(&cost, n);
        a.sort_unstable();
        assert_eq!(a, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 1..=7 {
            for _ in 0..5 {
                let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(-3.0..10.0)).collect();
                assert!((min_cost(&cost, n) - brute_force(&cost, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn ties_and_zero_matrix() {
        assert_eq!(min_cost(&[0.0; 9], 3), 0.0);
        assert_eq!(min_cost(&[1.0, 1.0, 1.0, 1.0], 2), 2.0);
        assert!(solve(&[], 0).is_empty());
    }
}
