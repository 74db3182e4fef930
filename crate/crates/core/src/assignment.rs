//! Dense rectangular linear assignment (Hungarian algorithm with potentials).

/// Minimum-cost assignment on a `rows x cols` matrix.
///
/// Every row is matched when `rows <= cols`, every column otherwise; the
/// result has `min(rows, cols)` pairs sorted by row. Costs must be finite.
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = cost[0].len();
    if cols == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|r| r.len() == cols));
    if rows <= cols {
        let mut pairs = solve(rows, cols, |i, j| cost[i][j]);
        pairs.sort_unstable();
        pairs
    } else {
        let mut pairs: Vec<(usize, usize)> = solve(cols, rows, |i, j| cost[j][i]).into_iter().map(|(c, r)| (r, c)).collect();
        pairs.sort_unstable();
        pairs
    }
}

/// Maximum-weight assignment; pairs are still complete over the smaller side.
pub fn max_weight_assignment(weight: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let neg: Vec<Vec<f64>> = weight.iter().map(|r| r.iter().map(|w| -w).collect()).collect();
    min_cost_assignment(&neg)
}

// n <= m. Shortest augmenting path with row/column potentials, O(n^2 m).
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // p[j]: row (1-based) assigned to column j; 0 = free.
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| p[j] != 0).map(|j| (p[j] - 1, j - 1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|(i, j)| cost[*i][*j]).sum()
    }

    // All injections of the smaller side into the larger one.
    fn brute_min(cost: &[Vec<f64>]) -> f64 {
        let (n, m) = (cost.len(), cost[0].len());
        fn rec(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, transpose: bool, n: usize, m: usize) -> f64 {
            if i == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    let c = if transpose { cost[j][i] } else { cost[i][j] };
                    best = best.min(c + rec(cost, i + 1, used, transpose, n, m));
                    used[j] = false;
                }
            }
            best
        }
        if n <= m {
            rec(cost, 0, &mut vec![false; m], false, n, m)
        } else {
            rec(cost, 0, &mut vec![false; n], true, m, n)
        }
    }

    #[test]
    fn small_known_case() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let pairs = min_cost_assignment(&cost);
        assert_eq!(total(&cost, &pairs), 5.0);
        assert_eq!(pairs.len(), 3);
    }

    #[test]
    fn rectangular_and_empty() {
        let cost = vec![vec![1.0, 9.0], vec![9.0, 1.0], vec![0.5, 0.5]];
        let pairs = min_cost_assignment(&cost);
        assert_eq!(pairs.len(), 2);
        assert_eq!(total(&cost, &pairs), 1.5);
        assert!(min_cost_assignment(&[]).is_empty());
        assert!(min_cost_assignment(&[vec![]]).is_empty());
        let w = vec![vec![0.2, 0.9]];
        assert_eq!(max_weight_assignment(&w), vec![(0, 1)]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..5, m in 1usize..5, seed in proptest::collection::vec(-10.0..10.0f64, 16)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| seed[(i * 4 + j) % 16]).collect()).collect();
            let pairs = min_cost_assignment(&cost);
            prop_assert_eq!(pairs.len(), n.min(m));
            prop_assert!((total(&cost, &pairs) - brute_min(&cost)).abs() < 1e-9);
        }
    }
}
