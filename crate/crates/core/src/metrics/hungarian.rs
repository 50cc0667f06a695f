//! Minimum-cost rectangular assignment (Kuhn-Munkres with potentials).

/// Assigns every row of the smaller side to a distinct column, minimizing the
/// summed cost. Returns the column of each row, `None` for unassigned rows
/// when there are more rows than columns. Costs must be finite.
pub fn assign(cost: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return vec![None; n];
    }
    if n > m {
        let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| cost[i][j]).collect()).collect();
        let cols = assign(&t);
        let mut rows = vec![None; n];
        for (j, i) in cols.into_iter().enumerate() {
            if let Some(i) = i {
                rows[i] = Some(j);
            }
        }
        return rows;
    }
    // 1-based arrays; column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
    let mut rows = vec![None; n];
    for j in 1..=m {
        if owner[j] != 0 {
            rows[owner[j] - 1] = Some(j - 1);
        }
    }
    rows
}

/// Sum of `cost[i][col]` over assigned rows.
pub fn assignment_cost(cost: &[Vec<f64>], rows: &[Option<usize>]) -> f64 {
    rows.iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| cost[i][j]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive search over injective maps of the smaller side.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        let n = cost.len();
        let m = cost[0].len();
        fn rec(cost: &[Vec<f64>], i: usize, used: &mut Vec<bool>, rows_left: usize, cols_left: usize) -> f64 {
            if i == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            // Row i may stay unassigned only if rows outnumber columns.
            if rows_left > cols_left {
                best = rec(cost, i + 1, used, rows_left - 1, cols_left);
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    best = best.min(cost[i][j] + rec(cost, i + 1, used, rows_left - 1, cols_left - 1));
                    used[j] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; m], n, m)
    }

    #[test]
    fn known_square_case() {
        let c = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let r = assign(&c);
        assert_eq!(assignment_cost(&c, &r), 5.0);
        assert_eq!(r, vec![Some(1), Some(0), Some(2)]);
    }

    #[test]
    fn empty_inputs() {
        assert!(assign(&[]).is_empty());
        assert_eq!(assign(&[vec![], vec![]]), vec![None, None]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..6, m in 1usize..6, seed in proptest::collection::vec(0.0f64..100.0, 36)) {
            let cost: Vec<Vec<f64>> = (0..n).map(|i| (0..m).map(|j| seed[i * 6 + j].round()).collect()).collect();
            let rows = assign(&cost);
            let mut cols: Vec<usize> = rows.iter().flatten().copied().collect();
            prop_assert_eq!(cols.len(), n.min(m));
            cols.sort_unstable();
            cols.dedup();
            prop_assert_eq!(cols.len(), n.min(m));
            prop_assert!((assignment_cost(&cost, &rows) - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
