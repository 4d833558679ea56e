/// Minimum-cost assignment of every row to a distinct column of a
/// `rows × cols` cost matrix (`rows ≤ cols`). Returns the column of each row.
///
/// Among equal-cost columns the lower index is preferred. NaN and infinite
/// costs rank above every finite cost.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "more rows ({rows}) than columns ({cols})");
    assert_eq!(cost.len(), rows * cols);
    if rows == 0 {
        return Vec::new();
    }
    let sanitized: Vec<f64>;
    let cost = if cost.iter().all(|c| c.is_finite()) {
        cost
    } else {
        let worst = cost.iter().filter(|c| c.is_finite()).fold(0.0f64, |m, c| m.max(c.abs()));
        let big = (worst + 1.0) * (rows as f64 + 1.0) * 2.0;
        sanitized = cost.iter().map(|&c| if c.is_finite() { c } else { big }).collect();
        &sanitized
    };
    let inf = f64::INFINITY;
    // Potentials and matching, 1-based with column 0 as the virtual source.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * cols + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if j1 == 0 {
                // Overflowed potentials: take any free column so the search ends.
                j1 = (1..=cols).find(|&j| !used[j]).expect("a free column exists while rows <= cols");
                delta = 0.0;
            }
            for j in 0..=cols {
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
    let mut out = vec![0usize; rows];
    for j in 1..=cols {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

pub fn assignment_cost(cost: &[f64], cols: usize, assignment: &[usize]) -> f64 {
    assignment.iter().enumerate().map(|(r, &c)| cost[r * cols + c]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn non_finite_costs_still_give_a_permutation() {
        let cost = [f64::NAN, 1.0, f64::INFINITY, f64::NAN, f64::NAN, f64::NAN, 2.0, f64::NEG_INFINITY, 1e308];
        let a = hungarian(&cost, 3, 3);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, vec![0, 1, 2]);
        assert_eq!(a[0], 1);
        let all_nan = vec![f64::NAN; 12];
        let a = hungarian(&all_nan, 3, 4);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|&c| c < 4) && a[0] != a[1] && a[1] != a[2] && a[0] != a[2]);
    }
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(cost: &[f64], rows: usize, cols: usize) -> f64 {
        fn rec(cost: &[f64], rows: usize, cols: usize, r: usize, used: &mut Vec<bool>) -> f64 {
            if r == rows {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cols {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r * cols + c] + rec(cost, rows, cols, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, rows, cols, 0, &mut vec![false; cols])
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let rows = rng.gen_range(0..=5);
            let cols = rng.gen_range(rows.max(1)..=7);
            let cost: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(0.0..10.0)).collect();
            let a = hungarian(&cost, rows, cols);
            let mut seen = vec![false; cols];
            for &c in &a {
                assert!(!seen[c]);
                seen[c] = true;
            }
            assert!((assignment_cost(&cost, cols, &a) - brute(&cost, rows, cols)).abs() < 1e-9);
        }
    }

    #[test]
    fn single_row_and_ties() {
        assert_eq!(hungarian(&[3.0, 1.0, 2.0], 1, 3), vec![1]);
        assert_eq!(hungarian(&[2.0, 1.0, 1.0, 5.0], 1, 4), vec![1]);
        assert_eq!(hungarian(&[1.0, 1.0, 1.0, 1.0], 2, 2), vec![0, 1]);
        assert!(hungarian(&[], 0, 3).is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> impl Strategy<Value = (usize, usize, Vec<f64>)> {
            (0usize..=6, 0usize..=2).prop_flat_map(|(rows, extra)| {
                let cols = (rows + extra).max(1);
                (Just(rows), Just(cols), prop::collection::vec(-10.0f64..10.0, rows * cols))
            })
        }

        proptest! {
            #[test]
            fn hungarian_is_optimal_and_one_to_one((rows, cols, cost) in instance()) {
                let a = hungarian(&cost, rows, cols);
                prop_assert_eq!(a.len(), rows);
                let mut distinct = a.clone();
                distinct.sort();
                distinct.dedup();
                prop_assert_eq!(distinct.len(), rows);
                prop_assert!((assignment_cost(&cost, cols, &a) - super::brute(&cost, rows, cols)).abs() < 1e-9);
            }
        }
    }
}
