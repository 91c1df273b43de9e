//! Minimum-cost perfect matching on dense cost matrices (Hungarian method,
//! shortest augmenting paths with potentials, `O(n^2 m)`).

use crate::error::{Error, Result};

/// Optimal assignment of every row to a distinct column.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `cols[i]` is the column matched to row `i`.
    pub cols: Vec<usize>,
    pub cost: f64,
}

/// Solves `min sum_i cost[i][cols[i]]` over injective `cols`, for an
/// `n x m` row-major matrix with `n <= m`.
pub fn solve_assignment(cost: &[f64], n: usize, m: usize) -> Result<Assignment> {
    if cost.len() != n * m {
        return Err(Error::DimensionMismatch { expected: n * m, got: cost.len() });
    }
    if n > m {
        return Err(Error::invalid(format!("assignment needs rows <= cols, got {n} x {m}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("assignment costs must be finite"));
    }
    if n == 0 {
        return Ok(Assignment { cols: Vec::new(), cost: 0.0 });
    }
    // 1-based arrays; column 0 is the virtual root
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut row_of = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    let mut minv = vec![0.0; m + 1];
    let mut used = vec![false; m + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            let row = &cost[(i0 - 1) * m..i0 * m];
            for j in 1..=m {
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
            for j in 0..=m {
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
    let mut cols = vec![0; n];
    for j in 1..=m {
        if row_of[j] > 0 {
            cols[row_of[j] - 1] = j - 1;
        }
    }
    let total = cols.iter().enumerate().map(|(i, &j)| cost[i * m + j]).sum();
    Ok(Assignment { cols, cost: total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(cost: &[f64], n: usize) -> f64 {
        fn rec(cost: &[f64], n: usize, i: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if i == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(cost, n, i + 1, used, acc + cost[i * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, n, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..=7 {
            for _ in 0..20 {
                let c: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let a = solve_assignment(&c, n, n).unwrap();
                let mut seen = a.cols.clone();
                seen.sort();
                assert_eq!(seen, (0..n).collect::<Vec<_>>());
                assert!((a.cost - brute_force(&c, n)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crossing_pair() {
        // two points at 0, 1 and targets at 1, 0: identity costs 2, swap costs 0
        let c = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(solve_assignment(&c, 2, 2).unwrap().cols, vec![1, 0]);
    }

    #[test]
    fn rectangular_and_errors() {
        let c = [3.0, 1.0, 2.0, 0.5, 4.0, 4.0];
        let a = solve_assignment(&c, 2, 3).unwrap();
        assert_eq!(a.cols, vec![1, 0]);
        assert!(solve_assignment(&c, 3, 2).is_err());
        assert!(solve_assignment(&c, 2, 2).is_err());
        assert!(solve_assignment(&[f64::NAN], 1, 1).is_err());
    }
}
