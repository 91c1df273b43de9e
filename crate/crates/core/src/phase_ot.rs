//! Entropic transport between weighted clouds in phase space under the
//! Hermite cost, with most-likely-map extraction.

use std::time::Instant;

use rayon::prelude::*;

use crate::cloud::WeightedPhaseCloud;
use crate::error::{Error, Result};
use crate::mm_sinkhorn::SolveReport;
use crate::splines::{hermite_energy_raw, CubicPath};

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    /// Median entry (mean of the two middle entries for even counts).
    pub fn median(&self) -> f64 {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }
}

/// `C[i][j] = c_ph(A_i, B_j)`.
pub fn phase_cost_matrix(a: &WeightedPhaseCloud, b: &WeightedPhaseCloud) -> Result<CostMatrix> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let (rows, cols) = (a.len(), b.len());
    let mut values = vec![0.0; rows * cols];
    values.par_chunks_mut(cols).zip(a.points()).for_each(|(row, p)| {
        for (c, q) in row.iter_mut().zip(b.points()) {
            *c = hermite_energy_raw(&p.x, &p.v, &q.x, &q.v);
        }
    });
    Ok(CostMatrix { rows, cols, values })
}

/// Absolute epsilon from one relative to the median cost entry.
pub fn relative_epsilon(cost: &CostMatrix, relative: f64) -> Result<f64> {
    if !(relative > 0.0 && relative.is_finite()) {
        return Err(Error::invalid(format!("relative epsilon must be positive, got {relative}")));
    }
    let mut scale = cost.median();
    if scale <= 0.0 {
        let pos: Vec<f64> = cost.values.iter().copied().filter(|c| *c > 0.0).collect();
        scale = if pos.is_empty() { 1.0 } else { pos.iter().sum::<f64>() / pos.len() as f64 };
    }
    Ok(relative * scale)
}

/// Transport plan between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl CouplingMatrix {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if weights.len() != rows * cols || alpha.len() != rows || beta.len() != cols {
            return Err(Error::invalid("coupling shape does not match its marginals"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("coupling weights must be nonnegative"));
        }
        Ok(Self { rows, cols, weights, alpha, beta })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.weights.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for r in self.weights.chunks(self.cols) {
            s.iter_mut().zip(r).for_each(|(a, b)| *a += b);
        }
        s
    }

    /// Shannon entropy `-sum pi log pi`.
    pub fn entropy(&self) -> f64 {
        -self.weights.iter().filter(|w| **w > 0.0).map(|w| w * w.ln()).sum::<f64>()
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.weights.iter().zip(&c.values).map(|(w, c)| w * c).sum()
    }

    /// `<pi, C> - epsilon H(pi)`.
    pub fn entropic_objective(&self, c: &CostMatrix, epsilon: f64) -> f64 {
        self.cost(c) - epsilon * self.entropy()
    }

    /// `i,j,weight` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,weight\n");
        for i in 0..self.rows {
            for j in 0..self.cols {
                s.push_str(&format!("{i},{j},{:e}\n", self.get(i, j)));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub check_every: usize,
}

impl Default for PairwiseOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iters: 10_000, check_every: 10 }
    }
}

fn lse(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Log-domain Sinkhorn for `min <pi, C> - epsilon H(pi)` with marginals
/// `alpha`, `beta`. The returned coupling is
/// `diag(u) exp(-C / epsilon) diag(v)` after the final column update.
pub fn sinkhorn_pairwise(
    cost: &CostMatrix,
    alpha: &[f64],
    beta: &[f64],
    epsilon: f64,
    opts: &PairwiseOptions,
) -> Result<(CouplingMatrix, SolveReport)> {
    let (n, m) = (cost.rows, cost.cols);
    if alpha.len() != n || beta.len() != m {
        return Err(Error::invalid("marginal lengths do not match the cost matrix"));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    for w in alpha.iter().chain(beta) {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(Error::invalid("marginal weights must be positive"));
        }
    }
    let start = Instant::now();
    let la: Vec<f64> = alpha.iter().map(|a| a.ln()).collect();
    let lb: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
    let k: Vec<f64> = cost.values.iter().map(|c| -c / epsilon).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let every = opts.check_every.max(1);
    while iterations < opts.max_iters {
        let prev = ((iterations + 1) % every == 0).then(|| (f.clone(), g.clone()));
        f.par_iter_mut().enumerate().for_each(|(i, fi)| {
            *fi = la[i] - lse((0..m).map(|j| k[i * m + j] + g[j]));
        });
        g.par_iter_mut().enumerate().for_each(|(j, gj)| {
            *gj = lb[j] - lse((0..n).map(|i| k[i * m + j] + f[i]));
        });
        iterations += 1;
        if f.iter().chain(&g).any(|x| !x.is_finite()) {
            return Err(Error::Diverged);
        }
        if let Some((pf, pg)) = prev {
            let delta = f.iter().zip(&pf).chain(g.iter().zip(&pg)).fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
            history.push((iterations, delta));
            if delta < opts.tol {
                converged = true;
                break;
            }
        }
    }
    let weights: Vec<f64> = (0..n * m).map(|idx| (k[idx] + f[idx / m] + g[idx % m]).exp()).collect();
    let pi = CouplingMatrix::new(n, m, weights, alpha.to_vec(), beta.to_vec())?;
    let row_err: f64 = pi.row_sums().iter().zip(alpha).map(|(a, b)| (a - b).abs()).sum();
    let col_err: f64 = pi.col_sums().iter().zip(beta).map(|(a, b)| (a - b).abs()).sum();
    if !converged {
        log::warn!("pairwise Sinkhorn stopped after {iterations} iterations");
    }
    let report = SolveReport {
        iterations,
        residual_history: history,
        marginal_residuals: vec![row_err, col_err],
        converged,
        wall_time: start.elapsed(),
    };
    Ok((pi, report))
}

/// Row-wise argmax of the coupling; ties go to the lowest column index.
pub fn most_likely_map(pi: &CouplingMatrix) -> Vec<usize> {
    pi.weights
        .chunks(pi.cols)
        .map(|r| {
            let mut best = 0;
            for (j, w) in r.iter().enumerate() {
                if *w > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Hermite cubic on `[0, 1]` from `A_i` to `B_{map[i]}`, per row.
pub fn hermite_paths(a: &WeightedPhaseCloud, b: &WeightedPhaseCloud, map: &[usize]) -> Result<Vec<CubicPath>> {
    if map.len() != a.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: map.len() });
    }
    map.iter()
        .zip(a.points())
        .map(|(&j, p)| {
            let q = b.points().get(j).ok_or_else(|| Error::invalid(format!("map index {j} out of range")))?;
            CubicPath::from_hermite(vec![0.0, 1.0], vec![p.x.clone(), q.x.clone()], vec![p.v.clone(), q.v.clone()])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PhasePoint;
    use crate::splines::hermite_energy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: Vec<(Vec<f64>, Vec<f64>)>) -> WeightedPhaseCloud {
        WeightedPhaseCloud::uniform(pts.into_iter().map(|(x, v)| PhasePoint::new(x, v).unwrap()).collect()).unwrap()
    }

    #[test]
    fn cost_matrix_entries() {
        let a = cloud(vec![(vec![1.0, 2.0], vec![0.0, 0.0])]);
        assert_eq!(phase_cost_matrix(&a, &a).unwrap().values, vec![0.0]);
        let b = cloud(vec![(vec![1.0, 2.0], vec![1.0, -2.0])]);
        assert!((phase_cost_matrix(&b, &b).unwrap().values[0] - 60.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut r = |k: usize| {
            cloud((0..k).map(|_| (vec![rng.gen_range(-1.0..1.0)], vec![rng.gen_range(-1.0..1.0)])).collect())
        };
        let (a, b) = (r(3), r(2));
        let c = phase_cost_matrix(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                assert_eq!(c.get(i, j), hermite_energy(&a.points()[i], &b.points()[j]).unwrap());
            }
        }
        assert!(phase_cost_matrix(&a, &cloud(vec![(vec![0.0, 0.0], vec![0.0, 0.0])])).is_err());
    }

    #[test]
    fn trivial_and_limit_couplings() {
        let c = CostMatrix { rows: 1, cols: 1, values: vec![7.0] };
        let (pi, _) = sinkhorn_pairwise(&c, &[1.0], &[1.0], 1e-3, &PairwiseOptions::default()).unwrap();
        assert!((pi.get(0, 0) - 1.0).abs() < 1e-12);

        let c = CostMatrix { rows: 2, cols: 3, values: vec![0.0, 1.0, 2.0, 3.0, 1.0, 0.5] };
        let (a, b) = ([0.5, 0.5], [1.0 / 3.0; 3]);
        let (pi, _) = sinkhorn_pairwise(&c, &a, &b, 1e9, &PairwiseOptions::default()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((pi.get(i, j) - a[i] * b[j]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn small_epsilon_picks_zero_cost_permutation() {
        let c = CostMatrix { rows: 2, cols: 2, values: vec![100.0, 0.0, 0.0, 100.0] };
        let (pi, rep) = sinkhorn_pairwise(&c, &[0.5, 0.5], &[0.5, 0.5], 1.0, &PairwiseOptions::default()).unwrap();
        assert!(rep.converged);
        assert!((pi.get(0, 1) - 0.5).abs() < 1e-3 && pi.get(0, 0) < 1e-3);
        assert_eq!(most_likely_map(&pi), vec![1, 0]);
    }

    #[test]
    fn argmax_rows_and_ties() {
        let pi = CouplingMatrix::new(2, 2, vec![0.4, 0.1, 0.2, 0.3], vec![0.5; 2], vec![0.5; 2]).unwrap();
        assert_eq!(most_likely_map(&pi), vec![0, 1]);
        let pi = CouplingMatrix::new(1, 3, vec![1.0 / 3.0; 3], vec![1.0], vec![1.0 / 3.0; 3]).unwrap();
        assert_eq!(most_likely_map(&pi), vec![0]);
    }

    #[test]
    fn hermite_paths_reproduce_data() {
        let a = cloud(vec![(vec![0.0], vec![1.0]), (vec![2.0], vec![0.5])]);
        let b = cloud(vec![(vec![1.0], vec![1.0]), (vec![-1.0], vec![0.0])]);
        let paths = hermite_paths(&a, &b, &[0, 1]).unwrap();
        assert_eq!(paths[0].energy(), 0.0);
        let (x, v) = paths[1].eval(1.0);
        assert!((x[0] + 1.0).abs() < 1e-10 && v[0].abs() < 1e-10);
        let total: f64 = paths.iter().map(|p| p.energy()).sum();
        let direct = hermite_energy(&a.points()[1], &b.points()[1]).unwrap();
        assert!((total - direct).abs() < 1e-9 * direct);
        assert!(hermite_paths(&a, &b, &[0]).is_err());
    }
}
