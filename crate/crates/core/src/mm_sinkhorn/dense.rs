//! Brute-force reference solver that enumerates every discrete path.
//!
//! Only meant for tiny instances (`nodes^N <= 10^6`); used to check the
//! factorized message-passing solver.

use super::{Constraint, CostKind};
use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Grid, TimeGrid};
use crate::splines::{discrete_acceleration_cost, discrete_speed_cost, extrapolation_cost};

/// Maximal number of enumerated paths.
pub const DENSE_PATH_LIMIT: usize = 1_000_000;

/// Fully materialized plan over all paths, row-major in `(x_0, ..., x_{N-1})`.
#[derive(Debug, Clone)]
pub struct DensePlan {
    grid: Grid,
    n_steps: usize,
    plan: Vec<f64>,
    costs: Vec<f64>,
    pub sweeps: usize,
}

impl DensePlan {
    pub fn plan(&self) -> &[f64] {
        &self.plan
    }

    /// Path costs in the same order as [`plan`](Self::plan).
    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    fn node_at(&self, path: usize, step: usize) -> usize {
        let n = self.grid.len();
        (path / n.pow((self.n_steps - 1 - step) as u32)) % n
    }

    pub fn marginal(&self, step: usize) -> Result<DensityGrid> {
        let mut w = vec![0.0; self.grid.len()];
        for (i, t) in self.plan.iter().enumerate() {
            w[self.node_at(i, step)] += t;
        }
        DensityGrid::new(self.grid.clone(), w)
    }

    pub fn pair_marginal(&self, i: usize, j: usize) -> Vec<f64> {
        let n = self.grid.len();
        let mut w = vec![0.0; n * n];
        for (p, t) in self.plan.iter().enumerate() {
            w[self.node_at(p, i) * n + self.node_at(p, j)] += t;
        }
        w
    }

    pub fn transport_cost(&self) -> f64 {
        self.plan.iter().zip(&self.costs).map(|(t, c)| t * c).sum()
    }
}

fn path_cost(points: &[Vec<f64>], time: &TimeGrid, cost: CostKind) -> Result<f64> {
    match cost {
        CostKind::Acceleration => discrete_acceleration_cost(points, time.dtau()),
        CostKind::Speed => discrete_speed_cost(points, time.dtau()),
        CostKind::Extrapolation { lambda } => extrapolation_cost(&points[0], &points[1], &points[2], lambda),
    }
}

/// Solves the entropic multimarginal problem by explicit enumeration with
/// Gauss-Seidel scaling updates, iterated until the scalings stop moving
/// (relative change below `1e-14`) or `max_sweeps` is hit.
pub fn dense_solve_oracle(
    grid: &Grid,
    time: &TimeGrid,
    constraints: &[Constraint],
    epsilon: f64,
    cost: CostKind,
    max_sweeps: usize,
) -> Result<DensePlan> {
    let n = grid.len();
    let steps = time.n_steps();
    let total = (0..steps).try_fold(1usize, |acc, _| acc.checked_mul(n).filter(|t| *t <= DENSE_PATH_LIMIT));
    let total = total.ok_or_else(|| {
        Error::SizeGuard(format!("{n}^{steps} paths exceed the dense limit {DENSE_PATH_LIMIT}"))
    })?;
    let list: Vec<usize> = constraints.iter().map(|c| c.step).collect();
    time.check_constrained(&list, 2)?;

    let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.node(i)).collect();
    let mut costs = Vec::with_capacity(total);
    let mut kernel = Vec::with_capacity(total);
    let mut idx = vec![0usize; steps];
    for _ in 0..total {
        let pts: Vec<Vec<f64>> = idx.iter().map(|&i| coords[i].clone()).collect();
        let c = path_cost(&pts, time, cost)?;
        costs.push(c);
        kernel.push((-c / epsilon).exp());
        // odometer increment, last step fastest
        for s in (0..steps).rev() {
            idx[s] += 1;
            if idx[s] < n {
                break;
            }
            idx[s] = 0;
        }
    }

    let node_at = |path: usize, step: usize| (path / n.pow((steps - 1 - step) as u32)) % n;
    let mut u = vec![vec![1.0; n]; constraints.len()];
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut delta = 0.0f64;
        for k in 0..constraints.len() {
            let mut m = vec![0.0; n];
            for (p, kv) in kernel.iter().enumerate() {
                let mut w = *kv;
                for (k2, c) in constraints.iter().enumerate() {
                    if k2 != k {
                        w *= u[k2][node_at(p, c.step)];
                    }
                }
                m[node_at(p, constraints[k].step)] += w;
            }
            for (i, (r, mi)) in constraints[k].density.weights().iter().zip(&m).enumerate() {
                let new = if *r == 0.0 { 0.0 } else { r / mi };
                if !new.is_finite() {
                    return Err(Error::Diverged);
                }
                let old = u[k][i];
                if new > 0.0 {
                    delta = delta.max(((new - old) / new).abs());
                }
                u[k][i] = new;
            }
        }
        if delta < 1e-14 {
            break;
        }
    }
    let plan: Vec<f64> = kernel
        .iter()
        .enumerate()
        .map(|(p, kv)| constraints.iter().zip(&u).fold(*kv, |w, (c, uk)| w * uk[node_at(p, c.step)]))
        .collect();
    let mass: f64 = plan.iter().sum();
    let plan = plan.into_iter().map(|t| t / mass).collect();
    Ok(DensePlan { grid: grid.clone(), n_steps: steps, plan, costs, sweeps })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_feasible_path() {
        let g = Grid::new_1d(4, 0.0, 3.0).unwrap();
        let t = TimeGrid::new(3, 1.0).unwrap();
        let cs = [
            Constraint::new(0, DensityGrid::one_hot(g.clone(), 0).unwrap()),
            Constraint::new(2, DensityGrid::one_hot(g.clone(), 3).unwrap()),
        ];
        let d = dense_solve_oracle(&g, &t, &cs, 0.3, CostKind::Speed, 100).unwrap();
        // start and end fixed; intermediate node free but weighted by exp(-cost)
        let m0 = d.marginal(0).unwrap();
        assert!((m0.weights()[0] - 1.0).abs() < 1e-12);
        let one = [
            Constraint::new(0, DensityGrid::one_hot(g.clone(), 1).unwrap()),
            Constraint::new(1, DensityGrid::one_hot(g.clone(), 2).unwrap()),
            Constraint::new(2, DensityGrid::one_hot(g.clone(), 3).unwrap()),
        ];
        let d = dense_solve_oracle(&g, &t, &one, 0.3, CostKind::Acceleration, 100).unwrap();
        let p = 4 * 4 + 2 * 4 + 3;
        assert!((d.plan()[p] - 1.0).abs() < 1e-10);
        assert!(d.transport_cost() < 1e-12);
    }

    #[test]
    fn uniform_zero_cost_is_uniform() {
        let g = Grid::new_1d(3, 0.0, 1.0).unwrap();
        let t = TimeGrid::new(2, 1.0).unwrap();
        let u = DensityGrid::uniform(g.clone());
        let cs = [Constraint::new(0, u.clone()), Constraint::new(1, u)];
        // huge epsilon: cost negligible, plan is the independent one
        let d = dense_solve_oracle(&g, &t, &cs, 1e12, CostKind::Speed, 100).unwrap();
        for v in d.plan() {
            assert!((v - 1.0 / 9.0).abs() < 1e-10);
        }
    }

    #[test]
    fn size_guard() {
        let g = Grid::new_1d(40, 0.0, 1.0).unwrap();
        let t = TimeGrid::new(4, 1.0).unwrap();
        let u = DensityGrid::uniform(g.clone());
        let cs = [Constraint::new(0, u.clone()), Constraint::new(3, u)];
        assert!(matches!(
            dense_solve_oracle(&g, &t, &cs, 1.0, CostKind::Speed, 10),
            Err(Error::SizeGuard(_))
        ));
    }
}
