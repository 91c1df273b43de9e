//! Regular Cartesian grids, time grids and normalized densities on them.

use crate::error::{Error, Result};

/// Tolerance on total mass before a density is flagged as unnormalized.
pub const MASS_WARN_TOL: f64 = 1e-6;

/// Regular Cartesian grid in 1 or 2 dimensions with `nx` nodes per axis.
///
/// Nodes sit at `lo + i * h` (both endpoints included). Flat node indices are
/// row-major: in 2D, node `(a, b)` has index `a * nx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    nx: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Grid {
    pub fn new(nx: usize, lo: &[f64], hi: &[f64]) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim > 2 {
            return Err(Error::invalid(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if hi.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: hi.len() });
        }
        if nx < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 points per axis, got {nx}")));
        }
        for (l, h) in lo.iter().zip(hi) {
            if !(l.is_finite() && h.is_finite() && l < h) {
                return Err(Error::invalid(format!("grid box must satisfy lo < hi, got [{l}, {h}]")));
            }
        }
        Ok(Self { dim, nx, lo: lo.to_vec(), hi: hi.to_vec() })
    }

    pub fn new_1d(nx: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(nx, &[lo], &[hi])
    }

    pub fn new_2d(nx: usize, lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        Self::new(nx, &lo, &hi)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Spacing along `axis`.
    pub fn h(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.nx - 1) as f64
    }

    /// Total number of nodes, `nx^dim`.
    pub fn len(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume element of one node cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.h(a)).product()
    }

    /// Per-axis integer indices of a flat node index.
    pub fn multi_index(&self, node: usize) -> [usize; 2] {
        match self.dim {
            1 => [node, 0],
            _ => [node / self.nx, node % self.nx],
        }
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        self.lo[axis] + i as f64 * self.h(axis)
    }

    /// Physical coordinates of a flat node index.
    pub fn node(&self, node: usize) -> Vec<f64> {
        let idx = self.multi_index(node);
        (0..self.dim).map(|a| self.coord(a, idx[a])).collect()
    }

    /// Flat index of the node nearest to `point` (clamped to the box).
    pub fn nearest_node(&self, point: &[f64]) -> usize {
        let mut flat = 0;
        for (a, &p) in point.iter().enumerate().take(self.dim) {
            let t = ((p - self.lo[a]) / self.h(a)).round();
            let i = t.clamp(0.0, (self.nx - 1) as f64) as usize;
            flat = flat * self.nx + i;
        }
        flat
    }
}

/// Uniform time discretization with `n_steps` nodes `tau_i = i * dtau`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    n_steps: usize,
    dtau: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, dtau: f64) -> Result<Self> {
        if n_steps < 2 {
            return Err(Error::invalid(format!("time grid needs at least 2 steps, got {n_steps}")));
        }
        if !(dtau > 0.0 && dtau.is_finite()) {
            return Err(Error::invalid(format!("dtau must be positive, got {dtau}")));
        }
        Ok(Self { n_steps, dtau })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dtau(&self) -> f64 {
        self.dtau
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dtau
    }

    /// Checks that constrained step indices are strictly increasing and on the grid.
    pub fn check_constrained(&self, steps: &[usize], min_count: usize) -> Result<()> {
        if steps.len() < min_count {
            return Err(Error::invalid(format!(
                "need at least {min_count} constrained time steps, got {}",
                steps.len()
            )));
        }
        for w in steps.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid("constrained time steps must be strictly increasing"));
            }
        }
        if let Some(&last) = steps.last() {
            if last >= self.n_steps {
                return Err(Error::invalid(format!(
                    "constrained step {last} outside time grid of {} steps",
                    self.n_steps
                )));
            }
        }
        Ok(())
    }

    /// Step index whose time equals `t` (within 1e-9 relative), if any.
    pub fn step_of_time(&self, t: f64) -> Option<usize> {
        let s = t / self.dtau;
        let r = s.round();
        if r < 0.0 || (s - r).abs() > 1e-9 * s.abs().max(1.0) {
            return None;
        }
        let r = r as usize;
        (r < self.n_steps).then_some(r)
    }
}

/// Nonnegative weights on the nodes of a [`Grid`], normalized to unit mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    grid: Grid,
    weights: Vec<f64>,
}

impl DensityGrid {
    /// Builds a density from raw nonnegative weights, renormalizing to mass 1.
    pub fn new(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: weights.len() });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("density weights must be finite and nonnegative"));
        }
        let mass: f64 = weights.iter().sum();
        if mass <= 0.0 {
            return Err(Error::invalid("density has zero mass"));
        }
        let weights = weights.into_iter().map(|w| w / mass).collect();
        Ok(Self { grid, weights })
    }

    /// Renormalizes, warning when the input mass is off by more than [`MASS_WARN_TOL`].
    pub fn new_checked(grid: Grid, weights: Vec<f64>) -> Result<Self> {
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > MASS_WARN_TOL {
            log::warn!("input density mass {mass} deviates from 1; renormalizing");
        }
        Self::new(grid, weights)
    }

    /// Unit mass on a single node.
    pub fn one_hot(grid: Grid, node: usize) -> Result<Self> {
        if node >= grid.len() {
            return Err(Error::invalid(format!("node {node} outside grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[node] = 1.0;
        Self::new(grid, w)
    }

    pub fn uniform(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, weights: vec![1.0 / n as f64; n] }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Center of mass.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.dim()];
        for (node, &w) in self.weights.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (a, x) in self.grid.node(node).into_iter().enumerate() {
                m[a] += w * x;
            }
        }
        m
    }

    /// Trace of the covariance (total spatial variance).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.weights
            .iter()
            .enumerate()
            .map(|(node, &w)| {
                let x = self.grid.node(node);
                w * x.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .sum()
    }

    /// L1 distance between weight vectors (grids assumed equal).
    pub fn l1_distance(&self, other: &DensityGrid) -> f64 {
        self.weights.iter().zip(&other.weights).map(|(a, b)| (a - b).abs()).sum()
    }

    /// Largest threshold `t` such that nodes with weight `>= t` carry at least
    /// a fraction `q` of the total mass.
    pub fn quartile_level(&self, q: f64) -> f64 {
        quartile_level(&self.weights, q)
    }
}

/// Threshold whose super-level set holds at least a fraction `q` of the mass.
///
/// A degenerate input (all zero, or `q` outside `(0, 1)`) returns the maximum weight.
pub fn quartile_level(weights: &[f64], q: f64) -> f64 {
    let mut sorted: Vec<f64> = weights.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let max = sorted.first().copied().unwrap_or(0.0);
    let total: f64 = sorted.iter().sum();
    if !(q > 0.0 && q < 1.0) || total <= 0.0 {
        return max;
    }
    let target = q * total;
    let mut cum = 0.0;
    for &w in &sorted {
        cum += w;
        // relative slack absorbs summation roundoff on exact ties
        if cum >= target * (1.0 - 1e-12) {
            return w;
        }
    }
    sorted.last().copied().unwrap_or(max)
}

/// One isotropic Gaussian component of a mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

/// Isotropic Gaussian mixture used to build test densities.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<GaussianComponent>,
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::invalid("mixture needs at least one component"));
        }
        let dim = components[0].mean.len();
        let mut total = 0.0;
        for c in &components {
            if c.mean.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: c.mean.len() });
            }
            if !(c.weight > 0.0) {
                return Err(Error::invalid("mixture weights must be positive"));
            }
            if !(c.variance > 0.0) {
                return Err(Error::invalid("mixture variances must be positive"));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("mixture weights must sum to 1, got {total}")));
        }
        Ok(Self { components })
    }

    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![GaussianComponent { weight: 1.0, mean, variance }])
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    pub fn pdf(&self, x: &[f64]) -> f64 {
        let d = x.len() as f64;
        self.components
            .iter()
            .map(|c| {
                let r2: f64 = x.iter().zip(&c.mean).map(|(a, b)| (a - b) * (a - b)).sum();
                c.weight * (-r2 / (2.0 * c.variance)).exp()
                    / (2.0 * std::f64::consts::PI * c.variance).powf(d / 2.0)
            })
            .sum()
    }

    /// Evaluates the mixture at the grid nodes and renormalizes.
    pub fn rasterize(&self, grid: &Grid) -> Result<DensityGrid> {
        if self.dim() != grid.dim() {
            return Err(Error::DimensionMismatch { expected: grid.dim(), got: self.dim() });
        }
        let weights: Vec<f64> = (0..grid.len()).map(|n| self.pdf(&grid.node(n))).collect();
        let riemann: f64 = weights.iter().sum::<f64>() * grid.cell_volume();
        if !(riemann >= 1e-8) {
            return Err(Error::DensityEscapesDomain);
        }
        DensityGrid::new(grid.clone(), weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_basics() {
        let g = Grid::new_2d(5, [0.0, -1.0], [1.0, 1.0]).unwrap();
        assert_eq!(g.len(), 25);
        assert!((g.h(1) - 0.5).abs() < 1e-15);
        assert_eq!(g.node(7), vec![0.25, 0.0]);
        assert_eq!(g.nearest_node(&[0.26, 0.01]), 7);
        assert!(Grid::new_1d(1, 0.0, 1.0).is_err());
        assert!(Grid::new_1d(4, 1.0, 1.0).is_err());
    }

    #[test]
    fn time_grid_constraints() {
        let t = TimeGrid::new(16, 1.0).unwrap();
        assert!(t.check_constrained(&[0, 5, 10, 15], 2).is_ok());
        assert!(t.check_constrained(&[0, 16], 2).is_err());
        assert!(t.check_constrained(&[3, 3], 2).is_err());
        assert_eq!(TimeGrid::new(5, 0.25).unwrap().step_of_time(0.75), Some(3));
        assert_eq!(TimeGrid::new(5, 0.25).unwrap().step_of_time(0.8), None);
    }

    #[test]
    fn single_gaussian_symmetric() {
        let g = Grid::new_1d(41, -1.0, 1.0).unwrap();
        let d = GaussianMixture::single(vec![0.0], 0.05).unwrap().rasterize(&g).unwrap();
        let w = d.weights();
        let argmax = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        assert_eq!(argmax, 20);
        for i in 0..20 {
            assert!((w[i] - w[40 - i]).abs() < 1e-15);
        }
        assert!((d.mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_bumps_equal_maxima() {
        let g = Grid::new_1d(101, 0.0, 1.0).unwrap();
        let mix = GaussianMixture::new(vec![
            GaussianComponent { weight: 0.5, mean: vec![0.2], variance: 0.001 },
            GaussianComponent { weight: 0.5, mean: vec![0.8], variance: 0.001 },
        ])
        .unwrap();
        let d = mix.rasterize(&g).unwrap();
        assert!((d.weights()[20] - d.weights()[80]).abs() < 1e-10);
        assert!(d.weights()[20] > d.weights()[19] && d.weights()[20] > d.weights()[21]);
    }

    #[test]
    fn escaping_density_rejected() {
        let g = Grid::new_1d(50, 0.0, 1.0).unwrap();
        let mix = GaussianMixture::single(vec![0.5 + 10.0 * 0.1 + 1.0], 0.01).unwrap();
        assert!(matches!(mix.rasterize(&g), Err(Error::DensityEscapesDomain)));
    }

    #[test]
    fn quartile_examples() {
        assert_eq!(quartile_level(&[0.25; 4], 0.25), 0.25);
        assert_eq!(quartile_level(&[0.0, 1.0, 0.0], 0.7), 1.0);
        assert_eq!(quartile_level(&[0.1, 0.2, 0.3, 0.4], 0.25), 0.4);
        assert_eq!(quartile_level(&[0.1, 0.2, 0.3, 0.4], 0.5), 0.3);
        assert_eq!(quartile_level(&[0.0, 0.0], 0.5), 0.0);
    }
}
