//! Weighted point clouds in position-velocity (phase) space, and quantization
//! of grid densities into uniform clouds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::DensityGrid;

/// Seed used by the 2D quantizer's stratified initialization.
pub const QUANTIZE_SEED: u64 = 0x5eed_0001;

const LLOYD_ITERS: usize = 30;

/// A point `(x, v)` of the tangent bundle of `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: v.len() });
        }
        if x.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(Error::invalid("phase point coordinates must be finite"));
        }
        Ok(Self { x, v })
    }

    /// Point at rest.
    pub fn at_rest(x: Vec<f64>) -> Self {
        let v = vec![0.0; x.len()];
        Self { x, v }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Empirical measure `sum_i w_i delta_(x_i, v_i)` on phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedPhaseCloud {
    points: Vec<PhasePoint>,
    weights: Vec<f64>,
}

impl WeightedPhaseCloud {
    pub fn new(points: Vec<PhasePoint>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("cloud must contain at least one point"));
        }
        if points.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), got: weights.len() });
        }
        let dim = points[0].dim();
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.dim() });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("cloud weights must be finite and nonnegative"));
        }
        let mass: f64 = weights.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            if mass <= 0.0 {
                return Err(Error::invalid("cloud has zero mass"));
            }
            if (mass - 1.0).abs() > crate::grid::MASS_WARN_TOL {
                log::warn!("cloud mass {mass} deviates from 1; renormalizing");
            }
        }
        let weights = weights.into_iter().map(|w| w / mass).collect();
        Ok(Self { points, weights })
    }

    /// Cloud with equal weights `1/N`.
    pub fn uniform(points: Vec<PhasePoint>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn points(&self) -> &[PhasePoint] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Weighted mean position.
    pub fn mean_position(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (p, w) in self.points.iter().zip(&self.weights) {
            for (mi, xi) in m.iter_mut().zip(&p.x) {
                *mi += w * xi;
            }
        }
        m
    }
}

/// Quantizes a density into `count` uniformly weighted points at rest.
///
/// * `count == 1`: the barycenter.
/// * 1D: inverse CDF of the node distribution at the midpoints `(k - 1/2) / N`.
/// * 2D: weighted Lloyd iterations seeded by systematic (stratified) sampling
///   with a fixed seed.
pub fn quantize_density(density: &DensityGrid, count: usize) -> Result<WeightedPhaseCloud> {
    if count == 0 {
        return Err(Error::invalid("quantization needs at least one point"));
    }
    let positions = if count == 1 {
        vec![density.mean()]
    } else if density.grid().dim() == 1 {
        quantize_inverse_cdf(density, count)
    } else {
        quantize_lloyd(density, count, QUANTIZE_SEED)
    };
    WeightedPhaseCloud::uniform(positions.into_iter().map(PhasePoint::at_rest).collect())
}

fn quantize_inverse_cdf(density: &DensityGrid, count: usize) -> Vec<Vec<f64>> {
    let grid = density.grid();
    let w = density.weights();
    let mut out = Vec::with_capacity(count);
    let mut node = 0;
    let mut cum = w[0];
    for k in 0..count {
        let u = (k as f64 + 0.5) / count as f64;
        while cum < u && node + 1 < w.len() {
            node += 1;
            cum += w[node];
        }
        out.push(grid.node(node));
    }
    out
}

/// Node indices drawn by systematic resampling with one uniform offset.
fn stratified_nodes(weights: &[f64], count: usize, rng: &mut impl Rng) -> Vec<usize> {
    let offset: f64 = rng.gen();
    let mut out = Vec::with_capacity(count);
    let mut node = 0;
    let mut cum = weights[0];
    for k in 0..count {
        let u = (k as f64 + offset) / count as f64;
        while cum < u && node + 1 < weights.len() {
            node += 1;
            cum += weights[node];
        }
        out.push(node);
    }
    out
}

fn quantize_lloyd(density: &DensityGrid, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let grid = density.grid();
    let dim = grid.dim();
    let w = density.weights();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> =
        stratified_nodes(w, count, &mut rng).into_iter().map(|n| grid.node(n)).collect();
    let support: Vec<(Vec<f64>, f64)> = w
        .iter()
        .enumerate()
        .filter(|(_, &wi)| wi > 0.0)
        .map(|(n, &wi)| (grid.node(n), wi))
        .collect();

    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![vec![0.0; dim]; count];
        let mut mass = vec![0.0; count];
        for (x, wi) in &support {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d: f64 = center.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            mass[best] += wi;
            for (s, xi) in sums[best].iter_mut().zip(x) {
                *s += wi * xi;
            }
        }
        let mut moved = 0.0f64;
        for c in 0..count {
            // empty cells keep their center
            if mass[c] > 0.0 {
                for a in 0..dim {
                    let nc = sums[c][a] / mass[c];
                    moved = moved.max((nc - centers[c][a]).abs());
                    centers[c][a] = nc;
                }
            }
        }
        if moved < 1e-12 {
            break;
        }
    }
    centers
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GaussianMixture, Grid};

    #[test]
    fn dirac_quantizes_to_copies() {
        let g = Grid::new_1d(11, 0.0, 1.0).unwrap();
        let d = DensityGrid::one_hot(g, 3).unwrap();
        let q = quantize_density(&d, 5).unwrap();
        assert_eq!(q.len(), 5);
        for p in q.points() {
            assert!((p.x[0] - 0.3).abs() < 1e-15);
            assert_eq!(p.v, vec![0.0]);
        }
    }

    #[test]
    fn dirac_2d_quantizes_to_copies() {
        let g = Grid::new_2d(6, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let d = DensityGrid::one_hot(g.clone(), 14).unwrap();
        let q = quantize_density(&d, 5).unwrap();
        for p in q.points() {
            assert_eq!(p.x, g.node(14));
        }
    }

    #[test]
    fn uniform_quantization_mean() {
        // midpoint-quantile oracle for U[-1,1]: points -0.75,-0.25,0.25,0.75
        let g = Grid::new_1d(201, -1.0, 1.0).unwrap();
        let q = quantize_density(&DensityGrid::uniform(g), 4).unwrap();
        let m = q.mean_position()[0];
        assert!(m.abs() < 0.2);
        let xs: Vec<f64> = q.points().iter().map(|p| p.x[0]).collect();
        for (x, e) in xs.iter().zip([-0.75, -0.25, 0.25, 0.75]) {
            assert!((x - e).abs() <= 0.01 + 1e-12, "{xs:?}");
        }
    }

    #[test]
    fn single_point_is_barycenter() {
        let g = Grid::new_2d(21, [0.0, 0.0], [1.0, 1.0]).unwrap();
        let d = GaussianMixture::single(vec![0.3, 0.6], 0.01).unwrap().rasterize(&g).unwrap();
        let q = quantize_density(&d, 1).unwrap();
        let m = d.mean();
        assert!((q.points()[0].x[0] - m[0]).abs() < 1e-12);
        assert!((q.points()[0].x[1] - m[1]).abs() < 1e-12);
    }

    #[test]
    fn zero_count_rejected() {
        let g = Grid::new_1d(5, 0.0, 1.0).unwrap();
        assert!(quantize_density(&DensityGrid::uniform(g), 0).is_err());
    }

    #[test]
    fn large_count_mean_converges() {
        for dim in [1usize, 2] {
            let nx = 24;
            let g = if dim == 1 {
                Grid::new_1d(nx, 0.0, 1.0).unwrap()
            } else {
                Grid::new_2d(nx, [0.0, 0.0], [1.0, 1.0]).unwrap()
            };
            let mean = vec![0.4; dim];
            let d = GaussianMixture::single(mean, 0.02).unwrap().rasterize(&g).unwrap();
            let q = quantize_density(&d, 10 * nx).unwrap();
            let qm = q.mean_position();
            let dm = d.mean();
            for a in 0..dim {
                assert!((qm[a] - dm[a]).abs() < 3.0 * g.h(a), "dim {dim}: {qm:?} vs {dm:?}");
            }
        }
    }
}
