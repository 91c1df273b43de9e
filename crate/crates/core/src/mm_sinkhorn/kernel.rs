use crate::error::{Error, Result};
use crate::grid::{Grid, TimeGrid};

/// Kernel entries are clamped from below to keep every path weight positive.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// Cost attached to the discrete path `x_0, ..., x_{N-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    /// `sum_i |x_{i+1} + x_{i-1} - 2 x_i|^2 / dtau^3`.
    Acceleration,
    /// `sum_i |x_{i+1} - x_i|^2 / dtau`.
    Speed,
    /// Three steps: `|x_2 - 2 x_1 + x_0|^2 / lambda^2 + |x_1 - x_0|^2 / lambda`.
    Extrapolation { lambda: f64 },
}

/// One-axis factor of a stencil kernel, indexed by the integer stencil
/// displacement `d` (second difference or first difference in grid units).
#[derive(Debug, Clone, PartialEq)]
pub struct AxisTable {
    values: Vec<f64>,
    offset: usize,
}

impl AxisTable {
    fn build(max_d: usize, spacing: f64, weight: f64, epsilon: f64) -> Self {
        let values = (0..=2 * max_d)
            .map(|i| {
                let d = i as f64 - max_d as f64;
                let c = weight * (d * spacing).powi(2);
                (-c / epsilon).exp().max(KERNEL_FLOOR)
            })
            .collect();
        Self { values, offset: max_d }
    }

    /// Factor value at displacement `d`.
    pub fn get(&self, d: isize) -> f64 {
        self.values[(d + self.offset as isize) as usize]
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same table multiplied entrywise by the local cost `weight (d h)^2`.
    pub(crate) fn cost_weighted(&self, spacing: f64, weight: f64) -> Vec<f64> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let d = i as f64 - self.offset as f64;
                v * weight * (d * spacing).powi(2)
            })
            .collect()
    }
}

/// Gibbs kernel `exp(-C / epsilon)` of a chain-structured path cost, stored
/// as per-axis stencil factors.
///
/// Second-order costs contribute a three-point factor at every interior step
/// (centred on `x_i`); first-order costs contribute a two-point factor per
/// consecutive pair. In 2D each factor is the product of its two axis tables.
#[derive(Debug, Clone)]
pub struct ChainKernel {
    pub(crate) grid: Grid,
    pub(crate) time: TimeGrid,
    pub(crate) epsilon: f64,
    pub(crate) cost: CostKind,
    /// Three-point tables, one per axis (empty for first-order costs).
    pub(crate) second: Vec<AxisTable>,
    pub(crate) second_weight: f64,
    /// Two-point tables, one per axis (empty when absent).
    pub(crate) first: Vec<AxisTable>,
    pub(crate) first_weight: f64,
}

impl ChainKernel {
    pub fn new(grid: Grid, time: TimeGrid, epsilon: f64, cost: CostKind) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
        }
        let n = time.n_steps();
        let dtau = time.dtau();
        let (second_weight, first_weight) = match cost {
            CostKind::Acceleration => {
                if n < 3 {
                    return Err(Error::invalid("acceleration cost needs at least 3 time steps"));
                }
                (1.0 / dtau.powi(3), 0.0)
            }
            CostKind::Speed => (0.0, 1.0 / dtau),
            CostKind::Extrapolation { lambda } => {
                if !(lambda > 0.0 && lambda.is_finite()) {
                    return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
                }
                if n != 3 {
                    return Err(Error::invalid("extrapolation cost needs exactly 3 time steps"));
                }
                (1.0 / (lambda * lambda), 1.0 / lambda)
            }
        };
        let nx = grid.nx();
        let axes = 0..grid.dim();
        let second: Vec<AxisTable> = if second_weight > 0.0 {
            axes.clone().map(|a| AxisTable::build(2 * (nx - 1), grid.h(a), second_weight, epsilon)).collect()
        } else {
            Vec::new()
        };
        let first: Vec<AxisTable> = if first_weight > 0.0 {
            axes.map(|a| AxisTable::build(nx - 1, grid.h(a), first_weight, epsilon)).collect()
        } else {
            Vec::new()
        };
        // the unit displacement of the leading term must survive the floor
        // on at least one axis, otherwise only exactly straight paths carry mass
        let leading = if second.is_empty() { &first } else { &second };
        if leading.iter().all(|t| t.get(1) <= KERNEL_FLOOR) {
            return Err(Error::EpsilonTooSmall);
        }
        Ok(Self { grid, time, epsilon, cost, second, second_weight, first, first_weight })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn time(&self) -> &TimeGrid {
        &self.time
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn cost(&self) -> CostKind {
        self.cost
    }

    /// 2 for three-point stencils, 1 for two-point ones.
    pub fn order(&self) -> usize {
        if self.second.is_empty() {
            1
        } else {
            2
        }
    }

    /// Three-point factors, one per spatial axis.
    pub fn second_tables(&self) -> &[AxisTable] {
        &self.second
    }

    /// Two-point factors, one per spatial axis.
    pub fn first_tables(&self) -> &[AxisTable] {
        &self.first
    }

    /// Per-axis factor of the three-point stencil at nodes `(p, q, r)`.
    pub fn axis_factor(&self, axis: usize, p: usize, q: usize, r: usize) -> f64 {
        let (p, q, r) = (
            self.grid.multi_index(p)[axis] as isize,
            self.grid.multi_index(q)[axis] as isize,
            self.grid.multi_index(r)[axis] as isize,
        );
        self.second[axis].get(p - 2 * q + r)
    }

    /// Three-point stencil `K0(p, q, r)` (product over axes).
    pub fn stencil(&self, p: usize, q: usize, r: usize) -> f64 {
        (0..self.grid.dim()).map(|a| self.axis_factor(a, p, q, r)).product()
    }

    /// Two-point factor `K1(p, q)` (product over axes).
    pub fn pair_factor(&self, p: usize, q: usize) -> f64 {
        let (ip, iq) = (self.grid.multi_index(p), self.grid.multi_index(q));
        (0..self.grid.dim()).map(|a| self.first[a].get(iq[a] as isize - ip[a] as isize)).product()
    }

    /// Dense three-point stencil tensor, `nodes^3` entries in `[p][q][r]` order.
    pub fn stencil_tensor(&self) -> Vec<f64> {
        let n = self.grid.len();
        let mut out = Vec::with_capacity(n * n * n);
        for p in 0..n {
            for q in 0..n {
                for r in 0..n {
                    out.push(self.stencil(p, q, r));
                }
            }
        }
        out
    }
}

/// Builds the chain kernel; see [`ChainKernel::new`].
pub fn build_chain_kernel(grid: &Grid, time: &TimeGrid, epsilon: f64, cost: CostKind) -> Result<ChainKernel> {
    ChainKernel::new(grid.clone(), time.clone(), epsilon, cost)
}
