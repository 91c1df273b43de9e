//! Entropically regularized multimarginal transport on grids with
//! chain-structured path costs.
//!
//! The plan over discrete paths `(x_0, ..., x_{N-1})` is
//! `T = K * prod_k U^k(x_{j_k})`, with `K` a product of local stencil
//! factors and one scaling `U^k` per constrained step. Scalings are updated
//! Gauss-Seidel style, in increasing constraint order:
//! `U^k = rho_k / (contraction of T without U^k onto step j_k)`. The
//! contraction is computed by forward/backward message passing (see
//! [`engine`]), so one sweep costs `O(N nx^3)` in 1D and `O(N nx^5)` in 2D.

mod contract;
pub mod dense;
mod engine;
mod kernel;

use std::time::{Duration, Instant};

pub use kernel::{build_chain_kernel, AxisTable, ChainKernel, CostKind, KERNEL_FLOOR};

use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Grid};
use engine::{log_sum_exp, Engine, Msg, Scaling};

/// Node-pair count above which [`pair_marginal`] refuses to run.
pub const DEFAULT_PAIR_BUDGET: usize = 4_000_000;

/// A marginal constraint: the plan's marginal at `step` must equal `density`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub step: usize,
    pub density: DensityGrid,
}

impl Constraint {
    pub fn new(step: usize, density: DensityGrid) -> Self {
        Self { step, density }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop when the sup-norm change of the log-scalings drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Store messages and scalings as logarithms with stabilized contractions.
    pub log_domain: bool,
    /// Residual sampling period, in sweeps.
    pub check_every: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { tol: 1e-7, max_iters: 5000, log_domain: false, check_every: 10 }
    }
}

/// Log-scalings `log U^k = u^k / epsilon`, one array per constrained step.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialSet {
    steps: Vec<usize>,
    log_u: Vec<Vec<f64>>,
}

impl PotentialSet {
    /// All-ones scalings (`log U = 0`) on the given steps.
    pub fn ones(steps: &[usize], nodes: usize) -> Self {
        Self { steps: steps.to_vec(), log_u: vec![vec![0.0; nodes]; steps.len()] }
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn log_scalings(&self) -> &[Vec<f64>] {
        &self.log_u
    }

    /// Scalings `U^k` in linear form (may overflow for tiny epsilon).
    pub fn scalings(&self) -> Vec<Vec<f64>> {
        self.log_u.iter().map(|l| l.iter().map(|x| x.exp()).collect()).collect()
    }

    /// Log-scaling attached to `step`, if that step is constrained.
    pub fn log_scaling_at(&self, step: usize) -> Option<&[f64]> {
        self.steps.iter().position(|&s| s == step).map(|k| self.log_u[k].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    /// `(sweep, sup-norm change of log-scalings)` every `check_every` sweeps.
    pub residual_history: Vec<(usize, f64)>,
    /// L1 distance between computed and prescribed marginal, per constraint.
    pub marginal_residuals: Vec<f64>,
    pub converged: bool,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn final_residual(&self) -> Option<f64> {
        self.residual_history.last().map(|r| r.1)
    }

    /// Convergence log as CSV: `iteration,residual`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,residual\n");
        for (it, r) in &self.residual_history {
            s.push_str(&format!("{it},{r:e}\n"));
        }
        s
    }
}

fn validate_constraints(kernel: &ChainKernel, constraints: &[Constraint], min: usize) -> Result<()> {
    let steps: Vec<usize> = constraints.iter().map(|c| c.step).collect();
    kernel.time().check_constrained(&steps, min)?;
    for c in constraints {
        if c.density.grid() != kernel.grid() {
            return Err(Error::invalid(format!("constraint at step {} lives on a different grid", c.step)));
        }
    }
    Ok(())
}

/// Working state of a solve: engine plus per-step scalings.
struct Chain<'a> {
    engine: Engine<'a>,
    /// Scaling per time step (None for unconstrained steps).
    scalings: Vec<Option<Scaling>>,
}

impl<'a> Chain<'a> {
    fn new(kernel: &'a ChainKernel, pot: &PotentialSet, log_domain: bool) -> Result<Self> {
        let engine = Engine::new(kernel, log_domain);
        let mut scalings = vec![None; engine.n_steps()];
        for (s, l) in pot.steps.iter().zip(&pot.log_u) {
            scalings[*s] = Some(engine.prepare_scaling(l)?);
        }
        Ok(Self { engine, scalings })
    }

    fn apply(&self, mut msg: Msg, step: usize) -> Msg {
        if let Some(w) = &self.scalings[step] {
            self.engine.apply_trailing(&mut msg, w);
        }
        msg
    }

    /// `W_{m+1} B_{m+1}`, the input of the backward step producing `B_m`.
    fn back_input(&self, b_next: &Msg, next: usize) -> Msg {
        self.apply(b_next.clone(), next)
    }

    /// Backward messages `B_m` for `m >= lo` (entries below `lo` are None).
    fn backward(&self, lo: usize) -> Result<Vec<Option<Msg>>> {
        let n = self.engine.n_steps();
        let mut b: Vec<Option<Msg>> = vec![None; n];
        b[n - 1] = Some(self.engine.ones());
        let stop = lo.max(self.engine.order() - 1);
        for m in (stop..n - 1).rev() {
            let input = self.back_input(b[m + 1].as_ref().unwrap(), m + 1);
            b[m] = Some(self.engine.back(&input)?);
        }
        Ok(b)
    }

    /// First pre-message of the forward pass: order 2 starts at step 1, order 1 at step 0.
    fn forward_start(&self) -> (usize, Msg) {
        if self.engine.order() == 2 {
            (1, self.engine.init_pair(self.scalings[0].as_ref()))
        } else {
            (0, self.engine.ones())
        }
    }

    /// Log of the marginal at `step` with that step's own scaling removed.
    fn log_premarginal(&self, pre: Option<&Msg>, b: &[Option<Msg>], step: usize) -> Vec<f64> {
        let e = &self.engine;
        if e.order() == 2 && step == 0 {
            // sum_q K1(p,q) W_1(q) B_1(p,q), without W_0
            let pre1 = e.init_pair(None);
            let f1 = self.apply(pre1, 1);
            e.log_marginal(&f1, b[1].as_ref().unwrap(), true)
        } else {
            e.log_marginal(pre.unwrap(), b[step].as_ref().unwrap(), false)
        }
    }

    /// One Gauss-Seidel sweep over all constraints.
    fn sweep(&mut self, pot: &mut PotentialSet, log_rho: &[Vec<f64>]) -> Result<()> {
        let b = self.backward(pot.steps[0])?;
        let mut cursor: Option<(usize, Msg)> = None;
        for k in 0..pot.steps.len() {
            let s = pot.steps[k];
            let pre = if self.engine.order() == 2 && s == 0 {
                None
            } else {
                let (mut m, mut msg) = match cursor.take() {
                    Some((m, f)) => (m + 1, self.engine.front(&f)?),
                    None => self.forward_start(),
                };
                while m < s {
                    let f = self.apply(msg, m);
                    msg = self.engine.front(&f)?;
                    m += 1;
                }
                Some(msg)
            };
            let lm = self.log_premarginal(pre.as_ref(), &b, s);
            let new: Vec<f64> = log_rho[k]
                .iter()
                .zip(&lm)
                .map(|(r, m)| if *r == f64::NEG_INFINITY { *r } else { r - m })
                .collect();
            if new.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
                return Err(Error::Diverged);
            }
            self.scalings[s] = Some(self.engine.prepare_scaling(&new)?);
            pot.log_u[k] = new;
            if let Some(msg) = pre {
                cursor = Some((s, self.apply(msg, s)));
            }
        }
        Ok(())
    }
}

/// Runs Gauss-Seidel Sinkhorn sweeps until the log-scalings settle.
///
/// Hitting `max_iters` is not an error; the report then has `converged = false`.
pub fn sinkhorn_solve(
    kernel: &ChainKernel,
    constraints: &[Constraint],
    options: &SolveOptions,
) -> Result<(PotentialSet, SolveReport)> {
    validate_constraints(kernel, constraints, 2)?;
    let start = Instant::now();
    let steps: Vec<usize> = constraints.iter().map(|c| c.step).collect();
    let nodes = kernel.grid().len();
    let log_rho: Vec<Vec<f64>> =
        constraints.iter().map(|c| c.density.weights().iter().map(|w| w.ln()).collect()).collect();
    let mut pot = PotentialSet::ones(&steps, nodes);
    let mut chain = Chain::new(kernel, &pot, options.log_domain)?;
    let every = options.check_every.max(1);
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iters {
        let snapshot = ((iterations + 1) % every == 0).then(|| pot.log_u.clone());
        chain.sweep(&mut pot, &log_rho)?;
        iterations += 1;
        if let Some(prev) = snapshot {
            let mut delta = 0.0f64;
            for ((new, old), lr) in pot.log_u.iter().zip(&prev).zip(&log_rho) {
                for ((a, b), r) in new.iter().zip(old).zip(lr) {
                    if *r > f64::NEG_INFINITY {
                        delta = delta.max((a - b).abs());
                    }
                }
            }
            history.push((iterations, delta));
            log::info!("sweep {iterations}: residual {delta:e}");
            if delta < options.tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        log::warn!("Sinkhorn stopped after {iterations} sweeps without reaching tol {:e}", options.tol);
    }
    let messages = ChainMessages::compute_with(kernel, &pot, options.log_domain)?;
    let marginal_residuals = constraints
        .iter()
        .map(|c| messages.marginal(c.step).map(|m| m.l1_distance(&c.density)))
        .collect::<Result<Vec<_>>>()?;
    let report =
        SolveReport { iterations, residual_history: history, marginal_residuals, converged, wall_time: start.elapsed() };
    Ok((pot, report))
}

/// All forward and backward messages for fixed scalings; answers marginal
/// and cost queries.
pub struct ChainMessages<'a> {
    chain: Chain<'a>,
    /// `F_m` including `W_m` (index 0 unused for order 2).
    forward: Vec<Option<Msg>>,
    backward: Vec<Option<Msg>>,
    log_mass: f64,
}

impl<'a> ChainMessages<'a> {
    pub fn compute(kernel: &'a ChainKernel, pot: &PotentialSet) -> Result<Self> {
        Self::compute_with(kernel, pot, true)
    }

    pub fn compute_with(kernel: &'a ChainKernel, pot: &PotentialSet, log_domain: bool) -> Result<Self> {
        for &s in &pot.steps {
            if s >= kernel.time().n_steps() {
                return Err(Error::invalid(format!("potential step {s} outside time grid")));
            }
        }
        let chain = Chain::new(kernel, pot, log_domain)?;
        let n = chain.engine.n_steps();
        let backward = chain.backward(0)?;
        let mut forward: Vec<Option<Msg>> = vec![None; n];
        let (m0, pre) = chain.forward_start();
        let mut f = chain.apply(pre, m0);
        for m in m0..n {
            if m > m0 {
                f = chain.apply(chain.engine.front(forward[m - 1].as_ref().unwrap())?, m);
            }
            forward[m] = Some(f.clone());
        }
        let last = n - 1;
        let log_mass = chain.engine.log_total(forward[last].as_ref().unwrap(), backward[last].as_ref().unwrap());
        if !log_mass.is_finite() {
            return Err(Error::Diverged);
        }
        Ok(Self { chain, forward, backward, log_mass })
    }

    /// Log of the total (unnormalized) plan mass.
    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    /// Log of the unnormalized marginal at `step`.
    pub fn log_marginal_unnormalized(&self, step: usize) -> Result<Vec<f64>> {
        let e = &self.chain.engine;
        if step >= e.n_steps() {
            return Err(Error::invalid(format!("step {step} outside time grid")));
        }
        let out = if e.order() == 2 && step == 0 {
            e.log_marginal(self.forward[1].as_ref().unwrap(), self.backward[1].as_ref().unwrap(), true)
        } else {
            e.log_marginal(self.forward[step].as_ref().unwrap(), self.backward[step].as_ref().unwrap(), false)
        };
        Ok(out)
    }

    /// Marginal of the plan at `step`, normalized to unit mass.
    pub fn marginal(&self, step: usize) -> Result<DensityGrid> {
        let lm = self.log_marginal_unnormalized(step)?;
        let w: Vec<f64> = lm.iter().map(|x| (x - self.log_mass).exp()).collect();
        DensityGrid::new(self.chain.engine.kernel.grid().clone(), w)
    }

    /// Expected path cost `<T, C>` of the normalized plan.
    pub fn transport_cost(&self) -> Result<f64> {
        let e = &self.chain.engine;
        let n = e.n_steps();
        let dim = e.kernel.grid().dim();
        let mut log_terms = Vec::new();
        // local factor between steps (m, m+1) for order 1, centred at m for order 2
        let range = if e.order() == 2 { 1..n - 1 } else { 0..n - 1 };
        for m in range {
            let input = self.chain.back_input(self.backward[m + 1].as_ref().unwrap(), m + 1);
            for axis in 0..dim {
                let weighted = e.back_cost_weighted(&input, axis)?;
                log_terms.push(e.log_total(self.forward[m].as_ref().unwrap(), &weighted));
            }
        }
        if e.order() == 2 && !e.kernel.first.is_empty() {
            // first-pair speed term of the extrapolation cost
            let g = e.kernel.grid();
            let nodes = g.len();
            let lm = e.kernel.first_weight;
            let f1 = self.forward[1].as_ref().unwrap();
            let b1 = self.backward[1].as_ref().unwrap();
            let mut vals = Vec::with_capacity(nodes * nodes);
            for p in 0..nodes {
                let xp = g.node(p);
                for q in 0..nodes {
                    let xq = g.node(q);
                    let c: f64 = lm * xp.iter().zip(&xq).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                    let i = p * nodes + q;
                    let lw = if e.log_domain {
                        f1.data[i] + b1.data[i]
                    } else {
                        (f1.data[i] * b1.data[i]).ln() + f1.scale + b1.scale
                    };
                    vals.push(lw + c.ln());
                }
            }
            log_terms.push(log_sum_exp(vals.into_iter()));
        }
        Ok(log_terms.into_iter().map(|l| (l - self.log_mass).exp()).sum())
    }

    /// Joint law of `(x_i, x_j)`, `i < j`, as a row-major `nodes x nodes` matrix.
    pub fn pair_marginal(&self, i: usize, j: usize, budget: usize) -> Result<Vec<f64>> {
        let e = &self.chain.engine;
        let n = e.n_steps();
        if !(i < j && j < n) {
            return Err(Error::invalid(format!("pair marginal needs i < j < {n}, got ({i}, {j})")));
        }
        let nodes = e.nodes();
        if nodes.saturating_mul(nodes) > budget {
            return Err(Error::SizeGuard(format!(
                "pair marginal over {nodes} x {nodes} node pairs exceeds budget {budget}"
            )));
        }
        let order = e.order();
        let mut logs = vec![f64::NEG_INFINITY; nodes * nodes];
        for v in 0..nodes {
            // forward message restricted to x_i = v, at step `m`
            let (mut m, mut msg) = if order == 2 && i == 0 {
                let mut f = self.forward[1].clone().unwrap();
                restrict(&mut f, v, nodes, true, e.log_domain);
                (1, f)
            } else {
                let mut f = self.forward[i].clone().unwrap();
                restrict(&mut f, v, nodes, false, e.log_domain);
                (i, f)
            };
            if !has_mass(&msg, e.log_domain) {
                continue;
            }
            while m < j {
                msg = self.chain.apply(e.front(&msg)?, m + 1);
                m += 1;
            }
            let row = e.log_marginal(&msg, self.backward[j].as_ref().unwrap(), false);
            logs[v * nodes..(v + 1) * nodes].copy_from_slice(&row);
        }
        Ok(logs.into_iter().map(|l| (l - self.log_mass).exp()).collect())
    }
}

fn restrict(msg: &mut Msg, v: usize, nodes: usize, leading: bool, log_domain: bool) {
    let zero = if log_domain { f64::NEG_INFINITY } else { 0.0 };
    for (idx, x) in msg.data.iter_mut().enumerate() {
        let node = if leading { idx / nodes } else { idx % nodes };
        if node != v {
            *x = zero;
        }
    }
}

fn has_mass(msg: &Msg, log_domain: bool) -> bool {
    if log_domain {
        msg.data.iter().any(|x| *x > f64::NEG_INFINITY)
    } else {
        msg.data.iter().any(|x| *x > 0.0)
    }
}

/// Marginal of the plan defined by `potentials` at time step `step`.
pub fn marginal_at(potentials: &PotentialSet, kernel: &ChainKernel, step: usize) -> Result<DensityGrid> {
    ChainMessages::compute(kernel, potentials)?.marginal(step)
}

/// Joint law of `(x_i, x_j)`; refuses grids with more than `budget` node pairs.
pub fn pair_marginal(
    potentials: &PotentialSet,
    kernel: &ChainKernel,
    i: usize,
    j: usize,
    budget: usize,
) -> Result<Vec<f64>> {
    let nodes = kernel.grid().len();
    if nodes.saturating_mul(nodes) > budget {
        return Err(Error::SizeGuard(format!("pair marginal over {nodes} x {nodes} node pairs exceeds budget {budget}")));
    }
    ChainMessages::compute(kernel, potentials)?.pair_marginal(i, j, budget)
}

/// Expected path cost `<T, C>` of the normalized plan.
pub fn transport_cost(potentials: &PotentialSet, kernel: &ChainKernel) -> Result<f64> {
    ChainMessages::compute(kernel, potentials)?.transport_cost()
}

/// Sup-norm change each scaling would undergo under one more Gauss-Seidel
/// update with all other scalings held fixed.
pub fn fixed_point_defect(
    potentials: &PotentialSet,
    kernel: &ChainKernel,
    constraints: &[Constraint],
) -> Result<Vec<f64>> {
    let msgs = ChainMessages::compute(kernel, potentials)?;
    constraints
        .iter()
        .map(|c| {
            let lm = msgs.log_marginal_unnormalized(c.step)?;
            Ok(c.density
                .weights()
                .iter()
                .zip(&lm)
                .filter(|(r, _)| **r > 0.0)
                .map(|(r, m)| (r.ln() - m).abs())
                .fold(0.0, f64::max))
        })
        .collect()
}

/// Three-step extrapolation: constraints at steps 0 and 1, free step 2.
/// Returns the marginal at step 2.
pub fn extrapolate(
    kernel: &ChainKernel,
    first: &DensityGrid,
    second: &DensityGrid,
    options: &SolveOptions,
) -> Result<(DensityGrid, SolveReport)> {
    if !matches!(kernel.cost(), CostKind::Extrapolation { .. }) {
        return Err(Error::invalid("extrapolation needs a kernel built with the extrapolation cost"));
    }
    let constraints = [Constraint::new(0, first.clone()), Constraint::new(1, second.clone())];
    let (pot, report) = sinkhorn_solve(kernel, &constraints, options)?;
    let m = ChainMessages::compute_with(kernel, &pot, options.log_domain)?.marginal(2)?;
    Ok((m, report))
}

/// Marginals at every time step.
pub fn all_marginals(potentials: &PotentialSet, kernel: &ChainKernel) -> Result<Vec<DensityGrid>> {
    let msgs = ChainMessages::compute(kernel, potentials)?;
    (0..kernel.time().n_steps()).map(|s| msgs.marginal(s)).collect()
}

/// Grid shared by a set of densities, if they agree.
pub fn common_grid(densities: &[&DensityGrid]) -> Option<Grid> {
    let g = densities.first()?.grid().clone();
    densities.iter().all(|d| *d.grid() == g).then_some(g)
}
