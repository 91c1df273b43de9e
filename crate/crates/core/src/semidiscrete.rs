//! Lagrangian particle solver: `N` particle trajectories, each a Hermite
//! spline through `n` knots, fitted against target densities through
//! Wasserstein penalties.
//!
//! The objective is
//!
//! ```text
//! (1/N) sum_j sum_i c_ph((X^i_j, d_i V^i_j), (X^{i+1}_j, d_i V^{i+1}_j)) / d_i^3
//!   + sum_t W2^2(empirical at knot k_t, target_t) / (2 eps_t^2)
//! ```
//!
//! with positions and velocities both free. `W2^2` between the particles and
//! an equal-size quantized target is computed by optimal assignment (or by
//! entropic transport above [`ASSIGNMENT_LIMIT`] particles). The matching is
//! frozen during each quasi-Newton run and recomputed between runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::assignment::solve_assignment;
use crate::cloud::quantize_density;
use crate::error::{Error, Result};
use crate::grid::DensityGrid;
use crate::lbfgs::{minimize, LbfgsOptions, LbfgsStatus};
use crate::phase_ot::{sinkhorn_pairwise, CostMatrix, PairwiseOptions};
use crate::splines::{optimal_velocities, scaled_segment_energy_raw, CubicPath};

/// Largest particle count solved by exact assignment in [`PenaltyMode::Auto`].
pub const ASSIGNMENT_LIMIT: usize = 512;

/// Particle positions and velocities at every knot.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleBundle {
    times: Vec<f64>,
    dim: usize,
    n: usize,
    /// `[knot][particle][axis]`
    positions: Vec<Vec<Vec<f64>>>,
    velocities: Vec<Vec<Vec<f64>>>,
}

impl ParticleBundle {
    pub fn new(times: Vec<f64>, positions: Vec<Vec<Vec<f64>>>, velocities: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::invalid("a bundle needs at least 2 knots"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("knot times must be strictly increasing"));
        }
        if positions.len() != times.len() || velocities.len() != times.len() {
            return Err(Error::DimensionMismatch { expected: times.len(), got: positions.len() });
        }
        let n = positions[0].len();
        if n == 0 {
            return Err(Error::invalid("a bundle needs at least one particle"));
        }
        let dim = positions[0][0].len();
        for k in positions.iter().chain(&velocities) {
            if k.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: k.len() });
            }
            for p in k {
                if p.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
                }
                if p.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("bundle coordinates must be finite"));
                }
            }
        }
        Ok(Self { times, dim, n, positions, velocities })
    }

    /// Bundle at rest: velocities zero.
    pub fn at_rest(times: Vec<f64>, positions: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let v = positions.iter().map(|k| k.iter().map(|p| vec![0.0; p.len()]).collect()).collect();
        Self::new(times, positions, v)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particles(&self) -> usize {
        self.n
    }

    pub fn knots(&self) -> usize {
        self.times.len()
    }

    /// Positions `[knot][particle]`.
    pub fn positions(&self) -> &[Vec<Vec<f64>>] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec<Vec<f64>>] {
        &self.velocities
    }

    /// Hermite spline of particle `j`.
    pub fn path(&self, j: usize) -> Result<CubicPath> {
        CubicPath::from_hermite(
            self.times.clone(),
            self.positions.iter().map(|k| k[j].clone()).collect(),
            self.velocities.iter().map(|k| k[j].clone()).collect(),
        )
    }

    /// Replaces every particle's velocities by the energy-minimizing ones.
    pub fn with_optimal_velocities(&self) -> Result<Self> {
        let mut out = self.clone();
        for j in 0..self.n {
            let pts: Vec<&[f64]> = self.positions.iter().map(|k| k[j].as_slice()).collect();
            let v = optimal_velocities(&self.times, &pts)?;
            for (i, vi) in v.into_iter().enumerate() {
                out.velocities[i][j] = vi;
            }
        }
        Ok(out)
    }

    fn flat_len(&self) -> usize {
        2 * self.knots() * self.n * self.dim
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.flat_len());
        for k in self.positions.iter().chain(&self.velocities) {
            for p in k {
                x.extend_from_slice(p);
            }
        }
        x
    }

    fn set_flat(&mut self, x: &[f64]) {
        let d = self.dim;
        let mut it = x.chunks(d);
        for k in self.positions.iter_mut().chain(self.velocities.iter_mut()) {
            for p in k.iter_mut() {
                p.copy_from_slice(it.next().unwrap());
            }
        }
    }

    pub fn to_csv(&self) -> String {
        crate::io::bundle_to_csv(&self.positions, &self.velocities)
    }
}

/// Quantized target cloud attached to one knot.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTarget {
    pub knot: usize,
    pub points: Vec<Vec<f64>>,
    pub epsilon: f64,
}

impl PenaltyTarget {
    pub fn new(knot: usize, points: Vec<Vec<f64>>, epsilon: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("target cloud is empty"));
        }
        check_epsilon(epsilon)?;
        Ok(Self { knot, points, epsilon })
    }

    /// Quantizes `density` into `count` uniform points.
    pub fn from_density(knot: usize, density: &DensityGrid, count: usize, epsilon: f64) -> Result<Self> {
        let cloud = quantize_density(density, count)?;
        Self::new(knot, cloud.points().iter().map(|p| p.x.clone()).collect(), epsilon)
    }

    /// `1 / (2 eps^2)`.
    pub fn weight(&self) -> f64 {
        0.5 / (self.epsilon * self.epsilon)
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::invalid(format!("penalty epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyMode {
    /// Assignment up to [`ASSIGNMENT_LIMIT`] particles, entropic above.
    Auto,
    Assignment,
    /// Entropic coupling with epsilon relative to the median squared distance.
    Entropic { relative_epsilon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathCost {
    /// Hermite spline energy with free knot velocities.
    Spline,
    /// `sum_i |X^{i+1} - X^i|^2 / d_i`; velocities are ignored.
    Speed,
}

/// Everything but the unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct SdvProblem {
    pub targets: Vec<PenaltyTarget>,
    pub path_cost: PathCost,
    /// Weight of `(1/N) sum_j |X^0_j - X^1_j|^2 / 2`; zero except for extrapolation.
    pub geodesic_weight: f64,
    pub penalty_mode: PenaltyMode,
}

impl SdvProblem {
    pub fn new(targets: Vec<PenaltyTarget>) -> Self {
        Self { targets, path_cost: PathCost::Spline, geodesic_weight: 0.0, penalty_mode: PenaltyMode::Auto }
    }

    fn check(&self, b: &ParticleBundle) -> Result<()> {
        for t in &self.targets {
            if t.knot >= b.knots() {
                return Err(Error::invalid(format!("target knot {} but bundle has {} knots", t.knot, b.knots())));
            }
            if t.points.iter().any(|p| p.len() != b.dim()) {
                return Err(Error::DimensionMismatch { expected: b.dim(), got: t.points[0].len() });
            }
        }
        if self.geodesic_weight != 0.0 && b.knots() < 2 {
            return Err(Error::invalid("geodesic term needs two knots"));
        }
        Ok(())
    }
}

/// Matched target point per particle, plus the constant that turns
/// `(1/N) sum |X_j - b_j|^2` back into the penalty value.
#[derive(Debug, Clone, PartialEq)]
struct Matching {
    anchors: Vec<Vec<f64>>,
    offset: f64,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn match_cloud(x: &[Vec<f64>], y: &[Vec<f64>], mode: PenaltyMode) -> Result<(f64, Matching)> {
    let (n, m) = (x.len(), y.len());
    let mut cost = Vec::with_capacity(n * m);
    for p in x {
        for q in y {
            cost.push(sq(p, q));
        }
    }
    let assignment = match mode {
        PenaltyMode::Assignment => true,
        PenaltyMode::Auto => n <= ASSIGNMENT_LIMIT && n == m,
        PenaltyMode::Entropic { .. } => false,
    };
    if assignment {
        if n != m {
            return Err(Error::DimensionMismatch { expected: n, got: m });
        }
        let a = solve_assignment(&cost, n, n)?;
        let anchors = a.cols.iter().map(|&j| y[j].clone()).collect();
        return Ok((a.cost / n as f64, Matching { anchors, offset: 0.0 }));
    }
    let rel = match mode {
        PenaltyMode::Entropic { relative_epsilon } => relative_epsilon,
        _ => 1e-3,
    };
    let c = CostMatrix { rows: n, cols: m, values: cost };
    let eps = crate::phase_ot::relative_epsilon(&c, rel)?;
    let (pi, _) = sinkhorn_pairwise(&c, &vec![1.0 / n as f64; n], &vec![1.0 / m as f64; m], eps, &PairwiseOptions::default())?;
    let value = pi.cost(&c);
    let dim = x[0].len();
    let anchors: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut b = vec![0.0; dim];
            for (j, q) in y.iter().enumerate() {
                let w = pi.get(i, j) * n as f64;
                b.iter_mut().zip(q).for_each(|(s, v)| *s += w * v);
            }
            b
        })
        .collect();
    let frozen: f64 = x.iter().zip(&anchors).map(|(p, b)| sq(p, b)).sum::<f64>() / n as f64;
    Ok((value, Matching { anchors, offset: value - frozen }))
}

/// Squared Wasserstein distance between the uniform clouds `positions` and
/// `target`, and its gradient in the positions with the matching held fixed.
pub fn w2_penalty(positions: &[Vec<f64>], target: &[Vec<f64>], mode: PenaltyMode) -> Result<(f64, Vec<Vec<f64>>)> {
    if positions.is_empty() || target.is_empty() {
        return Err(Error::invalid("empty cloud"));
    }
    let (value, m) = match_cloud(positions, target, mode)?;
    let s = 2.0 / positions.len() as f64;
    let grad = positions.iter().zip(&m.anchors).map(|(p, b)| p.iter().zip(b).map(|(x, y)| s * (x - y)).collect()).collect();
    Ok((value, grad))
}

fn matchings(b: &ParticleBundle, problem: &SdvProblem) -> Result<Vec<Matching>> {
    problem.targets.iter().map(|t| match_cloud(&b.positions[t.knot], &t.points, problem.penalty_mode).map(|r| r.1)).collect()
}

/// Path part of the objective, `(1/N) sum_j c(X_j, V_j)`.
pub fn path_term(b: &ParticleBundle, cost: PathCost) -> f64 {
    let mut e = 0.0;
    for i in 0..b.knots() - 1 {
        let d = b.times[i + 1] - b.times[i];
        for j in 0..b.n {
            let (x, y) = (&b.positions[i][j], &b.positions[i + 1][j]);
            e += match cost {
                PathCost::Spline => scaled_segment_energy_raw(x, &b.velocities[i][j], y, &b.velocities[i + 1][j], d),
                PathCost::Speed => sq(x, y) / d,
            };
        }
    }
    e / b.n as f64
}

/// Value and flat gradient with matchings frozen.
fn frozen_eval(b: &ParticleBundle, problem: &SdvProblem, m: &[Matching], grad: &mut [f64]) -> f64 {
    let (n, d) = (b.n, b.dim);
    let nf = n as f64;
    grad.iter_mut().for_each(|g| *g = 0.0);
    let xi = |knot: usize, j: usize, a: usize| (knot * n + j) * d + a;
    let voff = b.knots() * n * d;
    let mut value = path_term(b, problem.path_cost);
    for i in 0..b.knots() - 1 {
        let dt = b.times[i + 1] - b.times[i];
        for j in 0..n {
            let (x, y) = (&b.positions[i][j], &b.positions[i + 1][j]);
            match problem.path_cost {
                PathCost::Spline => {
                    let (v, w) = (&b.velocities[i][j], &b.velocities[i + 1][j]);
                    for a in 0..d {
                        let diff = x[a] - y[a];
                        let gx = (24.0 * diff / dt.powi(3) + 12.0 * (v[a] + w[a]) / (dt * dt)) / nf;
                        grad[xi(i, j, a)] += gx;
                        grad[xi(i + 1, j, a)] -= gx;
                        grad[voff + xi(i, j, a)] += (4.0 * (2.0 * v[a] + w[a]) / dt + 12.0 * diff / (dt * dt)) / nf;
                        grad[voff + xi(i + 1, j, a)] += (4.0 * (2.0 * w[a] + v[a]) / dt + 12.0 * diff / (dt * dt)) / nf;
                    }
                }
                PathCost::Speed => {
                    for a in 0..d {
                        let gx = 2.0 * (x[a] - y[a]) / dt / nf;
                        grad[xi(i, j, a)] += gx;
                        grad[xi(i + 1, j, a)] -= gx;
                    }
                }
            }
        }
    }
    if problem.geodesic_weight != 0.0 {
        let gw = problem.geodesic_weight;
        for j in 0..n {
            let (x, y) = (&b.positions[0][j], &b.positions[1][j]);
            value += gw * 0.5 * sq(x, y) / nf;
            for a in 0..d {
                let g = gw * (x[a] - y[a]) / nf;
                grad[xi(0, j, a)] += g;
                grad[xi(1, j, a)] -= g;
            }
        }
    }
    for (t, mt) in problem.targets.iter().zip(m) {
        let w = t.weight();
        let mut s = 0.0;
        for j in 0..n {
            let x = &b.positions[t.knot][j];
            s += sq(x, &mt.anchors[j]);
            for a in 0..d {
                grad[xi(t.knot, j, a)] += w * 2.0 * (x[a] - mt.anchors[j][a]) / nf;
            }
        }
        value += w * (s / nf + mt.offset);
    }
    value
}

/// Full objective with freshly computed matchings.
pub fn sdv_objective(b: &ParticleBundle, problem: &SdvProblem) -> Result<f64> {
    problem.check(b)?;
    let m = matchings(b, problem)?;
    let mut g = vec![0.0; b.flat_len()];
    Ok(frozen_eval(b, problem, &m, &mut g))
}

/// Gradient of [`sdv_objective`] with respect to positions and velocities,
/// `(d/dX, d/dV)` indexed `[knot][particle][axis]`, matchings held fixed.
#[allow(clippy::type_complexity)]
pub fn sdv_gradient(b: &ParticleBundle, problem: &SdvProblem) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>)> {
    problem.check(b)?;
    let m = matchings(b, problem)?;
    let mut g = vec![0.0; b.flat_len()];
    frozen_eval(b, problem, &m, &mut g);
    let mut out = b.clone();
    out.set_flat(&g);
    Ok((out.positions, out.velocities))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdOptions {
    pub lbfgs: LbfgsOptions,
    /// Maximal number of matching updates.
    pub max_rounds: usize,
}

impl Default for SdOptions {
    fn default() -> Self {
        Self { lbfgs: LbfgsOptions::default(), max_rounds: 50 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport {
    pub rounds: usize,
    pub iterations: usize,
    pub status: LbfgsStatus,
    /// Objective at the start and after every round.
    pub objective_history: Vec<f64>,
    pub grad_norm: f64,
    /// True when the last round neither moved the iterate nor the matching.
    pub matching_stable: bool,
}

impl OptimizeReport {
    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().unwrap()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("round,objective\n");
        for (r, v) in self.objective_history.iter().enumerate() {
            s.push_str(&format!("{r},{v:e}\n"));
        }
        s
    }
}

/// Alternates quasi-Newton runs with frozen matchings and matching updates.
/// Never returns a bundle with a larger objective than the initial one.
pub fn optimize(b0: &ParticleBundle, problem: &SdvProblem, opts: &SdOptions) -> Result<(ParticleBundle, OptimizeReport)> {
    problem.check(b0)?;
    let mut cur = b0.clone();
    let mut m = matchings(&cur, problem)?;
    let mut g = vec![0.0; cur.flat_len()];
    let f0 = frozen_eval(&cur, problem, &m, &mut g);
    let mut history = vec![f0];
    let mut best = (cur.clone(), f0);
    let mut iterations = 0;
    let mut status = LbfgsStatus::Converged;
    let mut stable = false;
    let mut rounds = 0;
    while rounds < opts.max_rounds {
        rounds += 1;
        let mut trial = cur.clone();
        let (x, rep) = minimize(
            |x, g| {
                trial.set_flat(x);
                frozen_eval(&trial, problem, &m, g)
            },
            cur.to_flat(),
            &opts.lbfgs,
        );
        iterations += rep.iterations;
        status = rep.status;
        cur.set_flat(&x);
        let new_m = matchings(&cur, problem)?;
        let f = frozen_eval(&cur, problem, &new_m, &mut g);
        history.push(f);
        log::debug!("round {rounds}: {} iterations, objective {f:e}", rep.iterations);
        if f < best.1 {
            best = (cur.clone(), f);
        }
        let same = new_m == m;
        m = new_m;
        if same || rep.iterations == 0 {
            stable = same;
            break;
        }
    }
    if status == LbfgsStatus::LineSearchFailed {
        log::warn!("optimizer stopped on a line-search failure; returning the best iterate");
    }
    let (bundle, _) = best;
    let m = matchings(&bundle, problem)?;
    frozen_eval(&bundle, problem, &m, &mut g);
    let grad_norm = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok((bundle, OptimizeReport { rounds, iterations, status, objective_history: history, grad_norm, matching_stable: stable }))
}

/// One stage of [`multiscale_solve`]: per-target epsilons and the standard
/// deviation of the noise added before the stage starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub epsilons: Vec<f64>,
    pub noise: f64,
}

/// Runs [`optimize`] stage by stage, warm-starting each stage from the
/// previous result perturbed by seeded Gaussian noise.
pub fn multiscale_solve(
    b0: &ParticleBundle,
    problem: &SdvProblem,
    stages: &[Stage],
    seed: u64,
    opts: &SdOptions,
) -> Result<(ParticleBundle, Vec<OptimizeReport>)> {
    if stages.is_empty() {
        return Err(Error::invalid("at least one stage is required"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = b0.clone();
    let mut reports = Vec::with_capacity(stages.len());
    for (k, st) in stages.iter().enumerate() {
        if st.epsilons.len() != problem.targets.len() {
            return Err(Error::DimensionMismatch { expected: problem.targets.len(), got: st.epsilons.len() });
        }
        let mut p = problem.clone();
        for (t, e) in p.targets.iter_mut().zip(&st.epsilons) {
            check_epsilon(*e)?;
            t.epsilon = *e;
        }
        if k > 0 && st.noise > 0.0 {
            let normal = Normal::new(0.0, st.noise).map_err(|e| Error::invalid(e.to_string()))?;
            let mut x = cur.to_flat();
            x.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            cur.set_flat(&x);
        }
        let (b, rep) = optimize(&cur, &p, opts)?;
        log::info!("stage {k}: objective {:e}", rep.final_objective());
        cur = b;
        reports.push(rep);
    }
    Ok((cur, reports))
}

/// Every knot starts at the target cloud `middle`, in a seeded random
/// order, at rest.
pub fn init_quantized_middle(times: &[f64], middle: &[Vec<f64>], seed: u64) -> Result<ParticleBundle> {
    let mut pts = middle.to_vec();
    pts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ParticleBundle::at_rest(times.to_vec(), vec![pts; times.len()])
}

/// Knot `i` starts at `clouds[i]` with particle `j` taking point `j` of
/// every cloud; velocities are the spline-optimal ones.
pub fn init_coupled(times: &[f64], clouds: &[Vec<Vec<f64>>]) -> Result<ParticleBundle> {
    ParticleBundle::at_rest(times.to_vec(), clouds.to_vec())?.with_optimal_velocities()
}

/// Geodesic extrapolation: targets at knots 0 and 1 of three equally spaced
/// knots, knot 2 free, plus the `(1/N) sum |X^0 - X^1|^2 / 2` term.
pub fn sd_extrapolate(
    first: &PenaltyTarget,
    second: &PenaltyTarget,
    delta: f64,
    opts: &SdOptions,
) -> Result<(ParticleBundle, OptimizeReport)> {
    if first.knot != 0 || second.knot != 1 {
        return Err(Error::invalid("extrapolation targets must sit on knots 0 and 1"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("knot spacing must be positive, got {delta}")));
    }
    let n = first.points.len();
    let (_, m) = match_cloud(&first.points, &second.points, PenaltyMode::Auto)?;
    if m.anchors.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: m.anchors.len() });
    }
    let third: Vec<Vec<f64>> =
        first.points.iter().zip(&m.anchors).map(|(a, b)| a.iter().zip(b).map(|(x, y)| 2.0 * y - x).collect()).collect();
    let times = vec![0.0, delta, 2.0 * delta];
    let b0 = init_coupled(&times, &[first.points.clone(), m.anchors, third])?;
    let mut problem = SdvProblem::new(vec![first.clone(), second.clone()]);
    problem.geodesic_weight = 1.0;
    optimize(&b0, &problem, opts)
}
