//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    /// Stop when the sup-norm of the gradient falls below this.
    pub gtol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, gtol: 1e-6, max_iters: 2000, c1: 1e-4, c2: 0.9, max_line_search: 40 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Converged,
    MaxIterations,
    /// Line search failed even from a steepest-descent restart; the best
    /// iterate is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub status: LbfgsStatus,
    pub value: f64,
    pub grad_norm: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

struct Probe {
    alpha: f64,
    f: f64,
    d: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

struct LineSearch<'a, F> {
    f: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    d0: f64,
    c1: f64,
    c2: f64,
    evals: usize,
}

impl<F: FnMut(&[f64], &mut [f64]) -> f64> LineSearch<'_, F> {
    fn probe(&mut self, alpha: f64) -> Probe {
        let x: Vec<f64> = self.x.iter().zip(self.dir).map(|(a, b)| a + alpha * b).collect();
        let mut g = vec![0.0; x.len()];
        let f = (self.f)(&x, &mut g);
        self.evals += 1;
        let d = dot(&g, self.dir);
        Probe { alpha, f, d, x, g }
    }

    fn armijo(&self, p: &Probe) -> bool {
        p.f.is_finite() && p.f <= self.f0 + self.c1 * p.alpha * self.d0
    }

    fn curvature(&self, p: &Probe) -> bool {
        p.d.abs() <= -self.c2 * self.d0
    }

    fn run(&mut self, alpha0: f64, max: usize) -> Option<Probe> {
        let mut prev = Probe { alpha: 0.0, f: self.f0, d: self.d0, x: self.x.to_vec(), g: Vec::new() };
        let mut alpha = alpha0;
        for i in 0..max {
            let p = self.probe(alpha);
            if !self.armijo(&p) || (i > 0 && p.f >= prev.f) {
                return self.zoom(prev, p, max);
            }
            if self.curvature(&p) {
                return Some(p);
            }
            if p.d >= 0.0 {
                return self.zoom(p, prev, max);
            }
            alpha *= 2.0;
            prev = p;
        }
        (prev.alpha > 0.0).then_some(prev)
    }

    fn zoom(&mut self, mut lo: Probe, mut hi: Probe, max: usize) -> Option<Probe> {
        for _ in 0..max {
            let (a, b) = (lo.alpha, hi.alpha);
            let mut t = cubic_min(&lo, &hi).unwrap_or(0.5 * (a + b));
            let (l, u) = (a.min(b), a.max(b));
            let margin = 0.1 * (u - l);
            if !(t > l + margin && t < u - margin) {
                t = 0.5 * (a + b);
            }
            if (u - l) <= 1e-16 * u.max(1.0) {
                break;
            }
            let p = self.probe(t);
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Some(p);
                }
                if p.d * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
        }
        // accept the best sufficient-decrease point even without curvature
        (lo.alpha > 0.0 && lo.f < self.f0).then_some(lo)
    }
}

/// Minimizer of the cubic interpolating `(alpha, f, d)` at both probes.
fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.d + b.d - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.d * b.d;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let t = b.alpha - (b.alpha - a.alpha) * (b.d + d2 - d1) / (b.d - a.d + 2.0 * d2);
    t.is_finite().then_some(t)
}

/// Minimizes `f` from `x0`. The closure writes the gradient into its second
/// argument and returns the value.
pub fn minimize<F>(mut f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> (Vec<f64>, LbfgsReport)
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evaluations = 1;
    let mut history = vec![fx];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let mut status = LbfgsStatus::MaxIterations;
    if !fx.is_finite() {
        return (x, LbfgsReport { iterations, evaluations, status: LbfgsStatus::LineSearchFailed, value: fx, grad_norm: f64::NAN, history });
    }
    while iterations < opts.max_iters {
        if sup_norm(&g) < opts.gtol {
            status = LbfgsStatus::Converged;
            break;
        }
        let mut restarted = false;
        let accepted = loop {
            let dir = direction(&g, &mem);
            let d0 = dot(&g, &dir);
            let (dir, d0) = if d0 < 0.0 { (dir, d0) } else { (g.iter().map(|v| -v).collect(), -dot(&g, &g)) };
            let alpha0 = if mem.is_empty() { (1.0 / sup_norm(&g)).min(1.0) } else { 1.0 };
            let mut ls = LineSearch { f: &mut f, x: &x, dir: &dir, f0: fx, d0, c1: opts.c1, c2: opts.c2, evals: 0 };
            let res = ls.run(alpha0, opts.max_line_search);
            evaluations += ls.evals;
            match res {
                Some(p) => break Some(p),
                None if !restarted && !mem.is_empty() => {
                    mem.clear();
                    restarted = true;
                }
                None => break None,
            }
        };
        let Some(p) = accepted else {
            status = LbfgsStatus::LineSearchFailed;
            log::warn!("line search failed at iteration {iterations}, f = {fx:e}");
            break;
        };
        let s: Vec<f64> = p.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        x = p.x;
        g = p.g;
        fx = p.f;
        history.push(fx);
        iterations += 1;
    }
    if status == LbfgsStatus::MaxIterations && sup_norm(&g) < opts.gtol {
        status = LbfgsStatus::Converged;
    }
    let grad_norm = sup_norm(&g);
    (x, LbfgsReport { iterations, evaluations, status, value: fx, grad_norm, history })
}

/// Two-loop recursion: `-H g`.
fn direction(g: &[f64], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, rho) in mem.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in mem.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64], g: &mut [f64]) -> f64 {
        let mut f = 0.0;
        g.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..x.len() - 1 {
            let a = x[i + 1] - x[i] * x[i];
            let b = 1.0 - x[i];
            f += 100.0 * a * a + b * b;
            g[i] += -400.0 * a * x[i] - 2.0 * b;
            g[i + 1] += 200.0 * a;
        }
        f
    }

    #[test]
    fn solves_rosenbrock() {
        let (x, rep) = minimize(rosenbrock, vec![-1.2, 1.0, -0.5, 0.8], &LbfgsOptions::default());
        assert_eq!(rep.status, LbfgsStatus::Converged);
        for v in x {
            assert!((v - 1.0).abs() < 1e-5);
        }
        assert!(rep.history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn quadratic_and_stationary_start() {
        let quad = |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            g[1] = 20.0 * (x[1] + 1.0);
            (x[0] - 3.0).powi(2) + 10.0 * (x[1] + 1.0).powi(2)
        };
        let (x, rep) = minimize(quad, vec![0.0, 0.0], &LbfgsOptions::default());
        assert!((x[0] - 3.0).abs() < 1e-6 && (x[1] + 1.0).abs() < 1e-6);
        assert!(rep.iterations < 20);
        let (x, rep) = minimize(quad, vec![3.0, -1.0], &LbfgsOptions::default());
        assert_eq!(rep.iterations, 0);
        assert_eq!(x, vec![3.0, -1.0]);
    }
}
