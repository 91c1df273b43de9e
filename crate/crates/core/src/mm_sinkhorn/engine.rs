//! Forward/backward message passing along the time chain.
//!
//! Second-order chains carry messages over pair states `(x_{m-1}, x_m)`;
//! first-order chains over single nodes. With `W_m` the scaling at step `m`
//! (1 for unconstrained steps):
//!
//! ```text
//! order 2: F_1(p,q)   = W_0(p) K1(p,q) W_1(q)          (K1 = 1 unless a first-pair factor exists)
//!          F_{m+1}(q,r) = W_{m+1}(r) sum_p F_m(p,q) K(p,q,r)
//!          B_{N-1}      = 1
//!          B_m(p,q)     = sum_r K(p,q,r) W_{m+1}(r) B_{m+1}(q,r)
//! order 1: F_0 = W_0,  F_{m+1}(r) = W_{m+1}(r) sum_q F_m(q) K(q,r)
//!          B_{N-1} = 1, B_m(q) = sum_r K(q,r) W_{m+1}(r) B_{m+1}(r)
//! ```
//!
//! The unnormalized marginal at step `m` is `sum_p F_m B_m` (order 2) or
//! `F_m B_m` (order 1). Messages are stored either linearly with one global
//! log-scale, or fully in the log domain.

use super::contract::{self, Shape, Stencil};
use super::kernel::ChainKernel;
use crate::error::{Error, Result};

/// A message tensor. Linear: value = `data * exp(scale)`. Log: value = `exp(data)`.
#[derive(Debug, Clone)]
pub(crate) struct Msg {
    pub data: Vec<f64>,
    pub scale: f64,
}

/// Scaling at one time step, prepared for the active numeric domain.
#[derive(Debug, Clone)]
pub(crate) struct Scaling {
    /// Linear: `exp(log_u - max)`; Log: `log_u`.
    pub values: Vec<f64>,
    /// Linear only: `max(log_u)`.
    pub scale: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Engine<'a> {
    pub kernel: &'a ChainKernel,
    pub log_domain: bool,
    nx: usize,
    dim: usize,
    nodes: usize,
}

fn sanitize_linear(mut data: Vec<f64>, scale: f64) -> Result<Msg> {
    let max = data.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0 && max.is_finite()) || data.iter().any(|x| x.is_nan()) {
        return Err(Error::Diverged);
    }
    let inv = 1.0 / max;
    data.iter_mut().for_each(|x| *x *= inv);
    Ok(Msg { data, scale: scale + max.ln() })
}

fn check_log(data: &[f64]) -> Result<()> {
    if data.iter().any(|x| x.is_nan() || *x == f64::INFINITY) || data.iter().all(|x| *x == f64::NEG_INFINITY) {
        return Err(Error::Diverged);
    }
    Ok(())
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY || m == f64::INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl<'a> Engine<'a> {
    pub fn new(kernel: &'a ChainKernel, log_domain: bool) -> Self {
        let nx = kernel.grid.nx();
        let dim = kernel.grid.dim();
        Self { kernel, log_domain, nx, dim, nodes: kernel.grid.len() }
    }

    pub fn order(&self) -> usize {
        self.kernel.order()
    }

    pub fn n_steps(&self) -> usize {
        self.kernel.time.n_steps()
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    fn msg_len(&self) -> usize {
        if self.order() == 2 {
            self.nodes * self.nodes
        } else {
            self.nodes
        }
    }

    fn shape(&self) -> Shape {
        let slots = self.order() * self.dim;
        Shape { nx: self.nx, rest: self.nx.pow(slots as u32 - 1), q_stride: self.nx.pow(self.dim as u32 - 1) }
    }

    fn stencil_tables(&self) -> (Stencil, Vec<&'a [f64]>) {
        if self.order() == 2 {
            (Stencil::Second, self.kernel.second.iter().map(|t| t.values()).collect())
        } else {
            (Stencil::First, self.kernel.first.iter().map(|t| t.values()).collect())
        }
    }

    pub fn prepare_scaling(&self, log_u: &[f64]) -> Result<Scaling> {
        if log_u.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::Diverged);
        }
        if self.log_domain {
            return Ok(Scaling { values: log_u.to_vec(), scale: 0.0 });
        }
        let max = log_u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::Diverged);
        }
        Ok(Scaling { values: log_u.iter().map(|x| (x - max).exp()).collect(), scale: max })
    }

    pub fn ones(&self) -> Msg {
        let fill = if self.log_domain { 0.0 } else { 1.0 };
        Msg { data: vec![fill; self.msg_len()], scale: 0.0 }
    }

    /// Multiplies the trailing node slot by `w`.
    pub fn apply_trailing(&self, msg: &mut Msg, w: &Scaling) {
        let n = self.nodes;
        for row in msg.data.chunks_mut(n) {
            if self.log_domain {
                row.iter_mut().zip(&w.values).for_each(|(x, u)| *x += u);
            } else {
                row.iter_mut().zip(&w.values).for_each(|(x, u)| *x *= u);
            }
        }
        msg.scale += w.scale;
    }

    /// Multiplies the leading node slot by `w` (order 2 only).
    fn apply_leading(&self, msg: &mut Msg, w: &Scaling) {
        let n = self.nodes;
        for (row, u) in msg.data.chunks_mut(n).zip(&w.values) {
            if self.log_domain {
                row.iter_mut().for_each(|x| *x += u);
            } else {
                row.iter_mut().for_each(|x| *x *= u);
            }
        }
        msg.scale += w.scale;
    }

    fn finish(&self, data: Vec<f64>, scale: f64) -> Result<Msg> {
        if self.log_domain {
            check_log(&data)?;
            Ok(Msg { data, scale: 0.0 })
        } else {
            sanitize_linear(data, scale)
        }
    }

    fn front_with(&self, msg: &Msg, tables: &[&[f64]], stencil: Stencil) -> Result<Msg> {
        let shape = self.shape();
        let mut cur = msg.data.clone();
        let mut out = vec![0.0; cur.len()];
        for t in tables {
            if self.log_domain {
                contract::log_contract_front(&cur, &mut out, shape, stencil, t);
            } else {
                contract::contract_front(&cur, &mut out, shape, stencil, t);
            }
            std::mem::swap(&mut cur, &mut out);
        }
        self.finish(cur, msg.scale)
    }

    fn back_with(&self, msg: &Msg, tables: &[&[f64]], stencil: Stencil) -> Result<Msg> {
        let shape = self.shape();
        let mut cur = msg.data.clone();
        let mut out = vec![0.0; cur.len()];
        for t in tables.iter().rev() {
            if self.log_domain {
                contract::log_contract_back(&cur, &mut out, shape, stencil, t);
            } else {
                contract::contract_back(&cur, &mut out, shape, stencil, t);
            }
            std::mem::swap(&mut cur, &mut out);
        }
        self.finish(cur, msg.scale)
    }

    /// One step forward (without the scaling of the new step).
    pub fn front(&self, msg: &Msg) -> Result<Msg> {
        let (stencil, tables) = self.stencil_tables();
        self.front_with(msg, &tables, stencil)
    }

    /// One step backward: input is `W_{m+1} B_{m+1}`, output `B_m`.
    pub fn back(&self, msg: &Msg) -> Result<Msg> {
        let (stencil, tables) = self.stencil_tables();
        self.back_with(msg, &tables, stencil)
    }

    /// Backward step with the table of `axis` replaced by its cost-weighted
    /// version; used to take expectations of the local cost.
    pub fn back_cost_weighted(&self, msg: &Msg, axis: usize) -> Result<Msg> {
        let (stencil, mut tables) = self.stencil_tables();
        let grid = &self.kernel.grid;
        let weighted = if self.order() == 2 {
            self.kernel.second[axis].cost_weighted(grid.h(axis), self.kernel.second_weight)
        } else {
            self.kernel.first[axis].cost_weighted(grid.h(axis), self.kernel.first_weight)
        };
        tables[axis] = &weighted;
        // no renormalization: the result may legitimately vanish
        let shape = self.shape();
        let mut cur = msg.data.clone();
        let mut out = vec![0.0; cur.len()];
        for t in tables.iter().rev() {
            if self.log_domain {
                contract::log_contract_back(&cur, &mut out, shape, stencil, t);
            } else {
                contract::contract_back(&cur, &mut out, shape, stencil, t);
            }
            std::mem::swap(&mut cur, &mut out);
        }
        Ok(Msg { data: cur, scale: msg.scale })
    }

    /// Order-2 pre-message at step 1: `W_0(p) K1(p,q)` (without `W_1`).
    pub fn init_pair(&self, w0: Option<&Scaling>) -> Msg {
        let mut msg = self.ones();
        if !self.kernel.first.is_empty() {
            let n = self.nodes;
            for p in 0..n {
                for q in 0..n {
                    let k = self.kernel.pair_factor(p, q);
                    let x = &mut msg.data[p * n + q];
                    if self.log_domain {
                        *x = k.ln();
                    } else {
                        *x = k;
                    }
                }
            }
        }
        if let Some(w) = w0 {
            self.apply_leading(&mut msg, w);
        }
        msg
    }

    /// Log of `sum over all slots but one` of `a * b`, keeping the trailing
    /// node slot (`keep_leading = false`) or the leading one.
    pub fn log_marginal(&self, a: &Msg, b: &Msg, keep_leading: bool) -> Vec<f64> {
        let n = self.nodes;
        let len = a.data.len();
        let outer = len / n;
        let scale = a.scale + b.scale;
        if self.order() == 1 || outer == 1 {
            return a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| if self.log_domain { x + y } else { (x * y).ln() + scale })
                .collect();
        }
        let mut out = vec![0.0; n];
        if self.log_domain {
            for (i, o) in out.iter_mut().enumerate() {
                *o = if keep_leading {
                    log_sum_exp((0..n).map(|j| a.data[i * n + j] + b.data[i * n + j]))
                } else {
                    log_sum_exp((0..outer).map(|j| a.data[j * n + i] + b.data[j * n + i]))
                };
            }
        } else {
            if keep_leading {
                for (i, o) in out.iter_mut().enumerate() {
                    let r = i * n..(i + 1) * n;
                    *o = a.data[r.clone()].iter().zip(&b.data[r]).map(|(x, y)| x * y).sum();
                }
            } else {
                for j in 0..outer {
                    let r = j * n..(j + 1) * n;
                    for ((o, x), y) in out.iter_mut().zip(&a.data[r.clone()]).zip(&b.data[r]) {
                        *o += x * y;
                    }
                }
            }
            out.iter_mut().for_each(|o| *o = o.ln() + scale);
        }
        out
    }

    /// Log of the full contraction `sum a * b`.
    pub fn log_total(&self, a: &Msg, b: &Msg) -> f64 {
        if self.log_domain {
            log_sum_exp(a.data.iter().zip(&b.data).map(|(x, y)| x + y))
        } else {
            let s: f64 = a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum();
            s.ln() + a.scale + b.scale
        }
    }
}
