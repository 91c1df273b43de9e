//! Per-axis stencil contractions on flattened message tensors.
//!
//! A message is a tensor over `k` node-axis slots, each of extent `nx`,
//! stored row-major. Contracting one slot against a stencil table either
//! removes the leading slot and appends a new trailing one ("front"), or
//! removes the trailing slot and prepends a new leading one ("back"):
//!
//! ```text
//! front: out[rest][r] = sum_p in[p][rest] * table[base(p, rest) + r]
//! back:  out[p][rest] = sum_r in[rest][r] * table[base(p, rest) + r]
//! ```
//!
//! Applying `dim` such contractions in a row moves a full grid node from one
//! end of the tensor to the other while only ever touching one axis of the
//! stencil at a time, so a 2D step never materializes more than `nx^4`
//! entries.

use rayon::prelude::*;

/// Rows handed to one rayon task.
const ROW_BLOCK: usize = 64;
/// Below this many output entries contractions run serially.
const PAR_THRESHOLD: usize = 1 << 14;

/// Offset function of the stencil: maps the contracted index `p` and the
/// middle-node coordinate `q` to the table start for the output index.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Stencil {
    /// `table[p - 2q + r + 2(nx-1)]`: three-point second difference.
    Second,
    /// `table[r - p + (nx-1)]`: two-point difference (symmetric table).
    First,
}

impl Stencil {
    #[inline]
    fn base(self, nx: usize, p: usize, q: usize) -> usize {
        match self {
            Stencil::Second => p + 2 * (nx - 1) - 2 * q,
            Stencil::First => (nx - 1) - p,
        }
    }
}

/// Geometry of one contraction: `rest` slots between the contracted one and
/// the output one, with the middle-node coordinate sitting at stride `q_stride`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Shape {
    pub nx: usize,
    pub rest: usize,
    pub q_stride: usize,
}

impl Shape {
    #[inline]
    fn q_of(&self, rest_idx: usize) -> usize {
        (rest_idx / self.q_stride) % self.nx
    }
}

/// Dot product with independent partial sums (keeps the FMA pipeline busy).
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn contract_front(input: &[f64], out: &mut [f64], shape: Shape, stencil: Stencil, table: &[f64]) {
    let Shape { nx, rest, .. } = shape;
    debug_assert_eq!(input.len(), nx * rest);
    debug_assert_eq!(out.len(), nx * rest);
    let block = |(b, chunk): (usize, &mut [f64])| {
        chunk.iter_mut().for_each(|x| *x = 0.0);
        let r0 = b * ROW_BLOCK;
        let rows = chunk.len() / nx;
        for p in 0..nx {
            let src = &input[p * rest + r0..p * rest + r0 + rows];
            for (j, &a) in src.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let q = shape.q_of(r0 + j);
                let t = &table[stencil.base(nx, p, q)..][..nx];
                let row = &mut chunk[j * nx..(j + 1) * nx];
                for (o, k) in row.iter_mut().zip(t) {
                    *o += a * k;
                }
            }
        }
    };
    if out.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(ROW_BLOCK * nx).enumerate().for_each(block);
    } else {
        out.chunks_mut(ROW_BLOCK * nx).enumerate().for_each(block);
    }
}

pub(crate) fn contract_back(input: &[f64], out: &mut [f64], shape: Shape, stencil: Stencil, table: &[f64]) {
    let Shape { nx, rest, .. } = shape;
    debug_assert_eq!(input.len(), nx * rest);
    debug_assert_eq!(out.len(), nx * rest);
    let row = |(p, chunk): (usize, &mut [f64])| {
        for (j, o) in chunk.iter_mut().enumerate() {
            let q = shape.q_of(j);
            let t = &table[stencil.base(nx, p, q)..][..nx];
            let src = &input[j * nx..(j + 1) * nx];
            *o = dot(src, t);
        }
    };
    if out.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(rest).enumerate().for_each(row);
    } else {
        out.chunks_mut(rest).enumerate().for_each(row);
    }
}

/// Log-domain front contraction: `out = log(front(exp(input)))`, stabilized
/// by subtracting the maximum over the contracted slot for every column.
pub(crate) fn log_contract_front(input: &[f64], out: &mut [f64], shape: Shape, stencil: Stencil, table: &[f64]) {
    let Shape { nx, rest, .. } = shape;
    let mut shift = vec![f64::NEG_INFINITY; rest];
    for p in 0..nx {
        for (s, &a) in shift.iter_mut().zip(&input[p * rest..(p + 1) * rest]) {
            *s = s.max(a);
        }
    }
    let mut tmp = vec![0.0; input.len()];
    for p in 0..nx {
        let dst = &mut tmp[p * rest..(p + 1) * rest];
        for ((d, &a), &s) in dst.iter_mut().zip(&input[p * rest..(p + 1) * rest]).zip(&shift) {
            *d = if s == f64::NEG_INFINITY { 0.0 } else { (a - s).exp() };
        }
    }
    contract_front(&tmp, out, shape, stencil, table);
    for (j, row) in out.chunks_mut(nx).enumerate() {
        let s = shift[j];
        for o in row {
            *o = if s == f64::NEG_INFINITY { s } else { s + o.ln() };
        }
    }
}

/// Log-domain back contraction, stabilized per input row.
pub(crate) fn log_contract_back(input: &[f64], out: &mut [f64], shape: Shape, stencil: Stencil, table: &[f64]) {
    let Shape { nx, rest, .. } = shape;
    let mut shift = vec![f64::NEG_INFINITY; rest];
    let mut tmp = vec![0.0; input.len()];
    for j in 0..rest {
        let src = &input[j * nx..(j + 1) * nx];
        let s = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift[j] = s;
        if s > f64::NEG_INFINITY {
            for (d, &a) in tmp[j * nx..(j + 1) * nx].iter_mut().zip(src) {
                *d = (a - s).exp();
            }
        }
    }
    contract_back(&tmp, out, shape, stencil, table);
    for p in 0..nx {
        for (o, &s) in out[p * rest..(p + 1) * rest].iter_mut().zip(&shift) {
            *o = if s == f64::NEG_INFINITY { s } else { s + o.ln() };
        }
    }
}
