//! Plain-text CSV formats for densities, phase clouds and particle bundles.
//!
//! * density: header `# dim,nx,lo...,hi...`, then one weight per line in
//!   row-major node order. Further `#` lines are ignored on read.
//! * cloud: one line per point, `x...,v...,w`.
//! * bundle: `particle,knot,x...,v...` with a column-name header line.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::cloud::{PhasePoint, WeightedPhaseCloud};
use crate::error::{Error, Result};
use crate::grid::{DensityGrid, Grid};

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.trim().parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("bad number {tok:?}: {e}") })
}

fn parse_row(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',').map(|t| parse_f64(t, line)).collect()
}

pub fn density_to_csv(d: &DensityGrid) -> String {
    let g = d.grid();
    let mut s = format!("# {},{}", g.dim(), g.nx());
    for v in g.lo().iter().chain(g.hi()) {
        write!(s, ",{v}").unwrap();
    }
    s.push('\n');
    for w in d.weights() {
        writeln!(s, "{w:e}").unwrap();
    }
    s
}

pub fn density_from_csv(text: &str) -> Result<DensityGrid> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
    let head = head
        .strip_prefix('#')
        .ok_or(Error::Parse { line: 1, msg: "missing `# dim,nx,lo...,hi...` header".into() })?;
    let vals = parse_row(head, 1)?;
    if vals.len() < 4 {
        return Err(Error::Parse { line: 1, msg: "header too short".into() });
    }
    let dim = vals[0] as usize;
    let nx = vals[1] as usize;
    if vals.len() != 2 + 2 * dim {
        return Err(Error::Parse { line: 1, msg: format!("header needs {} fields for dim {dim}", 2 + 2 * dim) });
    }
    let grid = Grid::new(nx, &vals[2..2 + dim], &vals[2 + dim..])?;
    let mut w = Vec::with_capacity(grid.len());
    for (i, l) in lines {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        w.push(parse_f64(l, i + 1)?);
    }
    if w.len() != grid.len() {
        return Err(Error::Parse { line: text.lines().count(), msg: format!("expected {} weights, got {}", grid.len(), w.len()) });
    }
    DensityGrid::new_checked(grid, w)
}

pub fn cloud_to_csv(c: &WeightedPhaseCloud) -> String {
    let mut s = String::new();
    for (p, w) in c.points().iter().zip(c.weights()) {
        for v in p.x.iter().chain(&p.v) {
            write!(s, "{v:e},").unwrap();
        }
        writeln!(s, "{w:e}").unwrap();
    }
    s
}

pub fn cloud_from_csv(text: &str) -> Result<WeightedPhaseCloud> {
    let mut pts = Vec::new();
    let mut ws = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') {
            continue;
        }
        let row = parse_row(l, i + 1)?;
        if row.len() < 3 || row.len() % 2 == 0 {
            return Err(Error::Parse { line: i + 1, msg: "expected x...,v...,w".into() });
        }
        let d = (row.len() - 1) / 2;
        pts.push(PhasePoint::new(row[..d].to_vec(), row[d..2 * d].to_vec())?);
        ws.push(row[2 * d]);
    }
    WeightedPhaseCloud::new(pts, ws)
}

/// `positions[knot][particle]`, `velocities[knot][particle]` as bundle CSV.
pub fn bundle_to_csv(positions: &[Vec<Vec<f64>>], velocities: &[Vec<Vec<f64>>]) -> String {
    let dim = positions.first().and_then(|k| k.first()).map_or(0, |p| p.len());
    let mut s = String::from("particle,knot");
    for a in 0..dim {
        write!(s, ",x{a}").unwrap();
    }
    for a in 0..dim {
        write!(s, ",v{a}").unwrap();
    }
    s.push('\n');
    let n = positions.first().map_or(0, |k| k.len());
    for j in 0..n {
        for (i, (xs, vs)) in positions.iter().zip(velocities).enumerate() {
            write!(s, "{j},{i}").unwrap();
            for v in xs[j].iter().chain(&vs[j]) {
                write!(s, ",{v:e}").unwrap();
            }
            s.push('\n');
        }
    }
    s
}

/// Inverse of [`bundle_to_csv`]: returns `(positions, velocities)` indexed `[knot][particle]`.
#[allow(clippy::type_complexity)]
pub fn bundle_from_csv(text: &str) -> Result<(Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>)> {
    let mut rows = Vec::new();
    for (i, l) in text.lines().enumerate() {
        let l = l.trim();
        if l.is_empty() || l.starts_with('#') || l.starts_with("particle") {
            continue;
        }
        let row = parse_row(l, i + 1)?;
        if row.len() < 4 || row.len() % 2 != 0 {
            return Err(Error::Parse { line: i + 1, msg: "expected particle,knot,x...,v...".into() });
        }
        rows.push((i + 1, row));
    }
    let n = rows.iter().map(|(_, r)| r[0] as usize + 1).max().unwrap_or(0);
    let knots = rows.iter().map(|(_, r)| r[1] as usize + 1).max().unwrap_or(0);
    if n == 0 || rows.len() != n * knots {
        return Err(Error::Parse { line: 1, msg: format!("expected a full particle x knot table, got {} rows", rows.len()) });
    }
    let dim = (rows[0].1.len() - 2) / 2;
    let mut xs = vec![vec![Vec::new(); n]; knots];
    let mut vs = vec![vec![Vec::new(); n]; knots];
    for (line, r) in rows {
        if r.len() != 2 + 2 * dim {
            return Err(Error::Parse { line, msg: "inconsistent column count".into() });
        }
        let (j, i) = (r[0] as usize, r[1] as usize);
        xs[i][j] = r[2..2 + dim].to_vec();
        vs[i][j] = r[2 + dim..].to_vec();
    }
    Ok((xs, vs))
}

pub fn read_density(path: &Path) -> Result<DensityGrid> {
    density_from_csv(&fs::read_to_string(path)?)
}

pub fn write_density(path: &Path, d: &DensityGrid) -> Result<()> {
    Ok(fs::write(path, density_to_csv(d))?)
}
