//! Closed-form spline energies and cubic interpolants.
//!
//! Two independent routes compute the acceleration energy of the natural
//! cubic interpolant through `(t_i, x_i)`:
//!
//! * [`fit_cubic_interpolant`] solves the classical tridiagonal system for the
//!   knot second derivatives and integrates `|x''|^2` piece by piece;
//! * [`spline_cost`] minimizes the sum of phase-space Hermite energies over the
//!   knot velocities, a symmetric positive-definite tridiagonal solve per
//!   coordinate.

use crate::cloud::PhasePoint;
use crate::error::{Error, Result};

/// Acceleration energy `int_0^1 |p''|^2` of the cubic Hermite curve with
/// `p(0) = x, p'(0) = v, p(1) = y, p'(1) = w`:
///
/// `12|x-y|^2 + 4(|v|^2 + |w|^2 + <v,w> + 3<v+w, x-y>)`.
pub fn hermite_energy(p: &PhasePoint, q: &PhasePoint) -> Result<f64> {
    check_same_dim(p, q)?;
    Ok(hermite_energy_raw(&p.x, &p.v, &q.x, &q.v))
}

pub(crate) fn hermite_energy_raw(x: &[f64], v: &[f64], y: &[f64], w: &[f64]) -> f64 {
    let mut e = 0.0;
    for k in 0..x.len() {
        let d = x[k] - y[k];
        e += 12.0 * d * d + 4.0 * (v[k] * v[k] + w[k] * w[k] + v[k] * w[k] + 3.0 * (v[k] + w[k]) * d);
    }
    // the quadratic form is PSD; clip roundoff
    e.max(0.0)
}

/// Acceleration energy of the Hermite cubic over an interval of length
/// `delta`, with physical endpoint velocities `p.v` and `q.v`.
///
/// Equals `c_ph((x, delta v), (y, delta w)) / delta^3`.
pub fn scaled_segment_energy(p: &PhasePoint, q: &PhasePoint, delta: f64) -> Result<f64> {
    check_same_dim(p, q)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!("segment length must be positive, got {delta}")));
    }
    Ok(scaled_segment_energy_raw(&p.x, &p.v, &q.x, &q.v, delta))
}

pub(crate) fn scaled_segment_energy_raw(x: &[f64], v: &[f64], y: &[f64], w: &[f64], delta: f64) -> f64 {
    let mut e = 0.0;
    for k in 0..x.len() {
        let d = x[k] - y[k];
        let (a, b) = (v[k], w[k]);
        e += 12.0 * d * d / delta.powi(3)
            + 4.0 * (a * a + b * b + a * b) / delta
            + 12.0 * (a + b) * d / (delta * delta);
    }
    e.max(0.0)
}

fn check_same_dim(p: &PhasePoint, q: &PhasePoint) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    Ok(())
}

/// Piecewise-cubic Hermite curve through knots with prescribed velocities.
///
/// Curves returned by [`fit_cubic_interpolant`] are natural cubic splines
/// (C², zero second derivative at both ends). Evaluating outside the knot
/// range extends the boundary cubic.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicPath {
    knot_times: Vec<f64>,
    knot_points: Vec<Vec<f64>>,
    knot_velocities: Vec<Vec<f64>>,
}

impl CubicPath {
    pub fn from_hermite(
        knot_times: Vec<f64>,
        knot_points: Vec<Vec<f64>>,
        knot_velocities: Vec<Vec<f64>>,
    ) -> Result<Self> {
        check_times(&knot_times)?;
        if knot_points.len() != knot_times.len() || knot_velocities.len() != knot_times.len() {
            return Err(Error::invalid("knot arrays must have equal lengths"));
        }
        let dim = knot_points[0].len();
        for p in knot_points.iter().chain(&knot_velocities) {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
        }
        Ok(Self { knot_times, knot_points, knot_velocities })
    }

    pub fn knot_times(&self) -> &[f64] {
        &self.knot_times
    }

    pub fn knot_points(&self) -> &[Vec<f64>] {
        &self.knot_points
    }

    pub fn knot_velocities(&self) -> &[Vec<f64>] {
        &self.knot_velocities
    }

    pub fn dim(&self) -> usize {
        self.knot_points[0].len()
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.knot_times.len();
        match self.knot_times[1..n - 1].iter().position(|&k| t < k) {
            Some(i) => i,
            None => n - 2,
        }
    }

    /// Position and velocity at time `t`.
    pub fn eval(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let i = self.segment(t);
        let (t0, t1) = (self.knot_times[i], self.knot_times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let d00 = (6.0 * s2 - 6.0 * s) / h;
        let d10 = 3.0 * s2 - 4.0 * s + 1.0;
        let d01 = (-6.0 * s2 + 6.0 * s) / h;
        let d11 = 3.0 * s2 - 2.0 * s;
        let (p0, p1) = (&self.knot_points[i], &self.knot_points[i + 1]);
        let (m0, m1) = (&self.knot_velocities[i], &self.knot_velocities[i + 1]);
        let mut pos = Vec::with_capacity(self.dim());
        let mut vel = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            pos.push(h00 * p0[k] + h10 * h * m0[k] + h01 * p1[k] + h11 * h * m1[k]);
            vel.push(d00 * p0[k] + d10 * m0[k] + d01 * p1[k] + d11 * m1[k]);
        }
        (pos, vel)
    }

    /// Second derivative at both ends of segment `i`, per coordinate.
    fn segment_second_derivatives(&self, i: usize) -> (Vec<f64>, Vec<f64>) {
        let h = self.knot_times[i + 1] - self.knot_times[i];
        let (p0, p1) = (&self.knot_points[i], &self.knot_points[i + 1]);
        let (m0, m1) = (&self.knot_velocities[i], &self.knot_velocities[i + 1]);
        let mut a = Vec::with_capacity(self.dim());
        let mut b = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let slope = (p1[k] - p0[k]) / h;
            a.push((6.0 * slope - 4.0 * m0[k] - 2.0 * m1[k]) / h);
            b.push((-6.0 * slope + 2.0 * m0[k] + 4.0 * m1[k]) / h);
        }
        (a, b)
    }

    /// `int |x''(t)|^2 dt` over the knot range; `x''` is linear on each piece.
    pub fn energy(&self) -> f64 {
        (0..self.knot_times.len() - 1)
            .map(|i| {
                let h = self.knot_times[i + 1] - self.knot_times[i];
                let (a, b) = self.segment_second_derivatives(i);
                a.iter().zip(&b).map(|(a, b)| h * (a * a + a * b + b * b) / 3.0).sum::<f64>()
            })
            .sum()
    }
}

/// Evaluates `path` at `t`; thin wrapper over [`CubicPath::eval`].
pub fn eval_path(path: &CubicPath, t: f64) -> (Vec<f64>, Vec<f64>) {
    path.eval(t)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 knots, got {}", times.len())));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::invalid("knot times must be finite"));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("knot times must be strictly increasing"));
    }
    Ok(())
}

fn check_points<P: AsRef<[f64]>>(times: &[f64], points: &[P]) -> Result<usize> {
    check_times(times)?;
    if points.len() != times.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: points.len() });
    }
    let dim = points[0].as_ref().len();
    for p in points {
        let p = p.as_ref();
        if p.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
        if p.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("knot points must be finite"));
        }
    }
    Ok(dim)
}

/// Solves a tridiagonal system in place (Thomas algorithm). `sub[0]` and
/// `sup[n-1]` are ignored. The systems built here are diagonally dominant.
fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    c[0] = if n > 1 { sup[0] / beta } else { 0.0 };
    rhs[0] /= beta;
    for i in 1..n {
        beta = diag[i] - sub[i] * c[i - 1];
        if i + 1 < n {
            c[i] = sup[i] / beta;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

/// Natural cubic spline through `(times[i], points[i])`, the unique
/// minimizer of `int |x''|^2` under the interpolation constraints.
pub fn fit_cubic_interpolant<P: AsRef<[f64]>>(times: &[f64], points: &[P]) -> Result<CubicPath> {
    let dim = check_points(times, points)?;
    let n = times.len();
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut velocities = vec![vec![0.0; dim]; n];
    for k in 0..dim {
        let y: Vec<f64> = points.iter().map(|p| p.as_ref()[k]).collect();
        // second derivatives M_i, natural ends M_0 = M_{n-1} = 0
        let mut m = vec![0.0; n];
        if n > 2 {
            let inner = n - 2;
            let mut sub = vec![0.0; inner];
            let mut diag = vec![0.0; inner];
            let mut sup = vec![0.0; inner];
            let mut rhs = vec![0.0; inner];
            for j in 0..inner {
                let i = j + 1;
                sub[j] = h[i - 1];
                diag[j] = 2.0 * (h[i - 1] + h[i]);
                sup[j] = h[i];
                rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
            }
            solve_tridiagonal(&sub, &diag, &sup, &mut rhs);
            m[1..n - 1].copy_from_slice(&rhs);
        }
        for i in 0..n {
            velocities[i][k] = if i + 1 < n {
                (y[i + 1] - y[i]) / h[i] - h[i] * (2.0 * m[i] + m[i + 1]) / 6.0
            } else {
                (y[i] - y[i - 1]) / h[i - 1] + h[i - 1] * (m[i - 1] + 2.0 * m[i]) / 6.0
            };
        }
    }
    let knot_points = points.iter().map(|p| p.as_ref().to_vec()).collect();
    CubicPath::from_hermite(times.to_vec(), knot_points, velocities)
}

/// Knot velocities minimizing the summed scaled Hermite energies
/// `sum_i c_ph((Y_i, d_i V_i), (Y_{i+1}, d_i V_{i+1})) / d_i^3`.
pub fn optimal_velocities<P: AsRef<[f64]>>(times: &[f64], points: &[P]) -> Result<Vec<Vec<f64>>> {
    let dim = check_points(times, points)?;
    let n = times.len();
    let mut out = vec![vec![0.0; dim]; n];
    // Per segment (D = Y_i - Y_{i+1}), the energy in V is
    //   (4/d)(V_i^2 + V_{i+1}^2 + V_i V_{i+1}) + (12/d^2)(V_i + V_{i+1}) D + const,
    // giving a tridiagonal SPD Hessian.
    let mut sub = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for i in 0..n - 1 {
        let d = times[i + 1] - times[i];
        diag[i] += 8.0 / d;
        diag[i + 1] += 8.0 / d;
        sup[i] = 4.0 / d;
        sub[i + 1] = 4.0 / d;
    }
    for k in 0..dim {
        let mut rhs = vec![0.0; n];
        for i in 0..n - 1 {
            let d = times[i + 1] - times[i];
            let diff = points[i].as_ref()[k] - points[i + 1].as_ref()[k];
            let g = 12.0 * diff / (d * d);
            rhs[i] -= g;
            rhs[i + 1] -= g;
        }
        solve_tridiagonal(&sub, &diag, &sup, &mut rhs);
        for i in 0..n {
            out[i][k] = rhs[i];
        }
    }
    Ok(out)
}

/// Reduced multimarginal cost: the minimal acceleration energy of a curve
/// through the given points, computed by minimizing the phase-space Hermite
/// energies over the knot velocities.
pub fn spline_cost<P: AsRef<[f64]>>(times: &[f64], points: &[P]) -> Result<f64> {
    let vel = optimal_velocities(times, points)?;
    let mut e = 0.0;
    for i in 0..times.len() - 1 {
        e += scaled_segment_energy_raw(
            points[i].as_ref(),
            &vel[i],
            points[i + 1].as_ref(),
            &vel[i + 1],
            times[i + 1] - times[i],
        );
    }
    Ok(e)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_dtau(dtau: f64) -> Result<()> {
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(Error::invalid(format!("dtau must be positive, got {dtau}")));
    }
    Ok(())
}

/// `sum_i |x_{i+1} + x_{i-1} - 2 x_i|^2 / dtau^3` over interior steps.
pub fn discrete_acceleration_cost<P: AsRef<[f64]>>(positions: &[P], dtau: f64) -> Result<f64> {
    check_dtau(dtau)?;
    if positions.len() < 3 {
        return Err(Error::invalid("acceleration cost needs at least 3 positions"));
    }
    let mut c = 0.0;
    for w in positions.windows(3) {
        let (a, b, e) = (w[0].as_ref(), w[1].as_ref(), w[2].as_ref());
        c += a.iter().zip(b).zip(e).map(|((a, b), e)| (e + a - 2.0 * b).powi(2)).sum::<f64>();
    }
    Ok(c / dtau.powi(3))
}

/// `sum_i |x_{i+1} - x_i|^2 / dtau`.
pub fn discrete_speed_cost<P: AsRef<[f64]>>(positions: &[P], dtau: f64) -> Result<f64> {
    check_dtau(dtau)?;
    if positions.len() < 2 {
        return Err(Error::invalid("speed cost needs at least 2 positions"));
    }
    let c: f64 = positions.windows(2).map(|w| sq_dist(w[0].as_ref(), w[1].as_ref())).sum();
    Ok(c / dtau)
}

/// Three-point cost whose minimizers continue straight lines:
/// `|x3 - 2 x2 + x1|^2 / lambda^2 + |x2 - x1|^2 / lambda`.
pub fn extrapolation_cost(x1: &[f64], x2: &[f64], x3: &[f64], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    if x2.len() != x1.len() || x3.len() != x1.len() {
        return Err(Error::DimensionMismatch { expected: x1.len(), got: x2.len().max(x3.len()) });
    }
    let acc: f64 = (0..x1.len()).map(|k| (x3[k] - 2.0 * x2[k] + x1[k]).powi(2)).sum();
    Ok(acc / (lambda * lambda) + sq_dist(x2, x1) / lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pp(x: f64, v: f64) -> PhasePoint {
        PhasePoint::new(vec![x], vec![v]).unwrap()
    }

    #[test]
    fn hermite_examples() {
        assert!(hermite_energy(&pp(0.0, 0.7), &pp(0.7, 0.7)).unwrap().abs() < 1e-14);
        let e = hermite_energy(&pp(1.0, 0.0), &pp(-2.0, 0.0)).unwrap();
        assert!((e - 108.0).abs() < 1e-12);
        assert!((hermite_energy(&pp(0.0, 1.0), &pp(0.0, 0.0)).unwrap() - 4.0).abs() < 1e-14);
        let bad = PhasePoint::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert!(hermite_energy(&pp(0.0, 0.0), &bad).is_err());
    }

    #[test]
    fn scaled_segment_examples() {
        let (p, q) = (pp(0.3, -1.0), pp(1.1, 2.0));
        let a = scaled_segment_energy(&p, &q, 1.0).unwrap();
        assert!((a - hermite_energy(&p, &q).unwrap()).abs() < 1e-12);
        // constant speed 2 over delta 0.5
        assert!(scaled_segment_energy(&pp(0.0, 2.0), &pp(1.0, 2.0), 0.5).unwrap().abs() < 1e-12);
        assert!(scaled_segment_energy(&p, &q, 0.0).is_err());
        assert!(scaled_segment_energy(&p, &q, -1.0).is_err());
    }

    #[test]
    fn natural_spline_examples() {
        let path = fit_cubic_interpolant(&[0.0, 1.0, 2.0], &[[0.0], [1.0], [0.0]]).unwrap();
        assert!((path.energy() - 6.0).abs() < 1e-12);
        let (x, _) = path.eval(0.5);
        assert!((x[0] - 0.6875).abs() < 1e-12);
        let (x, v) = path.eval(1.5);
        assert!((x[0] - 0.6875).abs() < 1e-12);
        assert!((v[0] + 1.125).abs() < 1e-12);

        let line = fit_cubic_interpolant(&[0.0, 1.0, 2.0, 3.0], &[[0.0], [1.0], [2.0], [3.0]]).unwrap();
        assert!(line.energy().abs() < 1e-20);
        assert!((line.eval(2.25).0[0] - 2.25).abs() < 1e-12);

        let seg = fit_cubic_interpolant(&[0.0, 1.0], &[[0.0], [5.0]]).unwrap();
        assert!(seg.energy().abs() < 1e-20);
        assert!((seg.eval(0.4).0[0] - 2.0).abs() < 1e-12);
        assert!((seg.eval(1.5).0[0] - 7.5).abs() < 1e-12);
    }

    #[test]
    fn natural_end_conditions() {
        let t = [0.0, 0.5, 1.7, 2.0, 3.1];
        let pts = [[0.0, 1.0], [1.0, -1.0], [0.3, 2.0], [2.0, 0.0], [-1.0, 0.5]];
        let path = fit_cubic_interpolant(&t, &pts).unwrap();
        let (a0, _) = path.segment_second_derivatives(0);
        let (_, bn) = path.segment_second_derivatives(3);
        for k in 0..2 {
            assert!(a0[k].abs() < 1e-10 && bn[k].abs() < 1e-10);
        }
        for i in 1..4 {
            let (_, left) = path.segment_second_derivatives(i - 1);
            let (right, _) = path.segment_second_derivatives(i);
            for k in 0..2 {
                assert!((left[k] - right[k]).abs() < 1e-10);
            }
            assert!((path.eval(t[i]).0[0] - pts[i][0]).abs() < 1e-10);
        }
    }

    #[test]
    fn spline_cost_examples() {
        let c = spline_cost(&[0.0, 1.0, 2.0], &[[0.0], [1.0], [0.0]]).unwrap();
        assert!((c - 6.0).abs() < 1e-12);
        let c = spline_cost(&[0.0, 0.5, 2.0], &[[1.0, 1.0], [2.0, 0.0], [5.0, -3.0]]).unwrap();
        assert!(c.abs() < 1e-12);
        assert!(spline_cost(&[0.0, 0.0], &[[0.0], [1.0]]).is_err());
        assert!(spline_cost::<[f64; 1]>(&[0.0], &[[0.0]]).is_err());
    }

    #[test]
    fn discrete_cost_examples() {
        assert_eq!(discrete_acceleration_cost(&[[0.0], [0.0], [1.0]], 1.0).unwrap(), 1.0);
        assert_eq!(discrete_acceleration_cost(&[[0.0], [1.0], [2.0], [3.0]], 1.0).unwrap(), 0.0);
        assert_eq!(discrete_acceleration_cost(&[[0.0], [1.0], [0.0]], 0.5).unwrap(), 32.0);
        assert!(discrete_acceleration_cost(&[[0.0], [1.0]], 1.0).is_err());

        assert_eq!(discrete_speed_cost(&[[0.0], [1.0]], 1.0).unwrap(), 1.0);
        assert_eq!(discrete_speed_cost(&[[2.0], [2.0], [2.0]], 0.3).unwrap(), 0.0);
        assert_eq!(discrete_speed_cost(&[[0.0], [1.0], [3.0]], 0.5).unwrap(), 10.0);
        assert!(discrete_speed_cost(&[[0.0]], 1.0).is_err());
    }

    #[test]
    fn extrapolation_cost_examples() {
        assert_eq!(extrapolation_cost(&[0.0], &[1.0], &[2.0], 1.0).unwrap(), 1.0);
        assert_eq!(extrapolation_cost(&[0.4, 1.0], &[0.4, 1.0], &[0.4, 1.0], 3.0).unwrap(), 0.0);
        assert_eq!(extrapolation_cost(&[0.0], &[1.0], &[3.0], 2.0).unwrap(), 0.75);
        assert!(extrapolation_cost(&[0.0], &[1.0], &[3.0], 0.0).is_err());
    }
}
