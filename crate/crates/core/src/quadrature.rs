//! Mapped Gauss–Legendre quadrature on the real line and barycentric
//! interpolation in the mapped variable.
//!
//! Nodes are t_i ∈ (−1, 1) mapped by q = L·t/(1 − t²). The map sends the
//! algebraic tails of the resolvent kernels to smooth functions of t near
//! ±1, so no cutoff is needed.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kinematics::Particle;

/// Gauss–Legendre nodes (ascending) and weights on (−1, 1), computed by
/// Newton iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess for the i-th largest root
        let theta = std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5);
        let mut x = (1.0 - (nf - 1.0) / (8.0 * nf * nf * nf)) * theta.cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[n - 1 - i] = w;
        weights[i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// A bare list of nodes and weights, used for shifted copies of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        dot(&self.weights, values)
    }
}

/// Compactified Gauss–Legendre grid on ℝ.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumGrid {
    scale: f64,
    t: Vec<f64>,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    bary: Vec<f64>,
}

impl MomentumGrid {
    /// Builds the grid with `n` nodes (even, at least 8) and map scale `scale`.
    pub fn build(n: usize, scale: f64) -> Result<MomentumGrid> {
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidInput(format!("grid size must be even and >= 8, got {n}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidInput(format!("grid scale must be positive, got {scale}")));
        }
        let (t, w) = gauss_legendre(n);
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut bary = Vec::with_capacity(n);
        for (j, (&tj, &wj)) in t.iter().zip(&w).enumerate() {
            let s = 1.0 - tj * tj;
            nodes.push(scale * tj / s);
            weights.push(wj * scale * (1.0 + tj * tj) / (s * s));
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            bary.push(sign * (s * wj).sqrt());
        }
        Ok(MomentumGrid {
            scale,
            t,
            nodes,
            weights,
            bary,
        })
    }

    pub fn shared(n: usize, scale: f64) -> Result<Arc<MomentumGrid>> {
        MomentumGrid::build(n, scale).map(Arc::new)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mapped_nodes(&self) -> &[f64] {
        &self.t
    }

    /// Largest node; beyond it the grid carries no information.
    pub fn q_max(&self) -> f64 {
        *self.nodes.last().expect("grid is never empty")
    }

    /// Inverse of the compactifying map.
    #[inline]
    pub fn to_mapped(&self, q: f64) -> f64 {
        2.0 * q / (self.scale + (self.scale * self.scale + 4.0 * q * q).sqrt())
    }

    /// Index of the node −q_i, using the symmetry of the grid.
    #[inline]
    pub fn mirror(&self, i: usize) -> usize {
        self.len() - 1 - i
    }

    /// Copy of the rule with every node moved by `shift`.
    pub fn shifted(&self, shift: f64) -> Quadrature {
        Quadrature {
            nodes: self.nodes.iter().map(|q| q + shift).collect(),
            weights: self.weights.clone(),
        }
    }

    pub fn rule(&self) -> Quadrature {
        self.shifted(0.0)
    }

    pub fn integrate(&self, values: &[f64]) -> f64 {
        dot(&self.weights, values)
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&q, &w)| w * f(q)).sum()
    }

    /// Barycentric weights of the interpolant through `values` at the point
    /// `q`, written into `out`. Points beyond ±q_max are clamped; the return
    /// value reports whether that happened.
    pub fn interpolation_row(&self, q: f64, out: &mut [f64]) -> bool {
        debug_assert_eq!(out.len(), self.len());
        out.iter_mut().for_each(|c| *c = 0.0);
        let q_max = self.q_max();
        let clamped = q.abs() > q_max;
        if clamped {
            let idx = if q > 0.0 { self.len() - 1 } else { 0 };
            out[idx] = 1.0;
            return true;
        }
        let t = self.to_mapped(q);
        let mut total = 0.0;
        for (j, (&tj, &bj)) in self.t.iter().zip(&self.bary).enumerate() {
            let d = t - tj;
            if d.abs() < 1e-15 {
                out.iter_mut().for_each(|c| *c = 0.0);
                out[j] = 1.0;
                return false;
            }
            let c = bj / d;
            out[j] = c;
            total += c;
        }
        out.iter_mut().for_each(|c| *c /= total);
        false
    }

    /// Interpolates grid values at `q`, refusing to extrapolate.
    pub fn interpolate(&self, values: &[f64], q: f64) -> Result<f64> {
        if q.abs() > self.q_max() {
            return Err(Error::Extrapolation {
                point: q,
                q_max: self.q_max(),
            });
        }
        Ok(self.interpolate_clamped(values, q).0)
    }

    /// Interpolates grid values at `q`, clamping to ±q_max.
    pub fn interpolate_clamped(&self, values: &[f64], q: f64) -> (f64, bool) {
        let mut row = vec![0.0; self.len()];
        let clamped = self.interpolation_row(q, &mut row);
        (dot(&row, values), clamped)
    }

    /// Precomputes the interpolation weights for a fixed list of points.
    pub fn plan(&self, points: &[f64]) -> InterpPlan {
        let n = self.len();
        let mut rows = vec![0.0; points.len() * n];
        let mut clamps = 0;
        for (k, &q) in points.iter().enumerate() {
            if self.interpolation_row(q, &mut rows[k * n..(k + 1) * n]) {
                clamps += 1;
            }
        }
        if clamps > 0 {
            log::debug!("interpolation plan clamps {clamps} of {} points", points.len());
        }
        InterpPlan {
            n,
            rows,
            clamps,
            points: points.len(),
        }
    }
}

/// Dense interpolation weights for a fixed set of evaluation points.
#[derive(Debug, Clone)]
pub struct InterpPlan {
    n: usize,
    rows: Vec<f64>,
    clamps: usize,
    points: usize,
}

impl InterpPlan {
    pub fn points(&self) -> usize {
        self.points
    }

    /// Number of points clamped to ±q_max.
    pub fn clamps(&self) -> usize {
        self.clamps
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.n..(k + 1) * self.n]
    }

    #[inline]
    pub fn eval(&self, k: usize, values: &[f64]) -> f64 {
        dot(self.row(k), values)
    }

    pub fn apply(&self, values: &[f64]) -> Vec<f64> {
        (0..self.points).map(|k| self.eval(k, values)).collect()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Samples of a function of one momentum on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction1D {
    pub grid: Arc<MomentumGrid>,
    pub values: Vec<f64>,
}

impl GridFunction1D {
    pub fn zeros(grid: Arc<MomentumGrid>) -> Self {
        let values = vec![0.0; grid.len()];
        GridFunction1D { grid, values }
    }

    pub fn from_fn(grid: Arc<MomentumGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&q| f(q)).collect();
        GridFunction1D { grid, values }
    }

    pub fn integrate(&self) -> f64 {
        self.grid.integrate(&self.values)
    }

    pub fn inner(&self, other: &GridFunction1D) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(self.grid.weights())
            .map(|((a, b), w)| w * a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn interpolate(&self, q: f64) -> Result<f64> {
        self.grid.interpolate(&self.values, q)
    }
}

/// Samples of a function on ℝ² in the natural spectator coordinates
/// (p_{ℓ+1}, p_ℓ) of a spectator ℓ: (p2, p1), (p3, p2) or (p1, p3).
///
/// Both axes use the same grid; `values[i * n + j]` holds f(q_i, p_j)
/// where q is the first coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction2D {
    pub grid: Arc<MomentumGrid>,
    pub form: Particle,
    pub values: Vec<f64>,
}

impl GridFunction2D {
    pub fn zeros(grid: Arc<MomentumGrid>, form: Particle) -> Self {
        let n = grid.len();
        GridFunction2D {
            grid,
            form,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_fn(grid: Arc<MomentumGrid>, form: Particle, f: impl Fn(f64, f64) -> f64) -> Self {
        let n = grid.len();
        let mut values = Vec::with_capacity(n * n);
        for &q in grid.nodes() {
            for &p in grid.nodes() {
                values.push(f(q, p));
            }
        }
        GridFunction2D { grid, form, values }
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.len() + j]
    }

    pub fn integrate(&self) -> f64 {
        let w = self.grid.weights();
        let n = w.len();
        (0..n)
            .map(|i| w[i] * dot(w, &self.values[i * n..(i + 1) * n]))
            .sum()
    }

    /// L² inner product; coordinate changes between spectator forms have
    /// unit Jacobian, so this is the physical inner product.
    pub fn inner(&self, other: &GridFunction2D) -> f64 {
        assert_eq!(self.form, other.form, "inner product across coordinate systems");
        let w = self.grid.weights();
        let n = w.len();
        let mut acc = 0.0;
        for i in 0..n {
            let row: f64 = (0..n)
                .map(|j| w[j] * self.values[i * n + j] * other.values[i * n + j])
                .sum();
            acc += w[i] * row;
        }
        acc
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    /// Tensor-product barycentric interpolation with clamping.
    pub fn interpolate(&self, q: f64, p: f64) -> (f64, bool) {
        let n = self.n();
        let mut rq = vec![0.0; n];
        let mut rp = vec![0.0; n];
        let c1 = self.grid.interpolation_row(q, &mut rq);
        let c2 = self.grid.interpolation_row(p, &mut rp);
        let mut acc = 0.0;
        for i in 0..n {
            if rq[i] != 0.0 {
                acc += rq[i] * dot(&rp, &self.values[i * n..(i + 1) * n]);
            }
        }
        (acc, c1 || c2)
    }

    /// Re-expresses the function in the natural coordinates of `target`.
    ///
    /// Any two spectator forms share one single-particle momentum, so each
    /// target node needs only a 1D interpolation along the other source
    /// axis, at the point −a − b for target node momenta a, b. Returns the
    /// new function and the number of clamped points.
    pub fn to_form(&self, target: Particle) -> (GridFunction2D, usize) {
        let n = self.n();
        let grid = &self.grid;
        let shift = (target.slot() + 3 - self.form.slot()) % 3;
        if shift == 0 {
            return (self.clone(), 0);
        }
        let mut out = vec![0.0; n * n];
        let mut row = vec![0.0; n];
        let mut clamps = 0;
        let mut column = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let x = -grid.nodes()[i] - grid.nodes()[j];
                if grid.interpolation_row(x, &mut row) {
                    clamps += 1;
                }
                out[i * n + j] = if shift == 1 {
                    // target (p_{l+2}, p_{l+1}) = (a_i, b_j): source row j, second axis at −a_i − b_j
                    dot(&row, &self.values[j * n..(j + 1) * n])
                } else {
                    // target (p_l, p_{l+2}) = (a_i, b_j): source column i, first axis at −a_i − b_j
                    for (k, c) in column.iter_mut().enumerate() {
                        *c = self.values[k * n + i];
                    }
                    dot(&row, &column)
                };
            }
        }
        (
            GridFunction2D {
                grid: self.grid.clone(),
                form: target,
                values: out,
            },
            clamps,
        )
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn axpy(&mut self, a: f64, x: &GridFunction2D) {
        assert_eq!(self.form, x.form);
        self.values.iter_mut().zip(&x.values).for_each(|(y, x)| *y += a * x);
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn legendre_rule_small_cases() {
        let (x, w) = gauss_legendre(2);
        assert_relative_eq!(x[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(w[0], 1.0, epsilon = 1e-15);
        let (x, w) = gauss_legendre(3);
        assert_relative_eq!(x[2], (0.6f64).sqrt(), epsilon = 1e-15);
        assert_eq!(x[1], 0.0);
        assert_relative_eq!(w[1], 8.0 / 9.0, epsilon = 1e-15);
        let (_, w) = gauss_legendre(200);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, epsilon = 1e-13);
    }

    #[test]
    fn grid_shape() {
        let g = MomentumGrid::build(32, 2.0).unwrap();
        for k in 1..g.len() {
            assert!(g.nodes()[k] > g.nodes()[k - 1]);
        }
        for i in 0..g.len() {
            assert_relative_eq!(g.nodes()[i], -g.nodes()[g.mirror(i)], epsilon = 1e-12);
            assert!(g.weights()[i] > 0.0);
            assert_relative_eq!(g.to_mapped(g.nodes()[i]), g.mapped_nodes()[i], epsilon = 1e-14);
        }
        assert!(MomentumGrid::build(7, 1.0).is_err());
        assert!(MomentumGrid::build(9, 1.0).is_err());
        assert!(MomentumGrid::build(16, 0.0).is_err());
        assert!(MomentumGrid::build(16, f64::NAN).is_err());
    }

    fn lorentz_error(n: usize) -> f64 {
        let g = MomentumGrid::build(n, 1.0).unwrap();
        (g.integrate_fn(|q| 1.0 / (q * q + 1.0)) - PI).abs() / PI
    }

    fn gauss_error(n: usize) -> f64 {
        let g = MomentumGrid::build(n, 1.0).unwrap();
        (g.integrate_fn(|q| (-q * q).exp()) - PI.sqrt()).abs() / PI.sqrt()
    }

    #[test]
    fn analytic_integrals() {
        assert!(lorentz_error(96) <= 1e-10, "{}", lorentz_error(96));
        assert!(gauss_error(96) <= 1e-10, "{}", gauss_error(96));
    }

    #[test]
    fn integration_error_decreases_with_n() {
        // once the error hits round-off it cannot decrease any further
        let floor = 1e-15;
        for err in [lorentz_error, gauss_error] {
            let e: Vec<f64> = [32, 64, 96, 128].iter().map(|&n| err(n).max(floor)).collect();
            for k in 1..e.len() {
                assert!(e[k] <= e[k - 1] || e[k] <= 4.0 * floor, "{e:?}");
            }
        }
    }

    #[test]
    fn polynomial_exactness_in_mapped_variable() {
        let n = 24;
        let g = MomentumGrid::build(n, 1.7).unwrap();
        let l = g.scale();
        for deg in 0..2 * n {
            // ∫ t(q)^deg dt = ∫ t^deg / (dq/dt) dq
            let got = g.integrate_fn(|q| {
                let t = g.to_mapped(q);
                let s = 1.0 - t * t;
                t.powi(deg as i32) * s * s / (l * (1.0 + t * t))
            });
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((got - exact).abs() <= 1e-13, "degree {deg}: {got} vs {exact}");
        }
    }

    #[test]
    fn interpolation_examples() {
        let g = MomentumGrid::shared(128, 1.0).unwrap();
        let lor = GridFunction1D::from_fn(g.clone(), |q| 1.0 / (q * q + 1.0));
        for i in [0, 17, 64, 127] {
            assert_eq!(lor.interpolate(g.nodes()[i]).unwrap(), lor.values[i]);
        }
        for i in 40..90 {
            let q = 0.5 * (g.nodes()[i] + g.nodes()[i + 1]);
            let exact = 1.0 / (q * q + 1.0);
            assert!((lor.interpolate(q).unwrap() - exact).abs() / exact <= 1e-8);
        }
        let gau = GridFunction1D::from_fn(g.clone(), |q| (-q * q).exp());
        let exact = (-0.09f64).exp();
        assert!((gau.interpolate(0.3).unwrap() - exact).abs() / exact <= 1e-8);
        assert!(matches!(gau.interpolate(2.0 * g.q_max()), Err(Error::Extrapolation { .. })));
        let (v, clamped) = g.interpolate_clamped(&gau.values, -2.0 * g.q_max());
        assert!(clamped);
        assert_eq!(v, gau.values[0]);
    }

    #[test]
    fn interpolation_2d() {
        let g = MomentumGrid::shared(96, 1.5).unwrap();
        let f = GridFunction2D::from_fn(g.clone(), Particle::One, |q, p| (-(q * q) - 0.5 * (q - p).powi(2)).exp());
        let (v, c) = f.interpolate(0.31, -0.42);
        assert!(!c);
        let exact = (-(0.31f64 * 0.31) - 0.5 * (0.73f64).powi(2)).exp();
        assert!((v - exact).abs() <= 1e-9);
        assert_eq!(f.interpolate(g.nodes()[3], g.nodes()[70]).0, f.at(3, 70));
        let norm2 = f.inner(&f);
        let exact = PI / 2f64.sqrt();
        assert_relative_eq!(norm2, exact, max_relative = 1e-10);
    }

    #[test]
    fn change_of_form_matches_closed_form() {
        // f(p1, p2, p3) with p3 = −p1 − p2
        let f = |p1: f64, p2: f64, p3: f64| (-(p1 * p1) - 0.7 * p2 * p2 - 0.4 * p3 * p3 + 0.3 * p1 * p2).exp();
        let g = MomentumGrid::shared(64, 1.5).unwrap();
        let src = GridFunction2D::from_fn(g.clone(), Particle::One, |p2, p1| f(p1, p2, -p1 - p2));
        let want_two = GridFunction2D::from_fn(g.clone(), Particle::Two, |p3, p2| f(-p2 - p3, p2, p3));
        let want_three = GridFunction2D::from_fn(g.clone(), Particle::Three, |p1, p3| f(p1, -p1 - p3, p3));
        for (target, want) in [(Particle::Two, want_two), (Particle::Three, want_three)] {
            let (got, _) = src.to_form(target);
            assert_eq!(got.form, target);
            let err = got.values.iter().zip(&want.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err < 1e-7, "{target:?}: {err}");
            // norms agree since the coordinate change has unit Jacobian
            assert_relative_eq!(got.norm(), src.norm(), max_relative = 1e-8);
        }
    }

    #[test]
    fn plan_matches_direct_interpolation() {
        let g = MomentumGrid::build(40, 1.0).unwrap();
        let vals: Vec<f64> = g.nodes().iter().map(|q| (q * 0.7).cos() / (1.0 + q * q)).collect();
        let pts = [-1e9, -3.0, -0.1, 0.0, 0.25, g.nodes()[5], 7.0, 1e9];
        let plan = g.plan(&pts);
        assert_eq!(plan.clamps(), 2);
        for (k, &q) in pts.iter().enumerate() {
            assert_eq!(plan.eval(k, &vals), g.interpolate_clamped(&vals, q).0);
        }
    }

    proptest! {
        #[test]
        fn interpolation_reproduces_constants(c in -1e3f64..1e3, q in -50.0f64..50.0, n in 4usize..40) {
            let g = MomentumGrid::build(2 * n, 1.3).unwrap();
            let vals = vec![c; g.len()];
            let (v, _) = g.interpolate_clamped(&vals, q);
            prop_assert!((v - c).abs() <= 1e-12 * c.abs().max(1.0));
        }

        #[test]
        fn integration_is_linear(a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let g = MomentumGrid::build(64, 1.0).unwrap();
            let f: Vec<f64> = g.nodes().iter().map(|q| (-q * q).exp()).collect();
            let h: Vec<f64> = g.nodes().iter().map(|q| 1.0 / (1.0 + q * q)).collect();
            let comb: Vec<f64> = f.iter().zip(&h).map(|(x, y)| a * x + b * y).collect();
            let lhs = g.integrate(&comb);
            let rhs = a * g.integrate(&f) + b * g.integrate(&h);
            prop_assert!((lhs - rhs).abs() <= 1e-14 * (a.abs() + b.abs()) * 4.0);
        }
    }
}
