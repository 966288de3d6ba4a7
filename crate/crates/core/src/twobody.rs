//! Two-body t-matrix of a scaled pair potential and its zero-range limit τ.
//!
//! The kernel solves
//!
//! t(k, k′) = v̂(ε(k−k′))/√(2π) − (1/√(2π)) ∫ dq v̂(ε(k−q)) (q²/2m + λ)⁻¹ t(q, k′)
//!
//! by Nyström discretization on a node set. A single LU factorization is
//! reused for every column.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Dyn, LU};

use crate::error::{Error, Result};
use crate::linalg;
use crate::potential::{Potential, SQRT_2PI};
use crate::quadrature::{MomentumGrid, Quadrature};

/// Pivot ratio below which the Nyström matrix counts as singular.
pub const SINGULAR_PIVOT_RATIO: f64 = 1e-11;

/// τ(λ) = (1/2π) α / (1 + α √(m/(2λ))).
pub fn tau(lambda: f64, alpha: f64, m: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput(format!("tau needs lambda > 0, got {lambda}")));
    }
    let den = 1.0 + alpha * (m / (2.0 * lambda)).sqrt();
    if den.abs() <= 1e-14 {
        return Err(Error::TauPole {
            lambda,
            pole: tau_pole(alpha, m).unwrap_or(lambda),
        });
    }
    Ok(alpha / (2.0 * PI * den))
}

/// Location m α²/2 of the pole of τ; only attractive couplings have one.
pub fn tau_pole(alpha: f64, m: f64) -> Option<f64> {
    (alpha < 0.0).then(|| m * alpha * alpha / 2.0)
}

/// ∫ dq (q²/2m + λ)⁻¹ = π √(2m/λ).
pub fn free_propagator_integral(lambda: f64, m: f64) -> f64 {
    PI * (2.0 * m / lambda).sqrt()
}

/// Discretized t^ε(λ; k, k′): values on the node set, plus optional extra
/// columns at off-node k′.
#[derive(Debug, Clone)]
pub struct TMatrixKernel {
    pub lambda: f64,
    pub eps: f64,
    pub nodes: Vec<f64>,
    /// w_j / (q_j²/2m + λ).
    pub propagator: Vec<f64>,
    /// t(q_i, q_j).
    pub values: DMatrix<f64>,
    pub extra_points: Vec<f64>,
    /// t(q_i, extra_points[c]).
    pub extra: DMatrix<f64>,
    pub pivot_ratio: f64,
}

impl TMatrixKernel {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// max |t_ij − t_ji|.
    pub fn asymmetry(&self) -> f64 {
        (&self.values - self.values.transpose()).amax()
    }

    /// t(k, q_j) for an arbitrary k via the Nyström interpolation formula.
    pub fn eval_row(&self, pot: &dyn Potential, k: f64, col: usize) -> f64 {
        let kp = self.nodes[col];
        let mut acc = pot.fourier(self.eps * (k - kp));
        for (j, &q) in self.nodes.iter().enumerate() {
            acc -= pot.fourier(self.eps * (k - q)) * self.propagator[j] * self.values[(j, col)];
        }
        acc / SQRT_2PI
    }
}

/// Assembles 1 + V D with V_ij = v̂(ε(q_i − q_j))/√(2π), D_j = w_j/(q_j²/2m+λ).
fn nystrom_matrix(pot: &dyn Potential, eps: f64, rule: &Quadrature, prop: &[f64]) -> DMatrix<f64> {
    let n = rule.len();
    DMatrix::from_fn(n, n, |i, j| {
        let v = pot.fourier(eps * (rule.nodes[i] - rule.nodes[j])) / SQRT_2PI;
        let d = if i == j { 1.0 } else { 0.0 };
        d + v * prop[j]
    })
}

fn propagator(rule: &Quadrature, lambda: f64, m: f64) -> Vec<f64> {
    rule.nodes
        .iter()
        .zip(&rule.weights)
        .map(|(q, w)| w / (q * q / (2.0 * m) + lambda))
        .collect()
}

fn pivot_ratio(lu: &LU<f64, Dyn, Dyn>) -> f64 {
    let u = lu.u();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi == 0.0 {
        0.0
    } else {
        lo / hi
    }
}

/// Nyström solution of the t-matrix equation at energy λ on `rule`, with
/// extra columns at the off-node momenta `extra`.
pub fn solve_tmatrix_on(
    pot: &dyn Potential,
    eps: f64,
    lambda: f64,
    m: f64,
    rule: &Quadrature,
    extra: &[f64],
) -> Result<TMatrixKernel> {
    if !(lambda > 0.0 && eps > 0.0 && m > 0.0) {
        return Err(Error::InvalidInput(format!(
            "t-matrix needs positive lambda, eps and mass (got {lambda}, {eps}, {m})"
        )));
    }
    let n = rule.len();
    let prop = propagator(rule, lambda, m);
    let a = nystrom_matrix(pot, eps, rule, &prop);
    let lu = a.lu();
    let ratio = pivot_ratio(&lu);
    if !(ratio > SINGULAR_PIVOT_RATIO) {
        return Err(Error::NearSingular {
            lambda,
            condition: 1.0 / ratio,
        });
    }
    let k = extra.len();
    let mut rhs = DMatrix::from_fn(n, n + k, |i, c| {
        let kp = if c < n { rule.nodes[c] } else { extra[c - n] };
        pot.fourier(eps * (rule.nodes[i] - kp)) / SQRT_2PI
    });
    lu.solve_mut(&mut rhs);
    let values = rhs.columns(0, n).into_owned();
    let extra_m = rhs.columns(n, k).into_owned();
    Ok(TMatrixKernel {
        lambda,
        eps,
        nodes: rule.nodes.clone(),
        propagator: prop,
        values,
        extra_points: extra.to_vec(),
        extra: extra_m,
        pivot_ratio: ratio,
    })
}

/// t-matrix on the nodes of a momentum grid.
pub fn solve_tmatrix(pot: &dyn Potential, eps: f64, lambda: f64, m: f64, grid: &MomentumGrid) -> Result<TMatrixKernel> {
    solve_tmatrix_on(pot, eps, lambda, m, &grid.rule(), &[])
}

/// Symmetrized Neumann operator D^½ V D^½ of the t-matrix equation.
fn neumann_sym(pot: &dyn Potential, eps: f64, lambda: f64, m: f64, grid: &MomentumGrid) -> DMatrix<f64> {
    let rule = grid.rule();
    let prop = propagator(&rule, lambda, m);
    let sd: Vec<f64> = prop.iter().map(|d| d.sqrt()).collect();
    let n = rule.len();
    DMatrix::from_fn(n, n, |i, j| {
        sd[i] * pot.fourier(eps * (rule.nodes[i] - rule.nodes[j])) / SQRT_2PI * sd[j]
    })
}

/// Spectral radius of the discretized Neumann operator V D at λ.
pub fn neumann_radius(pot: &dyn Potential, eps: f64, lambda: f64, m: f64, grid: &MomentumGrid) -> f64 {
    linalg::spectral_radius_sym(&neumann_sym(pot, eps, lambda, m, grid))
}

/// Smallest λ whose Neumann spectral radius is at most `target`
/// (the empirical λ̄ of the a-priori regime).
pub fn admissible_lambda(pot: &dyn Potential, eps: f64, m: f64, grid: &MomentumGrid, target: f64) -> Result<f64> {
    let r = |l: f64| neumann_radius(pot, eps, l, m, grid);
    let mut hi = 1.0;
    while r(hi) > target {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoRoot { lo: 1.0, hi });
        }
    }
    let mut lo = hi / 2.0;
    while r(lo) <= target {
        hi = lo;
        lo /= 2.0;
        if lo < 1e-12 {
            return Ok(lo);
        }
    }
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if r(mid) <= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi / lo - 1.0 < 1e-10 {
            break;
        }
    }
    Ok(hi)
}

/// Ground-state binding energy λ* > 0 of the scaled potential: the largest λ
/// where 1 + D^½VD^½ has a zero eigenvalue. That eigenvalue is the signed
/// version of the smallest singular value of the Nyström matrix, which
/// provides a bracket for bisection.
pub fn tmatrix_pole(pot: &dyn Potential, eps: f64, m: f64, grid: &MomentumGrid) -> Result<f64> {
    let f = |l: f64| {
        let mut s = neumann_sym(pot, eps, l, m, grid);
        for i in 0..s.nrows() {
            s[(i, i)] += 1.0;
        }
        linalg::min_eigenvalue_sym(&s)
    };
    let guess = tau_pole(pot.alpha(), m).unwrap_or(1.0).max(1e-6);
    let mut hi = guess * 2.0;
    let mut tries = 0;
    while f(hi) <= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(Error::NoRoot { lo: guess, hi });
        }
    }
    let mut lo = hi / 2.0;
    while f(lo) > 0.0 {
        hi = lo;
        lo /= 2.0;
        if lo < guess * 1e-6 {
            return Err(Error::NoRoot { lo, hi });
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// max_ij |t(q_i, q_j) − τ| / (|q_i|^b + |q_j|^b + 1).
pub fn weighted_sup_diff(kernel: &TMatrixKernel, tau_value: f64, b: f64) -> f64 {
    let n = kernel.len();
    let pw: Vec<f64> = kernel.nodes.iter().map(|q| q.abs().powf(b)).collect();
    let mut best = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let d = (kernel.values[(i, j)] - tau_value).abs() / (pw[i] + pw[j] + 1.0);
            best = best.max(d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{Gaussian, SquareWell, Zero};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn tau_examples() {
        assert_eq!(tau(3.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(tau_pole(-2.0, 1.0), Some(2.0));
        assert!(matches!(tau(2.0, -2.0, 1.0), Err(Error::TauPole { .. })));
        assert_relative_eq!(tau(1.0, 2.0 * PI, 2.0).unwrap(), 1.0 / (1.0 + 2.0 * PI), epsilon = 1e-15);
        assert!(tau(0.0, 1.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn tau_fixed_point(alpha in -5.0f64..5.0, m in 0.1f64..5.0, lambda in 0.01f64..100.0) {
            prop_assume!(tau_pole(alpha, m).is_none_or(|p| (lambda - p).abs() > 1e-3 * p));
            let t = tau(lambda, alpha, m).unwrap();
            let v0 = alpha / SQRT_2PI;
            let rhs = v0 / SQRT_2PI - t * v0 * free_propagator_integral(lambda, m) / SQRT_2PI;
            prop_assert!((t - rhs).abs() <= 1e-12 * t.abs().max(1e-3));
        }

        #[test]
        fn tau_bounded_far_from_pole(alpha in -5.0f64..-0.01, m in 0.1f64..5.0, factor in 1.0001f64..100.0) {
            let lambda = 2.0 * alpha * alpha * m * factor;
            prop_assert!(tau(lambda, alpha, m).unwrap().abs() <= alpha.abs() / PI);
        }
    }

    #[test]
    fn zero_potential_gives_zero_kernel() {
        let g = MomentumGrid::build(16, 1.0).unwrap();
        let t = solve_tmatrix(&Zero, 0.5, 2.0, 0.5, &g).unwrap();
        assert_eq!(t.max_abs(), 0.0);
    }

    #[test]
    fn kernel_is_symmetric() {
        let g = MomentumGrid::build(48, 2.0).unwrap();
        let sw = SquareWell::with_alpha(-2.0, 1.0);
        let t = solve_tmatrix(&sw, 0.3, 5.0, 0.5, &g).unwrap();
        assert!(t.asymmetry() <= 1e-10 * t.max_abs(), "{}", t.asymmetry());
    }

    /// One Neumann step as the oracle for the large-λ regime: the deviation
    /// from the Born term shrinks like 1/√λ.
    #[test]
    fn born_dominance_at_large_lambda() {
        let g = MomentumGrid::build(128, 4.0).unwrap();
        let pot = Gaussian::with_alpha(1.0, 1.0);
        // rows far out in the tail are limited by the node spacing there
        let inner: Vec<usize> = (0..g.len()).filter(|&i| g.nodes()[i].abs() <= 3.0).collect();
        let mut devs = Vec::new();
        for &lambda in &[100.0, 400.0, 1600.0] {
            let t = solve_tmatrix(&pot, 1.0, lambda, 0.5, &g).unwrap();
            let mut dev = 0.0f64;
            let mut born_max = 0.0f64;
            for &i in &inner {
                for &j in &inner {
                    let born = pot.fourier(g.nodes()[i] - g.nodes()[j]) / SQRT_2PI;
                    dev = dev.max((t.values[(i, j)] - born).abs());
                    born_max = born_max.max(born.abs());
                }
            }
            devs.push(dev / born_max);
        }
        // each quadrupling of λ at least halves the deviation
        for w in devs.windows(2) {
            assert!(w[0] / w[1] >= 2.0, "{devs:?}");
        }
    }

    #[test]
    fn off_node_rows_match_nodes() {
        let g = MomentumGrid::build(32, 1.0).unwrap();
        let sw = SquareWell::with_alpha(-1.0, 1.0);
        let t = solve_tmatrix_on(&sw, 0.5, 3.0, 0.5, &g.rule(), &[0.3]).unwrap();
        for i in [0, 5, 16] {
            assert_relative_eq!(t.eval_row(&sw, g.nodes()[i], 7), t.values[(i, 7)], epsilon = 1e-13);
        }
        // the extra column agrees with the row formula by symmetry
        let mut col = vec![0.0; 0];
        for i in 0..g.len() {
            col.push(t.extra[(i, 0)]);
        }
        let row_at = t.eval_row(&sw, 0.3, 10);
        assert_relative_eq!(row_at, col[10], epsilon = 1e-12);
    }

    #[test]
    fn pole_of_wide_well_matches_transcendental_equation() {
        // exact even bound state of a finite well: k tan(kR) = κ
        let m = 0.5;
        let sw = SquareWell::with_alpha(-2.0, 1.0);
        let eps = 0.5;
        let v0 = sw.depth / eps;
        let r = 0.5 * sw.width * eps;
        // bisection in θ = kR on the first branch of tan
        let theta_max = (r * (2.0 * m * v0).sqrt()).min(PI / 2.0 - 1e-12);
        let g_fn = |theta: f64| {
            let k = theta / r;
            let b = v0 - k * k / (2.0 * m);
            k * theta.tan() - (2.0 * m * b).sqrt()
        };
        let (mut lo, mut hi) = (1e-12, theta_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g_fn(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k = 0.5 * (lo + hi) / r;
        let exact = v0 - k * k / (2.0 * m);
        // the sinc tail of the well limits Nyström convergence to algebraic order
        let grid = MomentumGrid::build(128, 2.0).unwrap();
        let got = tmatrix_pole(&sw, eps, m, &grid).unwrap();
        assert_relative_eq!(got, exact, max_relative = 1e-4);
    }

    #[test]
    fn neumann_radius_decreases() {
        let g = MomentumGrid::build(32, 1.0).unwrap();
        let sw = SquareWell::with_alpha(-2.0, 1.0);
        let r1 = neumann_radius(&sw, 0.5, 2.0, 0.5, &g);
        let r2 = neumann_radius(&sw, 0.5, 8.0, 0.5, &g);
        assert!(r2 < r1);
        let lbar = admissible_lambda(&sw, 0.5, 0.5, &g, 0.9).unwrap();
        assert!(neumann_radius(&sw, 0.5, lbar, 0.5, &g) <= 0.9);
        assert!(neumann_radius(&sw, 0.5, lbar * 0.99, 0.5, &g) > 0.9);
    }
}
