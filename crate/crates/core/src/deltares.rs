//! The zero-range resolvent R(λ) = (H + λ)⁻¹.
//!
//! The resolvent is R₀f plus the potential generated by three charges
//! living on the coincidence lines x_γ = 0. In momentum space the charges
//! ξ^(ℓ)(p), one per spectator, solve a 3N × 3N linear system:
//!
//! ξ^(ℓ)(p) = −τ_γ(λ + p²/2μ_ℓ) [ ∫ f/D_ℓ + ∫ ξ^(ℓ+1)(q)/D_ℓ(q, p) + ∫ ξ^(ℓ+2)(q)/D′_ℓ(q, p) ]
//!
//! with D_ℓ(q, p) = K(q, p) + λ in the natural coordinates (p_{ℓ+1}, p_ℓ)
//! and D′_ℓ the same energy in the coordinates (p_{ℓ+2}, p_ℓ).
//!
//! Two assemblies are provided: the charge form above, and the operator
//! form R₀ − G(1 + AM)⁻¹AĞ built from the explicit Ğ, G and M kernels.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{MassConfig, PairIndex, Particle};
use crate::linalg;
use crate::potential::SQRT_2PI;
use crate::quadrature::{dot, GridFunction1D, GridFunction2D, MomentumGrid};
use crate::twobody::tau;

/// Pivot ratio below which the charge system is rejected.
pub const ILL_CONDITIONED_PIVOT_RATIO: f64 = 1e-12;

/// The diagonal coupling matrix A = diag(α_23, α_31, α_12).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingMatrix {
    pub alpha: [f64; 3],
}

impl CouplingMatrix {
    pub fn new(a23: f64, a31: f64, a12: f64) -> Self {
        CouplingMatrix { alpha: [a23, a31, a12] }
    }

    pub fn uniform(a: f64) -> Self {
        CouplingMatrix { alpha: [a; 3] }
    }

    pub fn zero() -> Self {
        CouplingMatrix::uniform(0.0)
    }

    pub fn get(&self, pair: PairIndex) -> f64 {
        self.alpha[pair.slot()]
    }

    pub fn is_zero(&self) -> bool {
        self.alpha.iter().all(|a| *a == 0.0)
    }

    /// Largest two-body binding energy max m_γα_γ²/2 over attractive pairs;
    /// zero when no pair binds.
    pub fn two_body_threshold(&self, mc: &MassConfig) -> f64 {
        PairIndex::ALL
            .iter()
            .filter_map(|&p| mc.two_body_threshold(p, self.get(p)))
            .fold(0.0, f64::max)
    }
}

/// The three charges ξ^(1), ξ^(2), ξ^(3) on the spectator-momentum grid.
#[derive(Debug, Clone)]
pub struct ChargeVector {
    pub lambda: f64,
    pub xi: [GridFunction1D; 3],
    /// Inverse LU pivot ratio of the charge system.
    pub condition: f64,
}

impl ChargeVector {
    pub fn get(&self, l: Particle) -> &GridFunction1D {
        &self.xi[l.slot()]
    }

    /// Σ_j ‖ξ^(j)‖.
    pub fn norm_sum(&self) -> f64 {
        self.xi.iter().map(|x| x.norm()).sum()
    }
}

/// D_ℓ(q, p) = K + λ with q = p_{ℓ+1}, p = p_ℓ.
#[inline]
fn d_natural(mc: &MassConfig, l: Particle, q: f64, p: f64, lambda: f64) -> f64 {
    mc.kinetic_natural(l, q, p) + lambda
}

/// D′_ℓ(q, p) = K + λ with q = p_{ℓ+2}, p = p_ℓ.
#[inline]
fn d_swapped(mc: &MassConfig, l: Particle, q: f64, p: f64, lambda: f64) -> f64 {
    mc.kinetic_swapped(l, q, p) + lambda
}

/// Pointwise division by K + λ in the function's own coordinates.
pub fn apply_free_resolvent(f: &GridFunction2D, lambda: f64, mc: &MassConfig) -> GridFunction2D {
    let nodes = f.grid.nodes();
    let n = nodes.len();
    let mut out = f.clone();
    for i in 0..n {
        for j in 0..n {
            out.values[i * n + j] /= d_natural(mc, f.form, nodes[i], nodes[j], lambda);
        }
    }
    out
}

/// Samples of a 2D function along the lines p_ℓ = const.
///
/// `values[i * n + j]` is the function at the j-th point of the line
/// through the i-th node of p_ℓ, and `energy` holds K + λ there. Line
/// points are chosen on source nodes whenever one of the source axes is
/// transverse to the line (unit Jacobian in every case); otherwise the
/// function is first re-expressed in the natural coordinates of ℓ.
struct LineSamples {
    values: Vec<f64>,
    energy: Vec<f64>,
}

fn line_samples(f: &GridFunction2D, l: Particle, lambda: f64, mc: &MassConfig) -> LineSamples {
    let n = f.n();
    let nodes = f.grid.nodes();
    let shift = (l.slot() + 3 - f.form.slot()) % 3;
    let mut values = vec![0.0; n * n];
    let mut energy = vec![0.0; n * n];
    match shift {
        0 => {
            // p_ℓ is the second axis: walk the first
            for i in 0..n {
                for j in 0..n {
                    values[i * n + j] = f.at(j, i);
                    energy[i * n + j] = d_natural(mc, l, nodes[j], nodes[i], lambda);
                }
            }
        }
        1 => {
            // p_ℓ is the first axis: walk the second
            for i in 0..n {
                for j in 0..n {
                    values[i * n + j] = f.at(i, j);
                    energy[i * n + j] = d_natural(mc, f.form, nodes[i], nodes[j], lambda);
                }
            }
        }
        _ => {
            let (g, clamps) = f.to_form(l);
            if clamps > 0 {
                log::debug!("line samples for spectator {} clamp {clamps} points", l.label());
            }
            return line_samples(&g, l, lambda, mc);
        }
    }
    LineSamples { values, energy }
}

/// Ğ_γ f(p) = (1/√(2π)) ∫ dk (k²/2m_γ + p²/2μ_ℓ + λ)⁻¹ f(k, p).
pub fn breve_g(f: &GridFunction2D, lambda: f64, pair: PairIndex, mc: &MassConfig) -> GridFunction1D {
    let l = pair.companion();
    let s = line_samples(f, l, lambda, mc);
    let w = f.grid.weights();
    let n = w.len();
    let values = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                acc += w[j] * s.values[i * n + j] / s.energy[i * n + j];
            }
            acc / SQRT_2PI
        })
        .collect();
    GridFunction1D {
        grid: f.grid.clone(),
        values,
    }
}

/// Trace ψ|_{π_γ}(p) = (1/√(2π)) ∫ dk ψ(k, p).
pub fn trace(psi: &GridFunction2D, pair: PairIndex, mc: &MassConfig) -> GridFunction1D {
    let l = pair.companion();
    let s = line_samples(psi, l, 1.0, mc);
    let w = psi.grid.weights();
    let n = w.len();
    let values = (0..n)
        .map(|i| dot(w, &s.values[i * n..(i + 1) * n]) / SQRT_2PI)
        .collect();
    GridFunction1D {
        grid: psi.grid.clone(),
        values,
    }
}

/// G_γ q = (1/√(2π)) q̂(p_ℓ)/(K + λ), sampled in the coordinates `form`.
pub fn g_potential(q: &GridFunction1D, lambda: f64, pair: PairIndex, mc: &MassConfig, form: Particle) -> GridFunction2D {
    let l = pair.companion();
    let grid = q.grid.clone();
    let n = grid.len();
    let nodes = grid.nodes();
    let mut out = GridFunction2D::zeros(grid.clone(), form);
    let shift = (l.slot() + 3 - form.slot()) % 3;
    let mut row = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let charge = match shift {
                0 => q.values[j],
                1 => q.values[i],
                _ => {
                    grid.interpolation_row(-nodes[i] - nodes[j], &mut row);
                    dot(&row, &q.values)
                }
            };
            out.values[i * n + j] = charge / (SQRT_2PI * d_natural(mc, form, nodes[i], nodes[j], lambda));
        }
    }
    out
}

/// (1/2)√(2m_γ/(p²/2μ_ℓ + λ)), the diagonal symbol of M.
#[inline]
pub fn m_diag_symbol(p: f64, lambda: f64, pair: PairIndex, mc: &MassConfig) -> f64 {
    let l = pair.companion();
    0.5 * (2.0 * mc.pair_mass(pair) / (p * p / (2.0 * mc.spectator_mass(l)) + lambda)).sqrt()
}

/// M_γγ q̂.
pub fn m_diag(q: &GridFunction1D, lambda: f64, pair: PairIndex, mc: &MassConfig) -> GridFunction1D {
    let values = q
        .grid
        .nodes()
        .iter()
        .zip(&q.values)
        .map(|(&p, &v)| m_diag_symbol(p, lambda, pair, mc) * v)
        .collect();
    GridFunction1D {
        grid: q.grid.clone(),
        values,
    }
}

/// Off-diagonal kernel (1/2π) w_j / D for the block (to, from) on a grid.
fn offdiag_block(grid: &MomentumGrid, lambda: f64, from: PairIndex, to: PairIndex, mc: &MassConfig) -> DMatrix<f64> {
    let l = to.companion();
    let lf = from.companion();
    assert_ne!(l, lf, "off-diagonal block needs distinct pairs");
    let nodes = grid.nodes();
    let w = grid.weights();
    let n = nodes.len();
    let natural = lf == l.next();
    DMatrix::from_fn(n, n, |i, j| {
        let d = if natural {
            d_natural(mc, l, nodes[j], nodes[i], lambda)
        } else {
            d_swapped(mc, l, nodes[j], nodes[i], lambda)
        };
        w[j] / (2.0 * PI * d)
    })
}

/// M_{to,from} q̂(p) = (1/2π) ∫ dp′ q̂(p′) / D(p′, p).
pub fn m_offdiag(q: &GridFunction1D, lambda: f64, from: PairIndex, to: PairIndex, mc: &MassConfig) -> GridFunction1D {
    let k = offdiag_block(&q.grid, lambda, from, to, mc);
    let v = &k * DVector::from_column_slice(&q.values);
    GridFunction1D {
        grid: q.grid.clone(),
        values: v.as_slice().to_vec(),
    }
}

/// The discretized 3N × 3N operator M(λ), blocks ordered 23, 31, 12.
#[derive(Debug, Clone)]
pub struct MOperator {
    pub lambda: f64,
    pub matrix: DMatrix<f64>,
}

impl MOperator {
    pub fn assemble(grid: &MomentumGrid, lambda: f64, mc: &MassConfig) -> MOperator {
        let n = grid.len();
        let mut matrix = DMatrix::zeros(3 * n, 3 * n);
        for to in PairIndex::ALL {
            for from in PairIndex::ALL {
                let (r, c) = (to.slot() * n, from.slot() * n);
                if to == from {
                    for (i, &p) in grid.nodes().iter().enumerate() {
                        matrix[(r + i, c + i)] = m_diag_symbol(p, lambda, to, mc);
                    }
                } else {
                    let block = offdiag_block(grid, lambda, from, to, mc);
                    matrix.view_mut((r, c), (n, n)).copy_from(&block);
                }
            }
        }
        MOperator { lambda, matrix }
    }

    /// 1 + A M.
    pub fn one_plus_am(&self, a: &CouplingMatrix) -> DMatrix<f64> {
        let n3 = self.matrix.nrows();
        let n = n3 / 3;
        DMatrix::from_fn(n3, n3, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id + a.alpha[i / n] * self.matrix[(i, j)]
        })
    }

    /// Norm of the (to, from) block in L²(ℝ) (quadrature-weighted).
    pub fn block_norm(&self, grid: &MomentumGrid, to: PairIndex, from: PairIndex) -> f64 {
        let n = grid.len();
        let block = self.matrix.view((to.slot() * n, from.slot() * n), (n, n)).into_owned();
        linalg::weighted_operator_norm(&block, grid.weights())
    }

    /// ‖A M‖ in L²(ℝ)³.
    pub fn am_norm(&self, grid: &MomentumGrid, a: &CouplingMatrix) -> f64 {
        let n = grid.len();
        let mut am = self.matrix.clone();
        for i in 0..3 * n {
            am.row_mut(i).scale_mut(a.alpha[i / n]);
        }
        let w: Vec<f64> = (0..3 * n).map(|i| grid.weights()[i % n]).collect();
        linalg::weighted_operator_norm(&am, &w)
    }
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

/// The limit resolvent at fixed λ, with both assemblies factorized once.
pub struct LimitResolvent {
    pub grid: Arc<MomentumGrid>,
    pub mc: MassConfig,
    pub couplings: CouplingMatrix,
    pub lambda: f64,
    /// τ_γ(λ + p_i²/2μ_ℓ), per spectator.
    tau_values: [Vec<f64>; 3],
    charge_lu: LU<f64, Dyn, Dyn>,
    operator: MOperator,
    operator_lu: LU<f64, Dyn, Dyn>,
    pub condition: f64,
}

impl LimitResolvent {
    pub fn new(grid: Arc<MomentumGrid>, mc: MassConfig, couplings: CouplingMatrix, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {lambda}")));
        }
        let threshold = couplings.two_body_threshold(&mc);
        if lambda <= threshold {
            return Err(Error::TauPole { lambda, pole: threshold });
        }
        let n = grid.len();
        let nodes = grid.nodes().to_vec();
        let mut tau_values: [Vec<f64>; 3] = Default::default();
        for l in Particle::ALL {
            let pair = l.pair();
            let mu = mc.spectator_mass(l);
            tau_values[l.slot()] = nodes
                .iter()
                .map(|p| tau(lambda + p * p / (2.0 * mu), couplings.get(pair), mc.pair_mass(pair)))
                .collect::<Result<Vec<f64>>>()?;
        }
        let operator = MOperator::assemble(&grid, lambda, &mc);
        // charge form: 1 + T K, with K the off-diagonal part of M scaled by 2π
        let mut charge = DMatrix::identity(3 * n, 3 * n);
        for l in Particle::ALL {
            for lf in [l.next(), l.prev()] {
                let (r, c) = (l.slot() * n, lf.slot() * n);
                for i in 0..n {
                    let t = tau_values[l.slot()][i];
                    for j in 0..n {
                        charge[(r + i, c + j)] = t * 2.0 * PI * operator.matrix[(r + i, c + j)];
                    }
                }
            }
        }
        let charge_lu = charge.lu();
        let ratio = pivot_ratio(&charge_lu);
        if !(ratio > ILL_CONDITIONED_PIVOT_RATIO) {
            return Err(Error::IllConditioned {
                lambda,
                condition: 1.0 / ratio,
            });
        }
        let operator_lu = operator.one_plus_am(&couplings).lu();
        Ok(LimitResolvent {
            grid,
            mc,
            couplings,
            lambda,
            tau_values,
            charge_lu,
            operator,
            operator_lu,
            condition: 1.0 / ratio,
        })
    }

    pub fn m_operator(&self) -> &MOperator {
        &self.operator
    }

    /// Charges for the source f.
    pub fn solve_charges(&self, f: &GridFunction2D) -> ChargeVector {
        let n = self.grid.len();
        let mut rhs = DVector::zeros(3 * n);
        if !self.couplings.is_zero() {
            for l in Particle::ALL {
                let g = breve_g(f, self.lambda, l.pair(), &self.mc);
                for i in 0..n {
                    // ∫ f/D = √(2π) Ğf
                    rhs[l.slot() * n + i] = -self.tau_values[l.slot()][i] * SQRT_2PI * g.values[i];
                }
            }
            self.charge_lu.solve_mut(&mut rhs);
        }
        let part = |l: usize| GridFunction1D {
            grid: self.grid.clone(),
            values: rhs.as_slice()[l * n..(l + 1) * n].to_vec(),
        };
        ChargeVector {
            lambda: self.lambda,
            xi: [part(0), part(1), part(2)],
            condition: self.condition,
        }
    }

    /// ψ = [f + ξ^(1)(p1) + ξ^(2)(p2) + ξ^(3)(p3)] / (K + λ), in the form of f.
    pub fn assemble(&self, f: &GridFunction2D, xi: &ChargeVector) -> GridFunction2D {
        let mut psi = f.clone();
        for l in Particle::ALL {
            // G_γ q with q̂ = √(2π)ξ carries no 1/√(2π) after the rescaling
            let g = g_potential(xi.get(l), self.lambda, l.pair(), &self.mc, f.form);
            psi.axpy(SQRT_2PI, &g);
        }
        let nodes = f.grid.nodes();
        let n = nodes.len();
        for i in 0..n {
            for j in 0..n {
                let d = d_natural(&self.mc, f.form, nodes[i], nodes[j], self.lambda);
                psi.values[i * n + j] = f.values[i * n + j] / d + (psi.values[i * n + j] - f.values[i * n + j]);
            }
        }
        psi
    }

    /// Charge-form application R(λ)f.
    pub fn apply(&self, f: &GridFunction2D) -> GridFunction2D {
        let xi = self.solve_charges(f);
        self.assemble(f, &xi)
    }

    /// Operator-form application R₀f − G(1 + AM)⁻¹AĞf.
    pub fn apply_operator_path(&self, f: &GridFunction2D) -> GridFunction2D {
        let n = self.grid.len();
        let mut out = apply_free_resolvent(f, self.lambda, &self.mc);
        if self.couplings.is_zero() {
            return out;
        }
        let mut y = DVector::zeros(3 * n);
        for pair in PairIndex::ALL {
            let g = breve_g(f, self.lambda, pair, &self.mc);
            for i in 0..n {
                y[pair.slot() * n + i] = self.couplings.get(pair) * g.values[i];
            }
        }
        self.operator_lu.solve_mut(&mut y);
        for pair in PairIndex::ALL {
            let q = GridFunction1D {
                grid: self.grid.clone(),
                values: y.as_slice()[pair.slot() * n..(pair.slot() + 1) * n].to_vec(),
            };
            let g = g_potential(&q, self.lambda, pair, &self.mc, f.form);
            out.axpy(-1.0, &g);
        }
        out
    }
}

/// Charges for a single source; factorizes the system on the fly.
pub fn solve_charges(f: &GridFunction2D, lambda: f64, a: &CouplingMatrix, mc: &MassConfig) -> Result<ChargeVector> {
    let r = LimitResolvent::new(f.grid.clone(), *mc, *a, lambda)?;
    Ok(r.solve_charges(f))
}

pub fn apply_limit_resolvent(f: &GridFunction2D, lambda: f64, a: &CouplingMatrix, mc: &MassConfig) -> Result<GridFunction2D> {
    let r = LimitResolvent::new(f.grid.clone(), *mc, *a, lambda)?;
    Ok(r.apply(f))
}

/// ‖√(2π)ξ^(ℓ) + α_γ ψ|_{π_γ}‖ / ‖ξ^(ℓ)‖ for each pair (zero when ξ^(ℓ) = 0).
///
/// At large momenta the ridges ξ^(j)(p_j)/(K + λ) are narrower than the
/// grid spacing along two of the three lines, so a tensor-grid ψ cannot
/// carry them. The trace is therefore split: the ridges are removed from
/// the samples of ψ and the smooth remainder is integrated on the line,
/// while each ridge is integrated along its own momentum variable (unit
/// Jacobian, nodes on the ridge).
pub fn check_boundary(
    psi: &GridFunction2D,
    xi: &ChargeVector,
    lambda: f64,
    a: &CouplingMatrix,
    mc: &MassConfig,
) -> [f64; 3] {
    let grid = psi.grid.clone();
    let (nodes, w) = (grid.nodes(), grid.weights());
    let n = nodes.len();
    let mut remainder = psi.clone();
    for l in Particle::ALL {
        let g = g_potential(xi.get(l), lambda, l.pair(), mc, psi.form);
        remainder.axpy(-SQRT_2PI, &g);
    }
    let mut out = [0.0; 3];
    for pair in PairIndex::ALL {
        let l = pair.companion();
        let x = xi.get(l);
        let norm = x.norm();
        if norm == 0.0 {
            continue;
        }
        let smooth = trace(&remainder, pair, mc);
        let (next, prev) = (xi.get(l.next()), xi.get(l.prev()));
        let values = (0..n)
            .map(|i| {
                let p = nodes[i];
                let mut ridge = 0.0;
                for k in 0..n {
                    let q = nodes[k];
                    let dn = d_natural(mc, l, q, p, lambda);
                    ridge += w[k] * ((x.values[i] + next.values[k]) / dn + prev.values[k] / d_swapped(mc, l, q, p, lambda));
                }
                let tr = smooth.values[i] + ridge / SQRT_2PI;
                SQRT_2PI * x.values[i] + a.get(pair) * tr
            })
            .collect();
        let res = GridFunction1D { grid: grid.clone(), values };
        out[pair.slot()] = res.norm() / norm;
    }
    out
}

/// Sign and log|det| of 1 + A M(λ).
pub fn bound_state_det(lambda: f64, a: &CouplingMatrix, mc: &MassConfig, grid: &MomentumGrid) -> (f64, f64) {
    let m = MOperator::assemble(grid, lambda, mc).one_plus_am(a);
    linalg::log_det(&m)
}

/// Smallest singular value of 1 + A M(λ).
pub fn bound_state_sigma_min(lambda: f64, a: &CouplingMatrix, mc: &MassConfig, grid: &MomentumGrid) -> f64 {
    let m = MOperator::assemble(grid, lambda, mc).one_plus_am(a);
    linalg::sigma_min(&m)
}

/// One scan sample of the bound-state criteria.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanPoint {
    pub lambda: f64,
    pub det_sign: f64,
    pub log_abs_det: f64,
    pub sigma_min: f64,
}

/// Roots of det(1 + AM(λ)) located by both criteria.
#[derive(Debug, Clone, Serialize)]
pub struct BoundStates {
    pub threshold: f64,
    pub scan: Vec<ScanPoint>,
    /// Sign changes of det refined by bisection.
    pub det_roots: Vec<f64>,
    /// Minima of σ_min refined by golden section.
    pub sigma_roots: Vec<f64>,
}

/// Scans λ over (lo, hi) on a geometric mesh of `steps` points, then refines
/// each det sign change by bisection and each σ_min dip by golden section.
pub fn find_bound_states(
    a: &CouplingMatrix,
    mc: &MassConfig,
    grid: &MomentumGrid,
    lo: f64,
    hi: f64,
    steps: usize,
) -> Result<BoundStates> {
    let threshold = a.two_body_threshold(mc);
    if !(lo > threshold && hi > lo && steps >= 3) {
        return Err(Error::InvalidInput(format!(
            "bound-state scan needs threshold {threshold} < lo < hi and at least 3 steps"
        )));
    }
    let mut scan = Vec::with_capacity(steps);
    for k in 0..steps {
        let lambda = lo * (hi / lo).powf(k as f64 / (steps - 1) as f64);
        let m = MOperator::assemble(grid, lambda, mc).one_plus_am(a);
        let (det_sign, log_abs_det) = linalg::log_det(&m);
        scan.push(ScanPoint {
            lambda,
            det_sign,
            log_abs_det,
            sigma_min: linalg::sigma_min(&m),
        });
    }
    let det_sign = |l: f64| bound_state_det(l, a, mc, grid).0;
    let sigma = |l: f64| bound_state_sigma_min(l, a, mc, grid);

    let mut det_roots = Vec::new();
    for w in scan.windows(2) {
        if w[0].det_sign * w[1].det_sign < 0.0 {
            let (mut x0, mut x1) = (w[0].lambda, w[1].lambda);
            let s0 = w[0].det_sign;
            while x1 - x0 > 1e-10 * x1 {
                let mid = 0.5 * (x0 + x1);
                if det_sign(mid) == s0 {
                    x0 = mid;
                } else {
                    x1 = mid;
                }
            }
            det_roots.push(0.5 * (x0 + x1));
        }
    }

    let mut sigma_roots = Vec::new();
    for k in 1..scan.len().saturating_sub(1) {
        let (a0, a1, a2) = (scan[k - 1].sigma_min, scan[k].sigma_min, scan[k + 1].sigma_min);
        if a1 <= a0 && a1 < a2 {
            let (mut x0, mut x3) = (scan[k - 1].lambda, scan[k + 1].lambda);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            let mut x1 = x3 - g * (x3 - x0);
            let mut x2 = x0 + g * (x3 - x0);
            let (mut f1, mut f2) = (sigma(x1), sigma(x2));
            while x3 - x0 > 1e-10 * x3 {
                if f1 < f2 {
                    x3 = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = x3 - g * (x3 - x0);
                    f1 = sigma(x1);
                } else {
                    x0 = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = x0 + g * (x3 - x0);
                    f2 = sigma(x2);
                }
            }
            let root = 0.5 * (x0 + x3);
            // keep only genuine zeros, not shallow minima
            if sigma(root) < 1e-6 {
                sigma_roots.push(root);
            }
        }
    }
    Ok(BoundStates {
        threshold,
        scan,
        det_roots,
        sigma_roots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit() -> MassConfig {
        MassConfig::equal_unit()
    }

    fn gaussian_source(grid: Arc<MomentumGrid>) -> GridFunction2D {
        GridFunction2D::from_fn(grid, Particle::One, |p2, p1| (-(p2 * p2) - p1 * p1 - 0.3 * p1 * p2).exp())
    }

    #[test]
    fn free_resolvent_examples() {
        let g = MomentumGrid::shared(16, 1.0).unwrap();
        let mc = unit();
        let f = GridFunction2D::from_fn(g.clone(), Particle::One, |_, _| 1.0);
        let r = apply_free_resolvent(&f, 2.0, &mc);
        for (i, &q) in g.nodes().iter().enumerate() {
            for (j, &p) in g.nodes().iter().enumerate() {
                assert_relative_eq!(r.at(i, j), 1.0 / (mc.kinetic_natural(Particle::One, q, p) + 2.0), epsilon = 1e-15);
            }
        }
        assert_eq!(1.0 / (mc.kinetic_natural(Particle::One, 0.0, 0.0) + 2.0), 0.5);
        assert_eq!(1.0 / (mc.kinetic_natural(Particle::One, 1.0, 1.0) + 1.0), 0.25);
        // (K + λ) g ↦ g
        let h = GridFunction2D::from_fn(g.clone(), Particle::Two, |q, p| {
            (mc.kinetic_natural(Particle::Two, q, p) + 3.0) * (-(q * q) - p * p).exp()
        });
        let back = apply_free_resolvent(&h, 3.0, &mc);
        let want = GridFunction2D::from_fn(g.clone(), Particle::Two, |q, p| (-(q * q) - p * p).exp());
        for (a, b) in back.values.iter().zip(&want.values) {
            assert_relative_eq!(a, b, max_relative = 1e-14);
        }
    }

    #[test]
    fn g_potential_spot_value() {
        let g = MomentumGrid::shared(16, 1.0).unwrap();
        let mc = unit();
        let q = GridFunction1D::from_fn(g.clone(), |_| 1.0);
        let pot = g_potential(&q, 1.0, PairIndex::P23, &mc, Particle::One);
        let (i, j) = (3, 11);
        let k = mc.kinetic_natural(Particle::One, g.nodes()[i], g.nodes()[j]);
        assert_relative_eq!(pot.at(i, j), 1.0 / (SQRT_2PI * (k + 1.0)), epsilon = 1e-15);
        assert_relative_eq!(1.0 / (SQRT_2PI * (3.0 + 1.0)), 0.25 / SQRT_2PI);
        let zero = GridFunction1D::zeros(g.clone());
        assert_eq!(g_potential(&zero, 1.0, PairIndex::P12, &mc, Particle::One).max_abs(), 0.0);
    }

    #[test]
    fn breve_g_inverts_constructed_source() {
        // f(k, p) = (K + λ) g(p) h(k) with ∫h = √(2π) gives Ğf = g
        let grid = MomentumGrid::shared(96, 1.0).unwrap();
        let mc = unit();
        let lambda = 1.5;
        let pair = PairIndex::P23;
        let (m, mu) = (mc.pair_mass(pair), mc.spectator_mass(Particle::One));
        let shift = mc.shift_ratio(Particle::One);
        let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |p2, p1| {
            let k = -p2 - shift * p1;
            let e = k * k / (2.0 * m) + p1 * p1 / (2.0 * mu) + lambda;
            e * (-p1 * p1).exp() * (-k * k / 2.0).exp()
        });
        let out = breve_g(&f, lambda, pair, &mc);
        for (i, &p) in grid.nodes().iter().enumerate() {
            assert!((out.values[i] - (-p * p).exp()).abs() < 1e-10);
        }
        let zero = GridFunction2D::zeros(grid.clone(), Particle::One);
        assert_eq!(breve_g(&zero, lambda, pair, &mc).norm(), 0.0);
    }

    #[test]
    fn breve_g_matches_dense_oracle() {
        // the oracle integrates the same line at twice the resolution
        let mc = unit();
        let lambda = 2.0;
        let f = |p1: f64, p2: f64| (-(p1 * p1) - 0.8 * p2 * p2 + 0.2 * p1 * p2).exp();
        let coarse = MomentumGrid::shared(64, 2.0).unwrap();
        let fine = MomentumGrid::build(128, 2.0).unwrap();
        for pair in PairIndex::ALL {
            let l = pair.companion();
            let fg = GridFunction2D::from_fn(coarse.clone(), Particle::One, |p2, p1| f(p1, p2));
            let got = breve_g(&fg, lambda, pair, &mc);
            for (i, &p) in coarse.nodes().iter().enumerate() {
                let want = fine.integrate_fn(|q| {
                    // natural coordinates (q, p) = (p_{l+1}, p_l)
                    let mut mom = [0.0; 3];
                    mom[l.slot()] = p;
                    mom[l.next().slot()] = q;
                    mom[l.prev().slot()] = -p - q;
                    f(mom[0], mom[1]) / (mc.kinetic_natural(l, q, p) + lambda)
                }) / SQRT_2PI;
                assert!((got.values[i] - want).abs() <= 1e-8, "{pair:?} p={p}: {} vs {want}", got.values[i]);
            }
        }
    }

    #[test]
    fn m_diag_examples() {
        let mc = unit();
        assert_relative_eq!(m_diag_symbol(0.0, 0.25, PairIndex::P23, &mc), 1.0, epsilon = 1e-15);
        let r = m_diag_symbol(0.0, 1.3, PairIndex::P23, &mc) / m_diag_symbol(0.0, 5.2, PairIndex::P23, &mc);
        assert_relative_eq!(r, 2.0, epsilon = 1e-12);
        let g = MomentumGrid::shared(16, 1.0).unwrap();
        assert_eq!(m_diag(&GridFunction1D::zeros(g), 1.0, PairIndex::P31, &mc).norm(), 0.0);
    }

    #[test]
    fn m_offdiag_parity() {
        let mc = unit();
        let g = MomentumGrid::shared(32, 1.0).unwrap();
        let q = GridFunction1D::from_fn(g.clone(), |p| (-(p - 0.4).powi(2)).exp());
        let qr = GridFunction1D::from_fn(g.clone(), |p| (-(-p - 0.4).powi(2)).exp());
        for (from, to) in [(PairIndex::P31, PairIndex::P23), (PairIndex::P12, PairIndex::P23), (PairIndex::P23, PairIndex::P12)] {
            let a = m_offdiag(&q, 2.0, from, to, &mc);
            let b = m_offdiag(&qr, 2.0, from, to, &mc);
            for i in 0..g.len() {
                assert_relative_eq!(a.values[i], b.values[g.mirror(i)], max_relative = 1e-12);
            }
        }
        let zero = GridFunction1D::zeros(g.clone());
        assert_eq!(m_offdiag(&zero, 2.0, PairIndex::P31, PairIndex::P23, &mc).norm(), 0.0);
    }

    #[test]
    fn zero_coupling_gives_free_resolvent() {
        let grid = MomentumGrid::shared(32, 2.0).unwrap();
        let mc = unit();
        let f = gaussian_source(grid.clone());
        let r = LimitResolvent::new(grid.clone(), mc, CouplingMatrix::zero(), 3.0).unwrap();
        let xi = r.solve_charges(&f);
        assert_eq!(xi.norm_sum(), 0.0);
        let r0 = apply_free_resolvent(&f, 3.0, &mc);
        for path in [r.apply(&f), r.apply_operator_path(&f)] {
            let d = path.values.iter().zip(&r0.values).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(d <= 1e-12 * r0.max_abs());
        }
        assert_eq!(bound_state_det(3.0, &CouplingMatrix::zero(), &mc, &grid), (1.0, 0.0));
    }

    #[test]
    fn zero_source_gives_zero_charges() {
        let grid = MomentumGrid::shared(32, 2.0).unwrap();
        let f = GridFunction2D::zeros(grid.clone(), Particle::One);
        let xi = solve_charges(&f, 5.0, &CouplingMatrix::uniform(1.0), &unit()).unwrap();
        assert_eq!(xi.norm_sum(), 0.0);
    }

    #[test]
    fn two_assemblies_agree() {
        let grid = MomentumGrid::shared(48, 3.0).unwrap();
        let mc = MassConfig::new(1.0, 2.0, 3.0).unwrap();
        let a = CouplingMatrix::new(1.0, -0.5, 0.7);
        let r = LimitResolvent::new(grid.clone(), mc, a, 5.0).unwrap();
        let f = gaussian_source(grid.clone());
        let p1 = r.apply(&f);
        let mut p2 = r.apply_operator_path(&f);
        p2.axpy(-1.0, &p1);
        assert!(p2.norm() <= 1e-8 * p1.norm(), "{}", p2.norm() / p1.norm());
    }

    #[test]
    fn det_tends_to_one() {
        let grid = MomentumGrid::build(32, 1.0).unwrap();
        let mc = unit();
        let a = CouplingMatrix::uniform(-1.0);
        let logs: Vec<f64> = [10.0, 1e2, 1e3, 1e4, 1e6, 1e8]
            .iter()
            .map(|&l| {
                let (s, v) = bound_state_det(l, &a, &mc, &grid);
                assert_eq!(s, 1.0);
                v
            })
            .collect();
        assert!(logs.windows(2).all(|w| w[1].abs() < w[0].abs()));
        assert!(logs[5].abs() < 0.05);
    }

    #[test]
    fn threshold_and_tau_pole() {
        let mc = unit();
        assert_eq!(CouplingMatrix::uniform(-2.0).two_body_threshold(&mc), 1.0);
        assert_eq!(CouplingMatrix::uniform(1.0).two_body_threshold(&mc), 0.0);
        let grid = MomentumGrid::shared(16, 1.0).unwrap();
        assert!(matches!(
            LimitResolvent::new(grid, mc, CouplingMatrix::uniform(-2.0), 0.5),
            Err(Error::TauPole { .. })
        ));
    }

    fn exchange12(f: &GridFunction2D) -> GridFunction2D {
        // in the (p2, p1) form, 1 ↔ 2 transposes the sample array
        let n = f.n();
        let mut g = f.clone();
        for i in 0..n {
            for j in 0..n {
                g.values[i * n + j] = f.values[j * n + i];
            }
        }
        g
    }

    #[test]
    fn exchange_symmetry() {
        let grid = MomentumGrid::shared(48, 3.0).unwrap();
        let mc = unit();
        let r = LimitResolvent::new(grid.clone(), mc, CouplingMatrix::uniform(1.0), 5.0).unwrap();
        let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |p2, p1| (-(p2 - 0.3).powi(2) - 2.0 * p1 * p1).exp());
        let lhs = r.apply(&exchange12(&f));
        let mut rhs = exchange12(&r.apply(&f));
        rhs.axpy(-1.0, &lhs);
        assert!(rhs.norm() <= 1e-8 * lhs.norm(), "{}", rhs.norm() / lhs.norm());
    }

    #[test]
    fn charges_converge_in_grid_size() {
        let mc = unit();
        let a = CouplingMatrix::uniform(1.0);
        let lambda = 5.0;
        let scale = (mc.c123() * lambda).sqrt();
        let charges = |n: usize| {
            let grid = MomentumGrid::shared(n, scale).unwrap();
            solve_charges(&gaussian_source(grid), lambda, &a, &mc).unwrap()
        };
        let (c1, c2) = (charges(128), charges(256));
        let mut worst = 0.0f64;
        for l in 0..3 {
            for p in [-3.0, -1.0, -0.2, 0.0, 0.5, 2.0, 6.0] {
                let x1 = c1.xi[l].interpolate(p).unwrap();
                let x2 = c2.xi[l].interpolate(p).unwrap();
                worst = worst.max((x1 - x2).abs());
            }
        }
        assert!(worst <= 1e-6, "{worst}");
    }

    #[test]
    fn boundary_condition_residual() {
        let mc = unit();
        let a = CouplingMatrix::uniform(1.0);
        let lambda = 5.0;
        let scale = (mc.c123() * lambda).sqrt();
        let mut res = Vec::new();
        for n in [64, 128, 256] {
            let grid = MomentumGrid::shared(n, scale).unwrap();
            let f = gaussian_source(grid.clone());
            let r = LimitResolvent::new(grid, mc, a, lambda).unwrap();
            let xi = r.solve_charges(&f);
            let psi = r.assemble(&f, &xi);
            res.push(check_boundary(&psi, &xi, lambda, &a, &mc).into_iter().fold(0.0, f64::max));
        }
        assert!(res[1] <= 1e-5, "{res:?}");
        assert!(res[2] < res[0], "{res:?}");
    }

    #[test]
    fn three_boson_bound_state() {
        // equal unit masses with α = −2: two-body threshold 1, trimer at 4
        let mc = unit();
        let a = CouplingMatrix::uniform(-2.0);
        let grid = MomentumGrid::build(128, (mc.c123() * 4.0).sqrt()).unwrap();
        let bs = find_bound_states(&a, &mc, &grid, 1.2, 12.0, 24).unwrap();
        assert_eq!(bs.det_roots.len(), 1, "{:?}", bs.det_roots);
        assert!((bs.det_roots[0] - 4.0).abs() < 1e-4, "{:?}", bs.det_roots);
        assert_eq!(bs.sigma_roots.len(), 1);
        assert!((bs.sigma_roots[0] - bs.det_roots[0]).abs() < 1e-6);
    }

    #[test]
    fn g_and_breve_g_are_adjoint() {
        let grid = MomentumGrid::shared(64, 2.0).unwrap();
        let mc = MassConfig::new(1.0, 1.5, 0.7).unwrap();
        let q = GridFunction1D::from_fn(grid.clone(), |p| (-(p - 0.2).powi(2)).exp());
        for form in Particle::ALL {
            let f = GridFunction2D::from_fn(grid.clone(), form, |a, b| (-(a * a) - 0.5 * b * b + 0.1 * a).exp());
            for pair in PairIndex::ALL {
                let lhs = g_potential(&q, 2.5, pair, &mc, form).inner(&f);
                let rhs = q.inner(&breve_g(&f, 2.5, pair, &mc));
                assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs(), "{form:?} {pair:?}: {lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn limit_resolvent_is_symmetric() {
        let grid = MomentumGrid::shared(64, 3.0).unwrap();
        let mc = MassConfig::new(1.0, 2.0, 0.5).unwrap();
        let r = LimitResolvent::new(grid.clone(), mc, CouplingMatrix::new(0.8, -0.3, 1.2), 6.0).unwrap();
        let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (-(a * a) - b * b + 0.4 * a * b).exp());
        let g = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (a - b) * (-(a - 0.5).powi(2) - 2.0 * b * b).exp());
        let lhs = g.inner(&r.apply(&f));
        let rhs = r.apply(&g).inner(&f);
        assert!((lhs - rhs).abs() <= 1e-8 * lhs.abs(), "{lhs} vs {rhs}");
    }
}
