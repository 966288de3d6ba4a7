//! Brute-force three-body resolvent on a periodic position grid.
//!
//! The oracle works in the coordinates X = r2 − r3, Y = r1 − r3, which are
//! conjugate to (p2, p1) under the phase Σ p_i r_i with p1 + p2 + p3 = 0.
//! In these coordinates the pair distances are X, Y and Y − X without any
//! mass mixing, and the kinetic energy is the quadratic form of the (p2, p1)
//! spectator coordinates. Unknowns live on the FFT momentum lattice; the
//! kinetic term is diagonal there and the potentials are applied pointwise
//! after an inverse FFT. (H^ε + λ)ψ = f is solved by conjugate gradients
//! preconditioned with (K + λ)⁻¹.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kinematics::{MassConfig, Particle};
use crate::potential::PairPotentials;
use crate::quadrature::{GridFunction2D, MomentumGrid};

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    /// FFT points per axis (even).
    pub points: usize,
    /// Side length of the periodic box.
    pub box_len: f64,
    /// Relative residual for conjugate gradients.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            points: 256,
            box_len: 24.0,
            tol: 1e-11,
            max_iter: 4000,
        }
    }
}

/// Discretized H^ε on the periodic box.
pub struct DirectOracle {
    n: usize,
    pub box_len: f64,
    /// Lattice momenta in FFT order.
    k: Vec<f64>,
    /// Positions in FFT order.
    x: Vec<f64>,
    kinetic: Vec<f64>,
    potential: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    pub opts: OracleOptions,
}

/// Result of a direct solve with its convergence diagnostics.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub psi: GridFunction2D,
    pub iterations: usize,
    pub residual: f64,
}

fn wrap(x: f64, len: f64) -> f64 {
    x - len * (x / len).round()
}

impl DirectOracle {
    pub fn new(pots: &PairPotentials, eps: f64, mc: &MassConfig, opts: OracleOptions) -> Result<Self> {
        let n = opts.points;
        if n < 8 || n % 2 != 0 || !(opts.box_len > 0.0) || !(eps > 0.0) {
            return Err(Error::InvalidInput(format!(
                "oracle needs an even point count >= 8, positive box and eps (got {n}, {}, {eps})",
                opts.box_len
            )));
        }
        let dx = opts.box_len / n as f64;
        let dk = 2.0 * PI / opts.box_len;
        let signed = |a: usize| if a < n / 2 { a as f64 } else { a as f64 - n as f64 };
        let x: Vec<f64> = (0..n).map(|a| signed(a) * dx).collect();
        let k: Vec<f64> = (0..n).map(|a| signed(a) * dk).collect();
        let mut kinetic = vec![0.0; n * n];
        let mut potential = vec![0.0; n * n];
        // smooth, resolved potentials are sampled (spectral accuracy); jumps,
        // kinks and sub-cell widths are cell-averaged so lattice sums keep α
        let cell = |pair, r: f64| {
            let v = pots.get(pair);
            if v.smooth() && dx <= 0.25 * eps * v.length_scale() {
                v.value(r / eps) / eps
            } else {
                v.cell_average(r / eps, dx / eps) / eps
            }
        };
        use crate::kinematics::PairIndex::{P12, P23, P31};
        for a in 0..n {
            for b in 0..n {
                kinetic[a * n + b] = mc.kinetic_natural(Particle::One, k[a], k[b]);
                potential[a * n + b] =
                    cell(P23, x[a]) + cell(P31, x[b]) + cell(P12, wrap(x[b] - x[a], opts.box_len));
            }
        }
        let mut planner = FftPlanner::new();
        Ok(DirectOracle {
            n,
            box_len: opts.box_len,
            fft: planner.plan_fft_forward(n),
            ifft: planner.plan_fft_inverse(n),
            k,
            x,
            kinetic,
            potential,
            opts,
        })
    }

    /// Largest momentum represented on the lattice.
    pub fn k_max(&self) -> f64 {
        PI * self.n as f64 / self.box_len
    }

    fn fft2(&self, data: &mut [Complex64], inverse: bool) {
        let n = self.n;
        let plan = if inverse { &self.ifft } else { &self.fft };
        data.par_chunks_mut(n).for_each(|row| plan.process(row));
        transpose(data, n);
        data.par_chunks_mut(n).for_each(|row| plan.process(row));
        transpose(data, n);
    }

    /// out = (H^ε + shift) ψ for real lattice momentum samples ψ.
    fn apply(&self, psi: &[f64], out: &mut [f64], shift: f64) {
        let n2 = self.n * self.n;
        let mut buf: Vec<Complex64> = psi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, true);
        buf.par_iter_mut().zip(&self.potential).for_each(|(c, v)| *c *= *v);
        self.fft2(&mut buf, false);
        let scale = 1.0 / n2 as f64;
        out.par_iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = (self.kinetic[i] + shift) * psi[i] + buf[i].re * scale);
    }

    /// Samples of f at the lattice momenta by separable interpolation.
    fn sample_source(&self, f: &GridFunction2D) -> Vec<f64> {
        let (f1, _) = f.to_form(Particle::One);
        let grid = &f1.grid;
        let (n, m) = (self.n, grid.len());
        let mut rows = DMatrix::zeros(n, m);
        let mut row = vec![0.0; m];
        for (a, &ka) in self.k.iter().enumerate() {
            grid.interpolation_row(ka, &mut row);
            for (j, r) in row.iter().enumerate() {
                rows[(a, j)] = *r;
            }
        }
        let fm = DMatrix::from_row_slice(m, m, &f1.values);
        let s = &rows * fm * rows.transpose();
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                out[a * n + b] = s[(a, b)];
            }
        }
        out
    }

    /// Trigonometric interpolation of lattice momentum samples onto the
    /// (p2, p1) grid. Nodes outside the lattice band get zero.
    fn to_grid(&self, psi: &[f64], grid: &Arc<MomentumGrid>) -> GridFunction2D {
        let n = self.n;
        let mut z: Vec<Complex64> = psi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut z, true);
        let nodes = grid.nodes();
        let m = nodes.len();
        let kmax = self.k_max();
        let phase = DMatrix::from_fn(m, n, |i, a| {
            if nodes[i].abs() > kmax {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::from_polar(1.0, -nodes[i] * self.x[a])
            }
        });
        let zm = DMatrix::from_row_slice(n, n, &z);
        let c = &phase * zm * phase.transpose();
        let scale = 1.0 / (n * n) as f64;
        let mut out = GridFunction2D::zeros(grid.clone(), Particle::One);
        for i in 0..m {
            for j in 0..m {
                out.values[i * m + j] = c[(i, j)].re * scale;
            }
        }
        out
    }

    /// Solves (H^ε + λ)ψ = f and returns ψ in the coordinates of f.
    pub fn solve(&self, f: &GridFunction2D, lambda: f64) -> Result<OracleSolution> {
        let b = self.sample_source(f);
        let (x, iterations, residual) = self.cg(&b, lambda)?;
        let psi = self.to_grid(&x, &f.grid);
        let (psi, _) = psi.to_form(f.form);
        Ok(OracleSolution {
            psi,
            iterations,
            residual,
        })
    }

    fn cg(&self, b: &[f64], lambda: f64) -> Result<(Vec<f64>, usize, f64)> {
        let len = b.len();
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![0.0; len];
        if bnorm == 0.0 {
            return Ok((x, 0, 0.0));
        }
        let precond = |r: &[f64], z: &mut [f64]| {
            for i in 0..len {
                z[i] = r[i] / (self.kinetic[i] + lambda);
            }
        };
        let mut r = b.to_vec();
        let mut z = vec![0.0; len];
        precond(&r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let mut ap = vec![0.0; len];
        let mut history = Vec::new();
        for it in 1..=self.opts.max_iter {
            self.apply(&p, &mut ap, lambda);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::BelowSpectrumMargin {
                    lambda,
                    floor: f64::NAN,
                });
            }
            let alpha = rz / pap;
            for i in 0..len {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let rel = dot(&r, &r).sqrt() / bnorm;
            history.push(rel);
            if rel <= self.opts.tol {
                return Ok((x, it, rel));
            }
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..len {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::NotConverged {
            iterations: self.opts.max_iter,
            last: *history.last().unwrap_or(&1.0),
            history,
        })
    }

    /// V ψ in lattice momentum samples.
    fn apply_potential(&self, psi: &[f64], out: &mut [f64]) {
        let mut buf: Vec<Complex64> = psi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft2(&mut buf, true);
        buf.par_iter_mut().zip(&self.potential).for_each(|(c, v)| *c *= *v);
        self.fft2(&mut buf, false);
        let scale = 1.0 / (self.n * self.n) as f64;
        out.iter_mut().zip(&buf).for_each(|(o, c)| *o = c.re * scale);
    }

    /// Smallest eigenvalue of 1 + B V B with B = (K + σ)^(−1/2).
    ///
    /// H + σ > 0 exactly when this is positive. The operator is a bounded
    /// perturbation of the identity with few outliers, so Lanczos resolves
    /// its lowest eigenvalue in a few dozen steps, unlike H itself whose
    /// kinetic spread stalls convergence at the continuum edge.
    pub fn birman_schwinger_min(&self, sigma: f64, steps: usize) -> f64 {
        let b: Vec<f64> = self.kinetic.iter().map(|k| 1.0 / (k + sigma).sqrt()).collect();
        let len = b.len();
        let mut u = vec![0.0; len];
        let mut vu = vec![0.0; len];
        let apply = |x: &[f64], out: &mut [f64], u: &mut Vec<f64>, vu: &mut Vec<f64>| {
            for i in 0..len {
                u[i] = b[i] * x[i];
            }
            self.apply_potential(u, vu);
            for i in 0..len {
                out[i] = x[i] + b[i] * vu[i];
            }
        };
        // parity-even start: the ground state is even under (X, Y) → −(X, Y)
        let start: Vec<f64> = self.kinetic.iter().map(|&kin| (-kin).exp()).collect();
        lanczos_min(|x, out| apply(x, out, &mut u, &mut vu), start, steps)
    }

    /// True when H^ε + λ/2 is positive, i.e. λ > 2|inf σ(H^ε)|.
    pub fn admits(&self, lambda: f64) -> bool {
        self.birman_schwinger_min(0.5 * lambda, 30) > 0.0
    }

    /// Estimate of inf σ(H^ε) (zero when nothing binds), by bisection on σ in
    /// the Birman–Schwinger test to relative accuracy `rel_tol`.
    pub fn spectral_floor(&self, rel_tol: f64) -> f64 {
        let test = |sigma: f64| self.birman_schwinger_min(sigma, 30) > 0.0;
        let mut lo = 1e-8;
        if test(lo) {
            return 0.0;
        }
        let mut hi = 1.0;
        while !test(hi) {
            lo = hi;
            hi *= 2.0;
        }
        while hi - lo > rel_tol * hi {
            let mid = 0.5 * (lo + hi);
            if test(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        -0.5 * (lo + hi)
    }
}

/// Lowest Ritz value of a symmetric operator after `steps` Lanczos steps
/// with full reorthogonalization.
fn lanczos_min(mut apply: impl FnMut(&[f64], &mut [f64]), start: Vec<f64>, steps: usize) -> f64 {
    let len = start.len();
    let nv = dot(&start, &start).sqrt();
    let mut basis = vec![start.into_iter().map(|x| x / nv).collect::<Vec<f64>>()];
    let (mut alphas, mut betas) = (Vec::new(), Vec::new());
    let mut w = vec![0.0; len];
    for _ in 0..steps {
        let cur = basis.last().unwrap();
        apply(cur, &mut w);
        alphas.push(dot(&w, cur));
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
            }
        }
        let b = dot(&w, &w).sqrt();
        if b < 1e-12 {
            break;
        }
        betas.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
    let m = alphas.len();
    let t = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            alphas[i]
        } else if i + 1 == j || j + 1 == i {
            betas[i.min(j)]
        } else {
            0.0
        }
    });
    SymmetricEigen::new(t).eigenvalues.iter().fold(f64::INFINITY, |a, &e| a.min(e))
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in i + 1..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// (H^ε + λ)⁻¹ f by the direct oracle.
pub fn oracle_direct_resolvent(
    f: &GridFunction2D,
    lambda: f64,
    eps: f64,
    pots: &PairPotentials,
    mc: &MassConfig,
    opts: OracleOptions,
) -> Result<GridFunction2D> {
    Ok(DirectOracle::new(pots, eps, mc, opts)?.solve(f, lambda)?.psi)
}
