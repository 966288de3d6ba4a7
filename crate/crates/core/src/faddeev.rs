//! The finite-range resolvent R^ε(λ) = (H^ε + λ)⁻¹ via Faddeev's equations.
//!
//! R^ε f = R₀f + R₀ Σ_m ρ^(m), where each ρ^(ℓ) lives in the natural
//! coordinates (q, p) = (p_{ℓ+1}, p_ℓ) and solves
//!
//! ρ^(ℓ)(q, p) = −∫dq′ t(E_p; u(q), u(q′)) [f(q′, p) + ρ^(ℓ+1)(−p − q′, q′)] / D_ℓ(q′, p)
//!              − ∫dq′ t(E_p; u(q), q′ + (1 − c)p) ρ^(ℓ+2)(p, q′) / D′_ℓ(q′, p)
//!
//! with E_p = λ + p²/2μ_ℓ, u(q) = −q − c p the pair momentum and c the
//! shift ratio of ℓ. For every p-node the two-body kernel is solved once on
//! the nodes u(q_j) themselves, which turn out to be the grid shifted by
//! −c p and mirrored, so the first line needs no interpolation in t at all.

use std::sync::{Arc, OnceLock};

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kinematics::{MassConfig, PairIndex, Particle};
use crate::krylov::{gmres, GmresOptions};
use crate::oracle::{DirectOracle, OracleOptions};
use crate::potential::{PairPotentials, Potential};
use crate::quadrature::{GridFunction2D, InterpPlan, MomentumGrid};
use crate::twobody::{solve_tmatrix_on, TMatrixKernel};

/// t_γ^ε(λ + p²/2μ_ℓ; ·, ·) for every node p of the spectator grid.
pub struct EmbeddedTMatrix {
    pot: Arc<dyn Potential>,
    pub pair: PairIndex,
    pub eps: f64,
    pub lambda: f64,
    grid: Arc<MomentumGrid>,
    mass: f64,
    mu: f64,
    shift: f64,
    slices: Vec<OnceLock<TMatrixKernel>>,
}

impl EmbeddedTMatrix {
    /// Checks the base energy λ; larger shifted energies are only better
    /// conditioned.
    pub fn new(
        pot: Arc<dyn Potential>,
        eps: f64,
        lambda: f64,
        grid: Arc<MomentumGrid>,
        pair: PairIndex,
        mc: &MassConfig,
    ) -> Result<Self> {
        let l = pair.companion();
        solve_tmatrix_on(pot.as_ref(), eps, lambda, mc.pair_mass(pair), &grid.rule(), &[])?;
        let n = grid.len();
        Ok(EmbeddedTMatrix {
            pot,
            pair,
            eps,
            lambda,
            mass: mc.pair_mass(pair),
            mu: mc.spectator_mass(l),
            shift: mc.shift_ratio(l),
            grid,
            slices: (0..n).map(|_| OnceLock::new()).collect(),
        })
    }

    /// λ + p_m²/2μ_ℓ.
    pub fn energy(&self, m: usize) -> f64 {
        let p = self.grid.nodes()[m];
        self.lambda + p * p / (2.0 * self.mu)
    }

    fn compute(&self, m: usize) -> Result<TMatrixKernel> {
        let p = self.grid.nodes()[m];
        let rule = self.grid.shifted(-self.shift * p);
        let extra: Vec<f64> = self.grid.nodes().iter().map(|q| q + (1.0 - self.shift) * p).collect();
        solve_tmatrix_on(self.pot.as_ref(), self.eps, self.energy(m), self.mass, &rule, &extra)
    }

    /// The kernel at the m-th spectator node, solved on first use.
    pub fn slice(&self, m: usize) -> Result<&TMatrixKernel> {
        if let Some(k) = self.slices[m].get() {
            return Ok(k);
        }
        let k = self.compute(m)?;
        Ok(self.slices[m].get_or_init(|| k))
    }

    /// Solves every slice in parallel.
    pub fn fill(&self) -> Result<()> {
        (0..self.slices.len()).into_par_iter().try_for_each(|m| self.slice(m).map(|_| ()))
    }

    /// t(E_m; u_i, u_j) with u_i = −q_i − c p_m.
    pub fn t_natural(&self, m: usize, i: usize, j: usize) -> Result<f64> {
        let s = self.slice(m)?;
        Ok(s.values[(self.grid.mirror(i), self.grid.mirror(j))])
    }

    /// t(E_m; u_i, q_j + (1 − c) p_m).
    pub fn t_swapped(&self, m: usize, i: usize, j: usize) -> Result<f64> {
        let s = self.slice(m)?;
        Ok(s.extra[(self.grid.mirror(i), j)])
    }
}

pub fn embed_tmatrix(
    pot: Arc<dyn Potential>,
    eps: f64,
    lambda: f64,
    grid: Arc<MomentumGrid>,
    pair: PairIndex,
    mc: &MassConfig,
) -> Result<EmbeddedTMatrix> {
    EmbeddedTMatrix::new(pot, eps, lambda, grid, pair, mc)
}

/// How the solver guards against λ too close to the bottom of σ(H^ε).
#[derive(Debug, Clone, Copy)]
pub enum MarginCheck {
    /// Birman–Schwinger test on a coarse direct-oracle lattice.
    Oracle(OracleOptions),
    /// A floor already known to the caller; λ must exceed 2|floor|.
    Floor(f64),
    Skip,
}

impl Default for MarginCheck {
    fn default() -> Self {
        MarginCheck::Oracle(OracleOptions {
            points: 128,
            box_len: 20.0,
            ..OracleOptions::default()
        })
    }
}

/// The triple ρ^(1), ρ^(2), ρ^(3), each in its natural coordinates.
#[derive(Debug, Clone)]
pub struct FaddeevComponents {
    pub lambda: f64,
    pub eps: f64,
    pub rho: [GridFunction2D; 3],
    pub iterations: usize,
    pub residual: f64,
    /// Interpolation points clamped to ±q_max in the coupling terms.
    pub clamps: usize,
}

impl FaddeevComponents {
    pub fn get(&self, l: Particle) -> &GridFunction2D {
        &self.rho[l.slot()]
    }
}

/// Everything that depends on (λ, ε) but not on the source.
pub struct FaddeevSolver {
    pub grid: Arc<MomentumGrid>,
    pub mc: MassConfig,
    pub eps: f64,
    pub lambda: f64,
    embedded: [Option<EmbeddedTMatrix>; 3],
    /// Points −p_m − q_j, indexed m·n + j.
    plan: InterpPlan,
    pub gmres: GmresOptions,
}

impl FaddeevSolver {
    pub fn new(
        grid: Arc<MomentumGrid>,
        mc: MassConfig,
        pots: &PairPotentials,
        eps: f64,
        lambda: f64,
        margin: MarginCheck,
    ) -> Result<Self> {
        if !(lambda > 0.0 && eps > 0.0) {
            return Err(Error::InvalidInput(format!("need lambda > 0 and eps > 0, got {lambda}, {eps}")));
        }
        match margin {
            MarginCheck::Oracle(opts) => {
                let all_zero = PairIndex::ALL.iter().all(|&p| pots.is_zero(p));
                if !all_zero && !DirectOracle::new(pots, eps, &mc, opts)?.admits(lambda) {
                    return Err(Error::BelowSpectrumMargin {
                        lambda,
                        floor: -0.5 * lambda,
                    });
                }
            }
            MarginCheck::Floor(floor) => {
                if lambda <= 2.0 * floor.min(0.0).abs() {
                    return Err(Error::BelowSpectrumMargin { lambda, floor });
                }
            }
            MarginCheck::Skip => {}
        }
        let mut embedded: [Option<EmbeddedTMatrix>; 3] = [None, None, None];
        for l in Particle::ALL {
            let pair = l.pair();
            if !pots.is_zero(pair) {
                let e = EmbeddedTMatrix::new(pots.get_arc(pair), eps, lambda, grid.clone(), pair, &mc)?;
                e.fill()?;
                embedded[l.slot()] = Some(e);
            }
        }
        let nodes = grid.nodes();
        let n = nodes.len();
        let points: Vec<f64> = (0..n * n).map(|k| -nodes[k / n] - nodes[k % n]).collect();
        let plan = grid.plan(&points);
        Ok(FaddeevSolver {
            grid,
            mc,
            eps,
            lambda,
            embedded,
            plan,
            gmres: GmresOptions::default(),
        })
    }

    /// The coupling map. With `source` the f-terms are included and ρ may
    /// be zero; without it only the ρ-couplings act.
    fn couple(&self, rho: &[f64], source: Option<&[GridFunction2D; 3]>, out: &mut [f64]) {
        let n = self.grid.len();
        let n2 = n * n;
        let nodes = self.grid.nodes();
        let w = self.grid.weights();
        // ρ transposed so that columns of fixed second index are contiguous
        let transposed: Vec<Vec<f64>> = (0..3)
            .map(|c| {
                let r = &rho[c * n2..(c + 1) * n2];
                let mut t = vec![0.0; n2];
                for i in 0..n {
                    for j in 0..n {
                        t[j * n + i] = r[i * n + j];
                    }
                }
                t
            })
            .collect();
        let columns: Vec<(usize, usize, Vec<f64>)> = (0..3 * n)
            .into_par_iter()
            .map(|idx| {
                let (c, m) = (idx / n, idx % n);
                let l = Particle::from_slot(c);
                let Some(emb) = &self.embedded[c] else {
                    return (c, m, vec![0.0; n]);
                };
                let slice = emb.slice(m).expect("slices are filled at construction");
                let p = nodes[m];
                let (next, prev) = (l.next().slot(), l.prev().slot());
                let mut g = DVector::zeros(n);
                let mut h = DVector::zeros(n);
                for j in 0..n {
                    let q = nodes[j];
                    let mut s = self.plan.eval(m * n + j, &transposed[next][j * n..(j + 1) * n]);
                    if let Some(src) = source {
                        s += src[c].values[j * n + m];
                    }
                    // mirrored slot so that the product runs over u_j
                    g[self.grid.mirror(j)] = w[j] * s / (self.mc.kinetic_natural(l, q, p) + self.lambda);
                    h[j] = w[j] * rho[prev * n2 + m * n + j] / (self.mc.kinetic_swapped(l, q, p) + self.lambda);
                }
                let y = &slice.values * g + &slice.extra * h;
                let col = (0..n).map(|i| -y[self.grid.mirror(i)]).collect();
                (c, m, col)
            })
            .collect();
        for (c, m, col) in columns {
            for (i, v) in col.into_iter().enumerate() {
                out[c * n2 + i * n + m] = v;
            }
        }
    }

    pub fn solve(&self, f: &GridFunction2D) -> Result<FaddeevComponents> {
        let mut clamps = 0;
        let forms: [GridFunction2D; 3] = Particle::ALL.map(|l| {
            let (g, c) = f.to_form(l);
            clamps += c;
            g
        });
        let mut comps = self.solve_forms(&forms)?;
        comps.clamps += clamps;
        Ok(comps)
    }

    /// Like [`solve`](Self::solve), with the source already sampled in the
    /// natural coordinates of each spectator (no conversion error).
    pub fn solve_forms(&self, forms: &[GridFunction2D; 3]) -> Result<FaddeevComponents> {
        let n = self.grid.len();
        let n2 = n * n;
        for l in Particle::ALL {
            assert_eq!(forms[l.slot()].form, l, "source forms must be ordered by spectator");
        }
        let zero = vec![0.0; 3 * n2];
        let mut b = vec![0.0; 3 * n2];
        self.couple(&zero, Some(forms), &mut b);
        let report = gmres(
            |x, y| {
                self.couple(x, None, y);
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi = xi - *yi;
                }
            },
            &b,
            self.gmres,
        )?;
        let rho = Particle::ALL.map(|l| GridFunction2D {
            grid: self.grid.clone(),
            form: l,
            values: report.x[l.slot() * n2..(l.slot() + 1) * n2].to_vec(),
        });
        Ok(FaddeevComponents {
            lambda: self.lambda,
            eps: self.eps,
            rho,
            iterations: report.iterations,
            residual: report.residual,
            clamps: 3 * self.plan.clamps(),
        })
    }

    /// R₀f + R₀ Σ ρ^(m), in the coordinates of f.
    pub fn assemble(&self, f: &GridFunction2D, comps: &FaddeevComponents) -> GridFunction2D {
        let mut total = f.clone();
        for r in &comps.rho {
            let (g, _) = r.to_form(f.form);
            total.axpy(1.0, &g);
        }
        crate::deltares::apply_free_resolvent(&total, self.lambda, &self.mc)
    }

    pub fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D> {
        let comps = self.solve(f)?;
        Ok(self.assemble(f, &comps))
    }
}

pub fn solve_faddeev(
    f: &GridFunction2D,
    lambda: f64,
    eps: f64,
    pots: &PairPotentials,
    mc: &MassConfig,
) -> Result<FaddeevComponents> {
    FaddeevSolver::new(f.grid.clone(), *mc, pots, eps, lambda, MarginCheck::default())?.solve(f)
}

pub fn apply_eps_resolvent(
    f: &GridFunction2D,
    lambda: f64,
    eps: f64,
    pots: &PairPotentials,
    mc: &MassConfig,
) -> Result<GridFunction2D> {
    FaddeevSolver::new(f.grid.clone(), *mc, pots, eps, lambda, MarginCheck::default())?.apply(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deltares::apply_free_resolvent;
    use crate::oracle::oracle_direct_resolvent;
    use crate::potential::{Gaussian, SquareWell, Zero};

    fn rel_diff(a: &GridFunction2D, b: &GridFunction2D) -> f64 {
        let mut d = a.clone();
        d.axpy(-1.0, b);
        d.norm() / b.norm()
    }

    fn source(grid: Arc<MomentumGrid>) -> GridFunction2D {
        GridFunction2D::from_fn(grid, Particle::One, |p2, p1| (-(p2 * p2) - p1 * p1 - 0.4 * p1 * p2 + 0.2 * p1).exp())
    }

    fn wells(alpha: f64) -> PairPotentials {
        PairPotentials::identical(Arc::new(SquareWell::with_alpha(alpha, 1.0)))
    }

    #[test]
    fn zero_potentials_give_free_resolvent() {
        let grid = MomentumGrid::shared(24, 2.0).unwrap();
        let mc = MassConfig::new(1.0, 2.0, 3.0).unwrap();
        let f = source(grid.clone());
        let comps = solve_faddeev(&f, 3.0, 0.5, &PairPotentials::zero(), &mc).unwrap();
        assert!(comps.rho.iter().all(|r| r.max_abs() == 0.0));
        let r = apply_eps_resolvent(&f, 3.0, 0.5, &PairPotentials::zero(), &mc).unwrap();
        assert!(rel_diff(&r, &apply_free_resolvent(&f, 3.0, &mc)) < 1e-12);
    }

    #[test]
    fn cache_matches_fresh_solve() {
        let grid = MomentumGrid::shared(24, 2.0).unwrap();
        let mc = MassConfig::new(1.0, 2.0, 3.0).unwrap();
        let pot: Arc<dyn Potential> = Arc::new(SquareWell::with_alpha(-1.0, 1.0));
        let e = embed_tmatrix(pot.clone(), 0.5, 4.0, grid.clone(), PairIndex::P31, &mc).unwrap();
        let m = 17;
        let p = grid.nodes()[m];
        let l = Particle::Two;
        let c = mc.shift_ratio(l);
        let energy = 4.0 + p * p / (2.0 * mc.spectator_mass(l));
        assert_eq!(e.energy(m), energy);
        let extra: Vec<f64> = grid.nodes().iter().map(|q| q + (1.0 - c) * p).collect();
        let fresh = solve_tmatrix_on(pot.as_ref(), 0.5, energy, mc.pair_mass(PairIndex::P31), &grid.shifted(-c * p), &extra).unwrap();
        let cached = e.slice(m).unwrap();
        assert!((&cached.values - &fresh.values).amax() <= 1e-12 * fresh.max_abs());
        assert!((&cached.extra - &fresh.extra).amax() <= 1e-12 * fresh.max_abs());
        // the natural accessor reads the kernel at u = −q − c p
        let (i, j) = (3, 9);
        let ui = -grid.nodes()[i] - c * p;
        assert!((fresh.nodes[grid.mirror(i)] - ui).abs() < 1e-12);
        assert_eq!(e.t_natural(m, i, j).unwrap(), cached.values[(grid.mirror(i), grid.mirror(j))]);
    }

    #[test]
    fn slices_decay_with_spectator_momentum() {
        let grid = MomentumGrid::shared(32, 4.0).unwrap();
        let mc = MassConfig::equal_unit();
        let pot: Arc<dyn Potential> = Arc::new(SquareWell::with_alpha(-1.0, 1.0));
        let e = embed_tmatrix(pot, 0.5, 20.0, grid.clone(), PairIndex::P23, &mc).unwrap();
        let n = grid.len();
        // nodes with p ≥ 0, increasing
        let sups: Vec<f64> = (n / 2..n).map(|m| e.slice(m).unwrap().max_abs()).collect();
        assert!(sups.windows(2).all(|w| w[1] <= w[0]), "{sups:?}");
    }

    #[test]
    fn identical_particles_give_identical_components() {
        let grid = MomentumGrid::shared(32, 3.0).unwrap();
        let mc = MassConfig::equal_unit();
        // fully symmetric source, sampled exactly in every form
        let forms = Particle::ALL.map(|l| {
            GridFunction2D::from_fn(grid.clone(), l, |a, b| (-(a * a + b * b + (a + b) * (a + b)) / 2.0).exp())
        });
        let solver = FaddeevSolver::new(grid.clone(), mc, &wells(-1.0), 0.5, 5.0, MarginCheck::default()).unwrap();
        let comps = solver.solve_forms(&forms).unwrap();
        let scale = comps.rho[0].max_abs();
        for c in 1..3 {
            let d = comps.rho[c].values.iter().zip(&comps.rho[0].values).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
            assert!(d <= 1e-7 * scale, "{d}");
        }
    }

    #[test]
    fn eps_resolvent_is_symmetric() {
        let grid = MomentumGrid::shared(32, 3.0).unwrap();
        let mc = MassConfig::new(1.0, 1.5, 0.8).unwrap();
        let pots = PairPotentials::new(
            Arc::new(SquareWell::with_alpha(-1.0, 1.0)),
            Arc::new(Gaussian::with_alpha(0.5, 1.0)),
            Arc::new(SquareWell::with_alpha(-0.5, 2.0)),
        );
        let solver = FaddeevSolver::new(grid.clone(), mc, &pots, 0.5, 5.0, MarginCheck::default()).unwrap();
        let f = source(grid.clone());
        let g = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (a + 0.5 * b) * (-(a * a) - 2.0 * b * b).exp());
        let lhs = g.inner(&solver.apply(&f).unwrap());
        let rhs = solver.apply(&g).unwrap().inner(&f);
        assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs(), "{lhs} vs {rhs}");
    }

    #[test]
    fn single_pair_matches_oracle() {
        let grid = MomentumGrid::shared(64, 3.0).unwrap();
        let mc = MassConfig::new(1.0, 2.0, 1.5).unwrap();
        let z: Arc<dyn Potential> = Arc::new(Zero);
        let pots = PairPotentials::new(Arc::new(Gaussian::with_alpha(-1.0, 1.0)), z.clone(), z);
        let f = source(grid.clone());
        let got = apply_eps_resolvent(&f, 3.0, 0.5, &pots, &mc).unwrap();
        let opts = OracleOptions {
            points: 256,
            box_len: 30.0,
            ..Default::default()
        };
        // the oracle samples the gaussian pointwise here (spectral accuracy)
        let want = oracle_direct_resolvent(&f, 3.0, 0.5, &pots, &mc, opts).unwrap();
        let d = rel_diff(&got, &want);
        assert!(d <= 1e-5, "{d}");
    }

    #[test]
    fn below_margin_is_refused() {
        let grid = MomentumGrid::shared(16, 1.0).unwrap();
        let mc = MassConfig::equal_unit();
        // α = −2 binds the trimer near λ = 4, so λ = 3 is inside the margin
        let r = FaddeevSolver::new(grid, mc, &wells(-2.0), 0.5, 3.0, MarginCheck::default());
        assert!(matches!(r, Err(Error::BelowSpectrumMargin { .. })));
    }
}
