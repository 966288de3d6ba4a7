//! The structural invariant suite.
//!
//! Each check runs a small deterministic experiment and compares one
//! worst-case number against its tolerance. The suite backs both the
//! acceptance tests and the `validate` command of the CLI.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::convergence::{trace_inequality_check, PositionFunction2D};
use crate::deltares::{
    apply_free_resolvent, breve_g, check_boundary, g_potential, CouplingMatrix, LimitResolvent,
};
use crate::error::Result;
use crate::faddeev::{FaddeevSolver, MarginCheck};
use crate::kinematics::{
    kinetic_energy, transform_pair, transform_pair_back, MassConfig, MomentumPoint, PairIndex, Particle,
};
use crate::potential::{Gaussian, PairPotentials, SquareWell, SQRT_2PI};
use crate::quadrature::{GridFunction1D, GridFunction2D, MomentumGrid};
use crate::twobody::{free_propagator_integral, tau, tau_pole};

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn at_most(name: &'static str, value: f64, tolerance: f64, detail: String) -> Self {
        CheckResult {
            name,
            value,
            tolerance,
            passed: value <= tolerance,
            detail,
        }
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn random_masses(rng: &mut ChaCha8Rng) -> MassConfig {
    MassConfig::new(
        rng.random_range(0.1..10.0),
        rng.random_range(0.1..10.0),
        rng.random_range(0.1..10.0),
    )
    .expect("positive masses")
}

/// Kinetic energy agrees across all five coordinate forms of a point.
pub fn kinetic_form_invariance(seed: u64, samples: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mc = random_masses(&mut rng);
        let (k, p): (f64, f64) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let e0 = kinetic_energy(MomentumPoint::Jacobi { pair: PairIndex::P23, k, p }, &mc);
        let (k31, p2) = transform_pair(Particle::One, k, p, &mc);
        let (k12, p3) = transform_pair(Particle::Two, k31, p2, &mc);
        let reps = [
            MomentumPoint::Jacobi { pair: PairIndex::P31, k: k31, p: p2 },
            MomentumPoint::Jacobi { pair: PairIndex::P12, k: k12, p: p3 },
            MomentumPoint::Spectator { first: Particle::Two, second: Particle::One, p_first: p2, p_second: p },
            MomentumPoint::Spectator { first: Particle::Three, second: Particle::Two, p_first: p3, p_second: p2 },
            MomentumPoint::Spectator { first: Particle::One, second: Particle::Three, p_first: p, p_second: p3 },
        ];
        for r in reps {
            worst = worst.max(rel(kinetic_energy(r, &mc), e0));
        }
    }
    CheckResult::at_most("kinetic-form invariance", worst, 1e-12, format!("{samples} random points and mass triples"))
}

/// Three cyclic pair transforms return to the start; forward undoes back.
pub fn transform_cycle(seed: u64, samples: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let mc = random_masses(&mut rng);
        let (k, p): (f64, f64) = (rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
        let scale = 1.0 + k.abs() + p.abs();
        let mut s = (k, p);
        for l in Particle::ALL {
            s = transform_pair(l, s.0, s.1, &mc);
        }
        worst = worst.max((s.0 - k).abs().max((s.1 - p).abs()) / scale);
        let (kb, pb) = transform_pair_back(Particle::One, k, p, &mc);
        let (kf, pf) = transform_pair(Particle::Three, kb, pb, &mc);
        worst = worst.max((kf - k).abs().max((pf - p).abs()) / scale);
    }
    CheckResult::at_most("transform cycle identity", worst, 1e-12, format!("{samples} random points and mass triples"))
}

/// ⟨G q, f⟩ = ⟨q, Ğ f⟩ for every pair and source form, random inputs.
///
/// The off-natural pairs interpolate f, so the identity holds to
/// interpolation accuracy, which is spectral in N (≈6e-10 at N = 64 and
/// ≈2e-13 at N = 96 for these widths).
pub fn adjointness(seed: u64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = MomentumGrid::shared(96, 2.0).expect("valid grid");
    let mc = MassConfig::new(1.0, 1.5, 0.7).expect("valid masses");
    let lambda = 2.5;
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let (c, s) = (rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0));
        let q = GridFunction1D::from_fn(grid.clone(), |p| (-(p - c).powi(2) / s).exp());
        let (a, b, t) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0), rng.random_range(-0.5..0.5));
        for form in Particle::ALL {
            let f = GridFunction2D::from_fn(grid.clone(), form, |x, y| (-a * x * x - b * y * y + t * x * y + 0.1 * x).exp());
            for pair in PairIndex::ALL {
                let lhs = g_potential(&q, lambda, pair, &mc, form).inner(&f);
                let rhs = q.inner(&breve_g(&f, lambda, pair, &mc));
                worst = worst.max(rel(lhs, rhs));
            }
        }
    }
    CheckResult::at_most("adjointness <Gq,f> = <q,Ğf>", worst, 1e-10, "N=96, unequal masses, λ=2.5".into())
}

fn limit_case() -> (Arc<MomentumGrid>, LimitResolvent, GridFunction2D, GridFunction2D) {
    let grid = MomentumGrid::shared(64, 3.0).expect("valid grid");
    let mc = MassConfig::new(1.0, 2.0, 0.5).expect("valid masses");
    let r = LimitResolvent::new(grid.clone(), mc, CouplingMatrix::new(0.8, -0.3, 1.2), 6.0)
        .expect("λ far above every threshold");
    let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (-(a * a) - b * b + 0.4 * a * b).exp());
    let g = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (a - b) * (-(a - 0.5).powi(2) - 2.0 * b * b).exp());
    (grid, r, f, g)
}

/// Charge assembly and operator assembly of the limit resolvent agree.
pub fn two_path_agreement() -> CheckResult {
    let (_, r, f, _) = limit_case();
    let a = r.apply(&f);
    let mut d = r.apply_operator_path(&f);
    d.axpy(-1.0, &a);
    CheckResult::at_most(
        "two-path limit resolvent",
        d.norm() / a.norm(),
        1e-8,
        "N=64, masses (1,2,0.5), α=(0.8,-0.3,1.2), λ=6".into(),
    )
}

pub fn limit_symmetry() -> CheckResult {
    let (_, r, f, g) = limit_case();
    let lhs = g.inner(&r.apply(&f));
    let rhs = r.apply(&g).inner(&f);
    CheckResult::at_most("limit resolvent symmetry", rel(lhs, rhs), 1e-8, format!("<g,Rf>={lhs:.12e}"))
}

pub fn eps_symmetry() -> Result<CheckResult> {
    let grid = MomentumGrid::shared(32, 3.0)?;
    let mc = MassConfig::new(1.0, 1.5, 0.8)?;
    let pots = PairPotentials::new(
        Arc::new(SquareWell::with_alpha(-1.0, 1.0)),
        Arc::new(Gaussian::with_alpha(0.5, 1.0)),
        Arc::new(SquareWell::with_alpha(-0.5, 2.0)),
    );
    let solver = FaddeevSolver::new(grid.clone(), mc, &pots, 0.5, 5.0, MarginCheck::default())?;
    // total inversion commutes with H, so f must not have definite parity
    // opposite to g or both sides vanish
    let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (-(a * a) - b * b - 0.4 * a * b + 0.2 * b).exp());
    let g = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (a + 0.5 * b) * (-(a * a) - 2.0 * b * b).exp());
    let lhs = g.inner(&solver.apply(&f)?);
    let rhs = solver.apply(&g)?.inner(&f);
    Ok(CheckResult::at_most(
        "finite-range resolvent symmetry",
        rel(lhs, rhs),
        1e-6,
        "N=32, mixed potentials, ε=0.5, λ=5".into(),
    ))
}

/// Boundary residual at N = 64, 128, 256: at most 1e-5 at 128 and
/// strictly decreasing. The reported value is the N = 128 residual; a
/// non-decreasing sequence fails regardless.
pub fn boundary_residual() -> Result<CheckResult> {
    let mc = MassConfig::equal_unit();
    let a = CouplingMatrix::uniform(1.0);
    let lambda = 5.0;
    let scale = (mc.c123() * lambda).sqrt();
    let mut res = Vec::new();
    for n in [64, 128, 256] {
        let grid = MomentumGrid::shared(n, scale)?;
        let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |q, p| (-(q * q + p * p) / 2.0).exp());
        let r = LimitResolvent::new(grid, mc, a, lambda)?;
        let xi = r.solve_charges(&f);
        let psi = r.assemble(&f, &xi);
        res.push(check_boundary(&psi, &xi, lambda, &a, &mc).into_iter().fold(0.0, f64::max));
    }
    let decreasing = res.windows(2).all(|w| w[1] < w[0]);
    let mut out = CheckResult::at_most("boundary residual", res[1], 1e-5, format!("N=64/128/256: {:.3e} {:.3e} {:.3e}", res[0], res[1], res[2]));
    out.passed &= decreasing;
    Ok(out)
}

/// A random smooth, decaying function: a few displaced anisotropic bumps.
pub fn random_smooth_sample(rng: &mut ChaCha8Rng, points: usize, len: f64) -> PositionFunction2D {
    let bumps: Vec<[f64; 6]> = (0..rng.random_range(1..4))
        .map(|_| {
            [
                rng.random_range(-2.0..2.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(0.5..1.5),
                rng.random_range(0.5..1.5),
                rng.random_range(-0.5..0.5),
            ]
        })
        .collect();
    PositionFunction2D::from_fn(points, len, |x, y| {
        bumps
            .iter()
            .map(|&[amp, cx, cy, sx, sy, tilt]| {
                let (u, v) = ((x - cx) / sx, (y - cy) / sy);
                amp * (1.0 + tilt * u) * (-0.5 * (u * u + v * v)).exp()
            })
            .sum()
    })
}

/// η‖∂_xψ‖² + ‖ψ‖²/η − sup_x ∫|ψ|² dy ≥ 0 on random smooth samples.
pub fn trace_inequality(seed: u64, samples: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let psi = random_smooth_sample(&mut rng, 96, 24.0);
        let eta = 10f64.powf(rng.random_range(-1.5..1.5));
        // normalized so the margin is comparable across samples
        let m = trace_inequality_check(&psi, eta) / psi.sup_line_norm_sq();
        worst = worst.min(m);
    }
    CheckResult {
        name: "trace inequality margin",
        value: worst,
        tolerance: 0.0,
        passed: worst >= 0.0,
        detail: format!("smallest relative margin over {samples} samples, η log-uniform in [0.03, 30]"),
    }
}

/// τ = v̂₀/√(2π) − τ v̂₀ I(λ)/√(2π) with v̂₀ = α/√(2π).
pub fn tau_fixed_point(seed: u64, samples: usize) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut used = 0;
    while used < samples {
        let alpha = rng.random_range(-5.0..5.0);
        let m = rng.random_range(0.1..5.0);
        let lambda = rng.random_range(0.01..100.0);
        if tau_pole(alpha, m).is_some_and(|p| (lambda - p).abs() <= 1e-3 * p) {
            continue;
        }
        used += 1;
        let t = tau(lambda, alpha, m).expect("away from the pole");
        let v0 = alpha / SQRT_2PI;
        let rhs = v0 / SQRT_2PI - t * v0 * free_propagator_integral(lambda, m) / SQRT_2PI;
        worst = worst.max((t - rhs).abs() / t.abs().max(1e-3));
    }
    CheckResult::at_most("tau fixed-point identity", worst, 1e-12, format!("{samples} random (α, m, λ)"))
}

/// With A = 0 and zero potentials both resolvents collapse to R₀.
pub fn zero_coupling() -> Result<CheckResult> {
    let grid = MomentumGrid::shared(32, 3.0)?;
    let mc = MassConfig::new(1.0, 1.7, 0.6)?;
    let lambda = 4.0;
    let f = GridFunction2D::from_fn(grid.clone(), Particle::One, |a, b| (-(a * a) - 0.7 * b * b + 0.2 * a).exp());
    let free = apply_free_resolvent(&f, lambda, &mc);
    let limit = LimitResolvent::new(grid.clone(), mc, CouplingMatrix::zero(), lambda)?;
    let eps = FaddeevSolver::new(grid, mc, &PairPotentials::zero(), 0.3, lambda, MarginCheck::Skip)?;
    let mut worst = 0.0f64;
    for g in [limit.apply(&f), limit.apply_operator_path(&f), eps.apply(&f)?] {
        let mut d = g;
        d.axpy(-1.0, &free);
        worst = worst.max(d.max_abs() / free.max_abs());
    }
    Ok(CheckResult::at_most("A=0 gives R0", worst, 1e-12, "limit (both paths) and finite-range".into()))
}

/// Runs every check; solver failures become failed checks.
pub fn run_suite(seed: u64) -> Vec<CheckResult> {
    let failed = |name: &'static str, e: crate::Error| CheckResult {
        name,
        value: f64::NAN,
        tolerance: f64::NAN,
        passed: false,
        detail: format!("solver error: {e}"),
    };
    vec![
        kinetic_form_invariance(seed, 2000),
        transform_cycle(seed.wrapping_add(1), 2000),
        adjointness(seed.wrapping_add(2)),
        two_path_agreement(),
        eps_symmetry().unwrap_or_else(|e| failed("finite-range resolvent symmetry", e)),
        limit_symmetry(),
        boundary_residual().unwrap_or_else(|e| failed("boundary residual", e)),
        trace_inequality(seed.wrapping_add(3), 100),
        tau_fixed_point(seed.wrapping_add(4), 2000),
        zero_coupling().unwrap_or_else(|e| failed("A=0 gives R0", e)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cheap_checks_pass() {
        for c in [
            kinetic_form_invariance(1, 200),
            transform_cycle(2, 200),
            tau_fixed_point(3, 200),
            trace_inequality(4, 10),
            two_path_agreement(),
        ] {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn random_samples_are_reproducible() {
        let a = random_smooth_sample(&mut ChaCha8Rng::seed_from_u64(9), 32, 16.0);
        let b = random_smooth_sample(&mut ChaCha8Rng::seed_from_u64(9), 32, 16.0);
        assert_eq!(a.values, b.values);
        assert!(a.norm_sq() > 0.0);
    }
}
