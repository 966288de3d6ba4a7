//! Masses, Jacobi momenta and the free kinetic energy in every coordinate
//! system used by the solvers.
//!
//! Particles are labelled 1, 2, 3 and pairs 23, 31, 12. A pair and its
//! spectator are tied together by [`PairIndex::companion`]. All permuted
//! formulae are generated from the (23, 1) case by the cyclic relabelling
//! 1 → 2 → 3 → 1, so nothing below is written out three times by hand.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the three particles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Particle {
    One,
    Two,
    Three,
}

impl Particle {
    pub const ALL: [Particle; 3] = [Particle::One, Particle::Two, Particle::Three];

    /// Zero-based slot (particle 1 → 0).
    pub fn slot(self) -> usize {
        match self {
            Particle::One => 0,
            Particle::Two => 1,
            Particle::Three => 2,
        }
    }

    pub fn from_slot(slot: usize) -> Particle {
        Particle::ALL[slot % 3]
    }

    /// Cyclic successor: 1 → 2 → 3 → 1.
    pub fn next(self) -> Particle {
        Particle::from_slot(self.slot() + 1)
    }

    pub fn prev(self) -> Particle {
        Particle::from_slot(self.slot() + 2)
    }

    /// The interacting pair this particle is the spectator of.
    pub fn pair(self) -> PairIndex {
        match self {
            Particle::One => PairIndex::P23,
            Particle::Two => PairIndex::P31,
            Particle::Three => PairIndex::P12,
        }
    }

    pub fn label(self) -> u8 {
        self.slot() as u8 + 1
    }
}

/// One of the three interacting pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairIndex {
    #[serde(rename = "23")]
    P23,
    #[serde(rename = "31")]
    P31,
    #[serde(rename = "12")]
    P12,
}

impl PairIndex {
    pub const ALL: [PairIndex; 3] = [PairIndex::P23, PairIndex::P31, PairIndex::P12];

    /// The spectator particle: companion(23) = 1, companion(31) = 2, companion(12) = 3.
    pub fn companion(self) -> Particle {
        match self {
            PairIndex::P23 => Particle::One,
            PairIndex::P31 => Particle::Two,
            PairIndex::P12 => Particle::Three,
        }
    }

    /// The two members of the pair in cyclic order (23 → (2, 3)).
    pub fn members(self) -> (Particle, Particle) {
        let l = self.companion();
        (l.next(), l.prev())
    }

    pub fn slot(self) -> usize {
        self.companion().slot()
    }

    pub fn label(self) -> &'static str {
        match self {
            PairIndex::P23 => "23",
            PairIndex::P31 => "31",
            PairIndex::P12 => "12",
        }
    }

    pub fn parse(s: &str) -> Option<PairIndex> {
        match s {
            "23" | "32" => Some(PairIndex::P23),
            "31" | "13" => Some(PairIndex::P31),
            "12" | "21" => Some(PairIndex::P12),
            _ => None,
        }
    }
}

/// The three masses together with all derived reduced masses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassConfig {
    masses: [f64; 3],
    /// m_γ indexed by the spectator slot (m_23 at slot 0).
    pair_reduced: [f64; 3],
    /// μ_ℓ indexed by the spectator slot.
    spectator_reduced: [f64; 3],
    total: f64,
}

impl MassConfig {
    /// Derives every reduced mass from the three particle masses.
    pub fn new(m1: f64, m2: f64, m3: f64) -> Result<MassConfig> {
        let masses = [m1, m2, m3];
        if masses.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "masses must be finite and strictly positive, got ({m1}, {m2}, {m3})"
            )));
        }
        let total = m1 + m2 + m3;
        let mut pair_reduced = [0.0; 3];
        let mut spectator_reduced = [0.0; 3];
        for l in 0..3 {
            let a = masses[(l + 1) % 3];
            let b = masses[(l + 2) % 3];
            pair_reduced[l] = a * b / (a + b);
            spectator_reduced[l] = masses[l] * (a + b) / total;
        }
        Ok(MassConfig {
            masses,
            pair_reduced,
            spectator_reduced,
            total,
        })
    }

    pub fn equal_unit() -> MassConfig {
        MassConfig::new(1.0, 1.0, 1.0).expect("unit masses are valid")
    }

    pub fn masses(&self) -> [f64; 3] {
        self.masses
    }

    pub fn mass(&self, p: Particle) -> f64 {
        self.masses[p.slot()]
    }

    /// Reduced mass m_γ of the pair.
    pub fn pair_mass(&self, pair: PairIndex) -> f64 {
        self.pair_reduced[pair.slot()]
    }

    /// Reduced mass μ_ℓ between particle ℓ and the pair it is the spectator of.
    pub fn spectator_mass(&self, l: Particle) -> f64 {
        self.spectator_reduced[l.slot()]
    }

    /// Reduced mass of two arbitrary distinct particles.
    pub fn reduced(&self, a: Particle, b: Particle) -> f64 {
        let (ma, mb) = (self.mass(a), self.mass(b));
        ma * mb / (ma + mb)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Ratio m_{ℓ+1}/(m_{ℓ+1}+m_{ℓ+2}) entering k_γ = -p_{ℓ+1} - ratio·p_ℓ.
    pub fn shift_ratio(&self, l: Particle) -> f64 {
        let b = self.mass(l.next());
        let c = self.mass(l.prev());
        b / (b + c)
    }

    /// Constant 2·max(m_a, m_b) of the lower bound
    /// K(p_a, p_b) ≥ (p_a² + p_b²) / (2 max(m_a, m_b)).
    pub fn lower_bound_constant(&self, a: Particle, b: Particle) -> f64 {
        2.0 * self.mass(a).max(self.mass(b))
    }

    /// Smallest of the three lower-bound constants.
    pub fn c123(&self) -> f64 {
        Particle::ALL
            .iter()
            .map(|&l| self.lower_bound_constant(l, l.next()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Energy of the two-body bound state of a zero-range interaction of
    /// strength `alpha` in the pair (negative alpha only).
    pub fn two_body_threshold(&self, pair: PairIndex, alpha: f64) -> Option<f64> {
        (alpha < 0.0).then(|| self.pair_mass(pair) * alpha * alpha / 2.0)
    }

    /// Free kinetic energy in the natural spectator coordinates of
    /// component ℓ: `q = p_{ℓ+1}`, `p = p_ℓ`.
    #[inline]
    pub fn kinetic_natural(&self, l: Particle, q: f64, p: f64) -> f64 {
        let s = l.slot();
        let m_pair = self.pair_reduced[s];
        let m_other = self.masses[(s + 2) % 3];
        let m_lo = self.reduced(l, l.prev());
        q * q / (2.0 * m_pair) + q * p / m_other + p * p / (2.0 * m_lo)
    }

    /// Free kinetic energy with `q = p_{ℓ+2}`, `p = p_ℓ`.
    #[inline]
    pub fn kinetic_swapped(&self, l: Particle, q: f64, p: f64) -> f64 {
        let s = l.slot();
        let m_pair = self.pair_reduced[s];
        let m_other = self.masses[(s + 1) % 3];
        let m_lo = self.reduced(l, l.next());
        q * q / (2.0 * m_pair) + q * p / m_other + p * p / (2.0 * m_lo)
    }

    /// Σ p_i² / (2 m_i) for three momenta summing to zero.
    #[inline]
    pub fn kinetic_particles(&self, p: [f64; 3]) -> f64 {
        p.iter()
            .zip(self.masses.iter())
            .map(|(pi, mi)| pi * pi / (2.0 * mi))
            .sum()
    }
}

/// A point of the two-dimensional momentum space in one of its coordinate
/// representations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MomentumPoint {
    /// Jacobi momenta (k_γ, p_ℓ) of a chosen pair.
    Jacobi { pair: PairIndex, k: f64, p: f64 },
    /// Two single-particle momenta (p_a, p_b); the third is -p_a - p_b.
    Spectator {
        first: Particle,
        second: Particle,
        p_first: f64,
        p_second: f64,
    },
}

impl MomentumPoint {
    /// The three single-particle momenta of this point.
    pub fn particle_momenta(&self, mc: &MassConfig) -> [f64; 3] {
        let mut out = [0.0; 3];
        match *self {
            MomentumPoint::Jacobi { pair, k, p } => {
                let l = pair.companion();
                let (pb, pl) = to_spectator_coords(l, k, p, mc);
                out[l.slot()] = pl;
                out[l.next().slot()] = pb;
                out[l.prev().slot()] = -pl - pb;
            }
            MomentumPoint::Spectator {
                first,
                second,
                p_first,
                p_second,
            } => {
                assert_ne!(first, second, "spectator form needs two distinct particles");
                out[first.slot()] = p_first;
                out[second.slot()] = p_second;
                let third = 3 - first.slot() - second.slot();
                out[third] = -p_first - p_second;
            }
        }
        out
    }
}

/// Free kinetic energy of a momentum point in its own representation.
pub fn kinetic_energy(pt: MomentumPoint, mc: &MassConfig) -> f64 {
    match pt {
        MomentumPoint::Jacobi { pair, k, p } => {
            k * k / (2.0 * mc.pair_mass(pair)) + p * p / (2.0 * mc.spectator_mass(pair.companion()))
        }
        MomentumPoint::Spectator {
            first,
            second,
            p_first,
            p_second,
        } => {
            assert_ne!(first, second, "spectator form needs two distinct particles");
            let third = Particle::from_slot(3 - first.slot() - second.slot());
            p_first * p_first / (2.0 * mc.reduced(first, third))
                + p_second * p_second / (2.0 * mc.reduced(second, third))
                + p_first * p_second / mc.mass(third)
        }
    }
}

/// Jacobi momenta of the next pair in cyclic order:
/// (k_23, p_1) → (k_31, p_2), (k_31, p_2) → (k_12, p_3), (k_12, p_3) → (k_23, p_1).
/// `l` is the spectator of the input pair.
pub fn transform_pair(l: Particle, k: f64, p: f64, mc: &MassConfig) -> (f64, f64) {
    let (ma, mb, mc_) = (mc.mass(l), mc.mass(l.next()), mc.mass(l.prev()));
    let m = mc.total();
    let k_next = mc_ * m / ((mb + mc_) * (mc_ + ma)) * p - ma / (mc_ + ma) * k;
    let p_next = -mb / (mb + mc_) * p - k;
    (k_next, p_next)
}

/// Jacobi momenta of the previous pair in cyclic order:
/// (k_23, p_1) → (k_12, p_3) and cyclic variants.
pub fn transform_pair_back(l: Particle, k: f64, p: f64, mc: &MassConfig) -> (f64, f64) {
    let (ma, mb, mc_) = (mc.mass(l), mc.mass(l.next()), mc.mass(l.prev()));
    let m = mc.total();
    let k_prev = -mb * m / ((mb + mc_) * (ma + mb)) * p - ma / (ma + mb) * k;
    let p_prev = -mc_ / (mb + mc_) * p + k;
    (k_prev, p_prev)
}

/// (k_γ, p_ℓ) → (p_{ℓ+1}, p_ℓ).
pub fn to_spectator_coords(l: Particle, k: f64, p: f64, mc: &MassConfig) -> (f64, f64) {
    (-k - mc.shift_ratio(l) * p, p)
}

/// (p_{ℓ+1}, p_ℓ) → (k_γ, p_ℓ); exact inverse of [`to_spectator_coords`].
pub fn from_spectator_coords(l: Particle, q: f64, p: f64, mc: &MassConfig) -> (f64, f64) {
    (-q - mc.shift_ratio(l) * p, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn derived_masses() {
        let mc = MassConfig::equal_unit();
        assert_relative_eq!(mc.pair_mass(PairIndex::P23), 0.5);
        assert_relative_eq!(mc.spectator_mass(Particle::One), 2.0 / 3.0);
        assert_relative_eq!(mc.total(), 3.0);

        let mc = MassConfig::new(1.0, 2.0, 3.0).unwrap();
        assert_relative_eq!(mc.pair_mass(PairIndex::P23), 6.0 / 5.0, epsilon = 1e-15);
        assert_relative_eq!(mc.spectator_mass(Particle::One), 5.0 / 6.0, epsilon = 1e-15);
        assert_relative_eq!(mc.total(), 6.0);
        // cyclic partners
        assert_relative_eq!(mc.pair_mass(PairIndex::P31), 3.0 / 4.0, epsilon = 1e-15);
        assert_relative_eq!(mc.pair_mass(PairIndex::P12), 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(mc.spectator_mass(Particle::Three), 3.0 * 3.0 / 6.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_positive_masses() {
        assert!(MassConfig::new(1.0, 1.0, 0.0).is_err());
        assert!(MassConfig::new(1.0, -1.0, 1.0).is_err());
        assert!(MassConfig::new(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn companion_indices() {
        assert_eq!(PairIndex::P23.companion(), Particle::One);
        assert_eq!(PairIndex::P31.companion(), Particle::Two);
        assert_eq!(PairIndex::P12.companion(), Particle::Three);
        assert_eq!(PairIndex::P31.members(), (Particle::Three, Particle::One));
    }

    #[test]
    fn pair_transform_examples() {
        let mc = MassConfig::equal_unit();
        assert_eq!(transform_pair(Particle::One, 0.0, 0.0, &mc), (0.0, 0.0));
        let (k, p) = transform_pair(Particle::One, 0.0, 1.0, &mc);
        assert_relative_eq!(k, 0.75, epsilon = 1e-15);
        assert_relative_eq!(p, -0.5, epsilon = 1e-15);
        let (k, p) = transform_pair(Particle::One, 1.0, 0.0, &mc);
        assert_relative_eq!(k, -0.5, epsilon = 1e-15);
        assert_relative_eq!(p, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn spectator_examples() {
        let mc = MassConfig::equal_unit();
        assert_eq!(to_spectator_coords(Particle::One, 0.0, 0.0, &mc), (0.0, 0.0));
        let (p2, p1) = to_spectator_coords(Particle::One, 1.0, 2.0, &mc);
        assert_relative_eq!(p2, -2.0);
        assert_relative_eq!(p1, 2.0);
    }

    #[test]
    fn kinetic_examples() {
        let mc = MassConfig::equal_unit();
        let zero = MomentumPoint::Jacobi {
            pair: PairIndex::P23,
            k: 0.0,
            p: 0.0,
        };
        assert_eq!(kinetic_energy(zero, &mc), 0.0);
        let sp = MomentumPoint::Spectator {
            first: Particle::Two,
            second: Particle::One,
            p_first: 1.0,
            p_second: 1.0,
        };
        assert_relative_eq!(kinetic_energy(sp, &mc), 3.0, epsilon = 1e-15);
        let jac = MomentumPoint::Jacobi {
            pair: PairIndex::P23,
            k: 1.0,
            p: 0.0,
        };
        assert_relative_eq!(kinetic_energy(jac, &mc), 1.0, epsilon = 1e-15);
        assert_relative_eq!(mc.kinetic_natural(Particle::One, 1.0, 1.0), 3.0, epsilon = 1e-15);
    }

    fn masses() -> impl Strategy<Value = MassConfig> {
        (0.1f64..10.0, 0.1f64..10.0, 0.1f64..10.0).prop_map(|(a, b, c)| MassConfig::new(a, b, c).unwrap())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn kinetic_form_invariance(mc in masses(), k in -50.0f64..50.0, p in -50.0f64..50.0) {
            // start from (k_23, p_1) and visit every representation of the same point
            let e0 = kinetic_energy(MomentumPoint::Jacobi { pair: PairIndex::P23, k, p }, &mc);
            let (k31, p2) = transform_pair(Particle::One, k, p, &mc);
            let (k12, p3) = transform_pair(Particle::Two, k31, p2, &mc);
            let p1 = p;
            let reps = [
                MomentumPoint::Jacobi { pair: PairIndex::P31, k: k31, p: p2 },
                MomentumPoint::Jacobi { pair: PairIndex::P12, k: k12, p: p3 },
                MomentumPoint::Spectator { first: Particle::Two, second: Particle::One, p_first: p2, p_second: p1 },
                MomentumPoint::Spectator { first: Particle::Three, second: Particle::Two, p_first: p3, p_second: p2 },
                MomentumPoint::Spectator { first: Particle::One, second: Particle::Three, p_first: p1, p_second: p3 },
            ];
            prop_assert!((p1 + p2 + p3).abs() <= 1e-12 * (p1.abs() + p2.abs() + p3.abs() + 1.0));
            for r in reps {
                prop_assert!(rel(kinetic_energy(r, &mc), e0) <= 1e-12);
            }
            prop_assert!(rel(mc.kinetic_particles([p1, p2, p3]), e0) <= 1e-12);
            prop_assert!(rel(mc.kinetic_natural(Particle::One, p2, p1), e0) <= 1e-12);
            prop_assert!(rel(mc.kinetic_natural(Particle::Two, p3, p2), e0) <= 1e-12);
            prop_assert!(rel(mc.kinetic_swapped(Particle::One, p3, p1), e0) <= 1e-12);
        }

        #[test]
        fn transform_cycle_is_identity(mc in masses(), k in -50.0f64..50.0, p in -50.0f64..50.0) {
            let mut state = (k, p);
            for l in [Particle::One, Particle::Two, Particle::Three] {
                state = transform_pair(l, state.0, state.1, &mc);
            }
            prop_assert!((state.0 - k).abs() <= 1e-12 * (1.0 + k.abs() + p.abs()));
            prop_assert!((state.1 - p).abs() <= 1e-12 * (1.0 + k.abs() + p.abs()));
            let (kb, pb) = transform_pair_back(Particle::One, k, p, &mc);
            let (kf, pf) = transform_pair(Particle::Three, kb, pb, &mc);
            prop_assert!((kf - k).abs() <= 1e-12 * (1.0 + k.abs() + p.abs()));
            prop_assert!((pf - p).abs() <= 1e-12 * (1.0 + k.abs() + p.abs()));
        }

        #[test]
        fn spectator_roundtrip(mc in masses(), k in -50.0f64..50.0, p in -50.0f64..50.0) {
            for l in Particle::ALL {
                let (q, pp) = to_spectator_coords(l, k, p, &mc);
                let (k2, p2) = from_spectator_coords(l, q, pp, &mc);
                prop_assert!((k2 - k).abs() <= 1e-13 * (1.0 + k.abs() + p.abs()));
                prop_assert_eq!(p2, p);
            }
        }

        #[test]
        fn kinetic_lower_bound(mc in masses(), q in -50.0f64..50.0, p in -50.0f64..50.0) {
            for l in Particle::ALL {
                // natural coordinates of component l are (p_{l+1}, p_l)
                let c = mc.lower_bound_constant(l.next(), l);
                prop_assert!(mc.kinetic_natural(l, q, p) >= (q * q + p * p) / c * (1.0 - 1e-14));
            }
        }
    }
}
