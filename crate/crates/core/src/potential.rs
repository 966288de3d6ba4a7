//! Pair potentials and the registry that builds them from JSON parameters.
//!
//! Every family implements [`Potential`]. The scaled potential
//! v^ε(x) = ε⁻¹v(x/ε) keeps the coupling α = ∫v fixed, and its unitary
//! Fourier transform is v̂(εk), so solvers only ever call [`Potential::fourier`]
//! with a rescaled momentum.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::special::power_tail_cosine;

/// √(2π).
pub const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// A real, even, integrable pair potential on the line.
pub trait Potential: fmt::Debug + Send + Sync {
    /// Registry name of the family.
    fn family(&self) -> &'static str;

    /// v(x).
    fn value(&self, x: f64) -> f64;

    /// Mean of v over the cell [x − h/2, x + h/2]. The built-in families
    /// return the exact mean, so lattice sums of cell averages keep α even
    /// when the cell is wider than the potential.
    fn cell_average(&self, x: f64, h: f64) -> f64 {
        let _ = h;
        self.value(x)
    }

    /// v̂(k) = (2π)^(−1/2) ∫ e^(−ikx) v(x) dx.
    fn fourier(&self, k: f64) -> f64;

    /// Whether v is smooth, so that point samples converge spectrally.
    fn smooth(&self) -> bool {
        true
    }

    /// Typical width of the potential.
    fn length_scale(&self) -> f64 {
        1.0
    }

    /// α = ∫ v dx.
    fn alpha(&self) -> f64;

    /// Parameters as JSON, the inverse of the registry constructor.
    fn params(&self) -> Value;
}

/// v̂^ε(k) = v̂(εk).
#[inline]
pub fn fourier_v(pot: &dyn Potential, eps: f64, k: f64) -> f64 {
    pot.fourier(eps * k)
}

/// v^ε(x) = ε⁻¹ v(x/ε).
#[inline]
pub fn scaled_value(pot: &dyn Potential, eps: f64, x: f64) -> f64 {
    pot.value(x / eps) / eps
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zero;

impl Potential for Zero {
    fn family(&self) -> &'static str {
        "zero"
    }
    fn value(&self, _x: f64) -> f64 {
        0.0
    }
    fn fourier(&self, _k: f64) -> f64 {
        0.0
    }
    fn alpha(&self) -> f64 {
        0.0
    }
    fn params(&self) -> Value {
        serde_json::json!({})
    }
}

/// v(x) = −v0 for |x| < a/2, zero outside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquareWell {
    pub depth: f64,
    pub width: f64,
}

impl SquareWell {
    /// The well of the given width whose integral is `alpha`.
    pub fn with_alpha(alpha: f64, width: f64) -> Self {
        SquareWell {
            depth: -alpha / width,
            width,
        }
    }
}

impl Potential for SquareWell {
    fn family(&self) -> &'static str {
        "square-well"
    }

    fn value(&self, x: f64) -> f64 {
        if x.abs() < 0.5 * self.width {
            -self.depth
        } else {
            0.0
        }
    }

    fn cell_average(&self, x: f64, h: f64) -> f64 {
        let half = 0.5 * self.width;
        let lo = (x - 0.5 * h).max(-half);
        let hi = (x + 0.5 * h).min(half);
        if hi <= lo {
            0.0
        } else {
            -self.depth * (hi - lo) / h
        }
    }

    fn fourier(&self, k: f64) -> f64 {
        let u = 0.5 * k * self.width;
        let sinc = if u.abs() < 1e-4 {
            1.0 - u * u / 6.0 + u.powi(4) / 120.0
        } else {
            u.sin() / u
        };
        -self.depth * self.width / SQRT_2PI * sinc
    }

    fn smooth(&self) -> bool {
        false
    }

    fn length_scale(&self) -> f64 {
        self.width
    }

    fn alpha(&self) -> f64 {
        -self.depth * self.width
    }

    fn params(&self) -> Value {
        serde_json::json!({ "depth": self.depth, "width": self.width })
    }
}

/// v(x) = A exp(−x²/(2w²)).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian {
    pub amplitude: f64,
    pub width: f64,
}

impl Gaussian {
    pub fn with_alpha(alpha: f64, width: f64) -> Self {
        Gaussian {
            amplitude: alpha / (width * SQRT_2PI),
            width,
        }
    }
}

impl Potential for Gaussian {
    fn family(&self) -> &'static str {
        "gaussian"
    }

    fn value(&self, x: f64) -> f64 {
        let u = x / self.width;
        self.amplitude * (-0.5 * u * u).exp()
    }

    fn cell_average(&self, x: f64, h: f64) -> f64 {
        if h < 1e-3 * self.width {
            return self.value(x);
        }
        let s = std::f64::consts::SQRT_2 * self.width;
        let mass = erf((x + 0.5 * h) / s) - erf((x - 0.5 * h) / s);
        self.amplitude * self.width * (0.5 * std::f64::consts::PI).sqrt() * mass / h
    }

    fn fourier(&self, k: f64) -> f64 {
        let u = k * self.width;
        self.amplitude * self.width * (-0.5 * u * u).exp()
    }

    fn length_scale(&self) -> f64 {
        self.width
    }

    fn alpha(&self) -> f64 {
        self.amplitude * self.width * SQRT_2PI
    }

    fn params(&self) -> Value {
        serde_json::json!({ "amplitude": self.amplitude, "width": self.width })
    }
}

/// v(x) = c (1 + |x|)^(−1−s−η): finite (1+|x|)^s moment for η > 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerTail {
    pub amplitude: f64,
    pub s: f64,
    pub eta: f64,
}

impl PowerTail {
    pub const DEFAULT_ETA: f64 = 0.1;

    pub fn new(amplitude: f64, s: f64, eta: f64) -> Result<Self> {
        if !(s > 0.0 && eta > 0.0) {
            return Err(Error::InvalidInput(format!(
                "power-tail needs s > 0 and eta > 0, got s = {s}, eta = {eta}"
            )));
        }
        Ok(PowerTail { amplitude, s, eta })
    }

    pub fn with_alpha(alpha: f64, s: f64, eta: f64) -> Result<Self> {
        let kappa = 1.0 + s + eta;
        PowerTail::new(alpha * (kappa - 1.0) / 2.0, s, eta)
    }

    pub fn exponent(&self) -> f64 {
        1.0 + self.s + self.eta
    }
}

impl Potential for PowerTail {
    fn family(&self) -> &'static str {
        "power-tail"
    }

    fn value(&self, x: f64) -> f64 {
        self.amplitude * (1.0 + x.abs()).powf(-self.exponent())
    }

    fn cell_average(&self, x: f64, h: f64) -> f64 {
        if h < 1e-6 {
            return self.value(x);
        }
        // odd antiderivative of (1 + |x|)^(−κ)
        let kappa = self.exponent();
        let prim = |x: f64| x.signum() * (1.0 - (1.0 + x.abs()).powf(1.0 - kappa)) / (kappa - 1.0);
        self.amplitude * (prim(x + 0.5 * h) - prim(x - 0.5 * h)) / h
    }

    fn fourier(&self, k: f64) -> f64 {
        2.0 * self.amplitude / SQRT_2PI * power_tail_cosine(self.exponent(), k)
    }

    fn smooth(&self) -> bool {
        // |x| makes a kink at the origin
        false
    }

    fn alpha(&self) -> f64 {
        2.0 * self.amplitude / (self.exponent() - 1.0)
    }

    fn params(&self) -> Value {
        serde_json::json!({ "amplitude": self.amplitude, "s": self.s, "eta": self.eta })
    }
}

type Builder = fn(&Value) -> Result<Arc<dyn Potential>>;

/// Name → constructor table for potential families.
pub struct PotentialRegistry {
    builders: BTreeMap<&'static str, Builder>,
}

impl Default for PotentialRegistry {
    fn default() -> Self {
        let mut reg = PotentialRegistry {
            builders: BTreeMap::new(),
        };
        reg.register("zero", |_| Ok(Arc::new(Zero)));
        reg.register("square-well", build_square_well);
        reg.register("gaussian", build_gaussian);
        reg.register("power-tail", build_power_tail);
        reg
    }
}

impl PotentialRegistry {
    pub fn register(&mut self, name: &'static str, builder: Builder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }

    pub fn build(&self, name: &str, params: &Value) -> Result<Arc<dyn Potential>> {
        let builder = self.builders.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::InvalidInput(format!("unknown potential family '{name}', known: {known:?}"))
        })?;
        let pot = builder(params)?;
        let check = pot.alpha() - SQRT_2PI * pot.fourier(0.0);
        debug_assert!(check.abs() <= 1e-10 * pot.alpha().abs().max(1.0));
        Ok(pot)
    }
}

fn field(params: &Value, key: &str) -> Result<Option<f64>> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_f64()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| Error::InvalidInput(format!("parameter '{key}' must be a finite number"))),
    }
}

fn required(params: &Value, key: &str) -> Result<f64> {
    field(params, key)?.ok_or_else(|| Error::InvalidInput(format!("missing parameter '{key}'")))
}

fn positive(params: &Value, key: &str) -> Result<f64> {
    let v = required(params, key)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("parameter '{key}' must be positive, got {v}")))
    }
}

// Shape parameters are always required; the strength may be given either
// directly or through alpha.
fn build_square_well(p: &Value) -> Result<Arc<dyn Potential>> {
    let width = positive(p, "width")?;
    let pot = match (field(p, "depth")?, field(p, "alpha")?) {
        (Some(depth), _) => SquareWell { depth, width },
        (None, Some(alpha)) => SquareWell::with_alpha(alpha, width),
        (None, None) => return Err(Error::InvalidInput("square-well needs 'depth' or 'alpha'".into())),
    };
    Ok(Arc::new(pot))
}

fn build_gaussian(p: &Value) -> Result<Arc<dyn Potential>> {
    let width = positive(p, "width")?;
    let pot = match (field(p, "amplitude")?, field(p, "alpha")?) {
        (Some(amplitude), _) => Gaussian { amplitude, width },
        (None, Some(alpha)) => Gaussian::with_alpha(alpha, width),
        (None, None) => return Err(Error::InvalidInput("gaussian needs 'amplitude' or 'alpha'".into())),
    };
    Ok(Arc::new(pot))
}

fn build_power_tail(p: &Value) -> Result<Arc<dyn Potential>> {
    let s = positive(p, "s")?;
    let eta = field(p, "eta")?.unwrap_or(PowerTail::DEFAULT_ETA);
    let pot = match (field(p, "amplitude")?, field(p, "alpha")?) {
        (Some(c), _) => PowerTail::new(c, s, eta)?,
        (None, Some(alpha)) => PowerTail::with_alpha(alpha, s, eta)?,
        (None, None) => return Err(Error::InvalidInput("power-tail needs 'amplitude' or 'alpha'".into())),
    };
    Ok(Arc::new(pot))
}

/// The three pair potentials, indexed by pair.
#[derive(Debug, Clone)]
pub struct PairPotentials {
    pots: [Arc<dyn Potential>; 3],
}

impl PairPotentials {
    /// Potentials for the pairs 23, 31 and 12, in that order.
    pub fn new(v23: Arc<dyn Potential>, v31: Arc<dyn Potential>, v12: Arc<dyn Potential>) -> Self {
        PairPotentials { pots: [v23, v31, v12] }
    }

    pub fn identical(v: Arc<dyn Potential>) -> Self {
        PairPotentials::new(v.clone(), v.clone(), v)
    }

    pub fn zero() -> Self {
        PairPotentials::identical(Arc::new(Zero))
    }

    pub fn get(&self, pair: crate::kinematics::PairIndex) -> &dyn Potential {
        self.pots[pair.slot()].as_ref()
    }

    pub fn get_arc(&self, pair: crate::kinematics::PairIndex) -> Arc<dyn Potential> {
        self.pots[pair.slot()].clone()
    }

    /// (α_23, α_31, α_12).
    pub fn alphas(&self) -> [f64; 3] {
        [self.pots[0].alpha(), self.pots[1].alpha(), self.pots[2].alpha()]
    }

    pub fn is_zero(&self, pair: crate::kinematics::PairIndex) -> bool {
        self.pots[pair.slot()].family() == "zero"
    }
}

/// (v̂(0), α) pairs must satisfy α = √(2π) v̂(0); returns the mismatch.
pub fn alpha_mismatch(pot: &dyn Potential) -> f64 {
    (pot.alpha() - SQRT_2PI * pot.fourier(0.0)).abs()
}
