//! Run configuration: JSON on disk, validated into solver inputs at load.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use zerorange::kinematics::MassConfig;
use zerorange::potential::{alpha_mismatch, PairPotentials, Potential, PotentialRegistry};

/// Largest tolerated |α − √(2π) v̂(0)|, and between a stated α and the one
/// implied by the parameters.
pub const ALPHA_TOLERANCE: f64 = 1e-10;

/// A configuration problem, located by field path and, for syntax and type
/// errors, by line and column.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub field: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            line: None,
            column: None,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, "line {l}, column {c}: ")?;
        }
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub family: String,
    #[serde(default = "empty_object")]
    pub params: Value,
    /// Optional statement of ∫v; checked against the parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

/// One potential shared by all pairs, or one per pair in the order 23, 31, 12.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Potentials {
    PerPair([PotentialSpec; 3]),
    Shared(PotentialSpec),
}

impl Potentials {
    fn specs(&self) -> [&PotentialSpec; 3] {
        match self {
            Potentials::Shared(s) => [s, s, s],
            Potentials::PerPair([a, b, c]) => [a, b, c],
        }
    }

    fn field(&self, k: usize) -> String {
        match self {
            Potentials::Shared(_) => "potentials".into(),
            Potentials::PerPair(_) => format!("potentials[{k}]"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    /// Map scale; defaults to √(C₁₂₃ λ) at the reference energy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaScan {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl LambdaScan {
    /// Geometric mesh from lo to hi inclusive.
    pub fn points(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|k| self.lo * (self.hi / self.lo).powf(k as f64 / (self.steps - 1) as f64))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Random probes per norm estimate.
    pub probes: usize,
    /// Power steps per probe.
    pub iterations: usize,
    /// Relative change tolerated when N doubles at the smallest ε.
    pub floor_tol: f64,
    pub floor_iterations: usize,
    /// Exponent b of the momentum weights in the two-body t^ε → τ and the
    /// ρ → ξ distances.
    pub weight_b: f64,
    pub gmres_tol: f64,
    pub gmres_restart: usize,
    pub gmres_max_iter: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            probes: 3,
            iterations: 50,
            floor_tol: 0.1,
            floor_iterations: 15,
            weight_b: 0.9,
            gmres_tol: 1e-8,
            gmres_restart: 40,
            gmres_max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    pub points: usize,
    pub box_len: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Prepended to every file name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix: Option<String>,
}

pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "unit_masses")]
    pub masses: [f64; 3],
    pub potentials: Potentials,
    pub grid: GridSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_scan: Option<LambdaScan>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Width of the Gaussian source exp(−(q² + p²)/2w²).
    #[serde(default = "unit_width")]
    pub source_width: f64,
    /// Direct position-space comparison in `faddeev-solve`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub output: OutputSpec,
}

fn unit_masses() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

fn unit_width() -> f64 {
    1.0
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// A configuration that passed every check, with its solver objects built.
#[derive(Debug, Clone)]
pub struct Setup {
    pub config: RunConfig,
    pub mc: MassConfig,
    pub pots: PairPotentials,
}

impl Setup {
    /// Energies to run at: the scan if given, else the single λ.
    pub fn lambdas(&self) -> Vec<f64> {
        match (self.config.lambda_scan, self.config.lambda) {
            (Some(scan), _) => scan.points(),
            (None, Some(l)) => vec![l],
            (None, None) => Vec::new(),
        }
    }

    /// Energy that fixes the default grid scale.
    pub fn reference_lambda(&self) -> Option<f64> {
        match (self.config.lambda, self.config.lambda_scan) {
            (Some(l), _) => Some(l),
            (None, Some(s)) => Some((s.lo * s.hi).sqrt()),
            (None, None) => None,
        }
    }

    pub fn grid_scale(&self) -> Option<f64> {
        self.config
            .grid
            .l
            .or_else(|| self.reference_lambda().map(|l| (self.mc.c123() * l).sqrt()))
    }

    pub fn require_lambda(&self) -> Result<f64, ConfigError> {
        self.config
            .lambda
            .ok_or_else(|| ConfigError::at("lambda", "this experiment needs a single lambda"))
    }

    pub fn require_scan(&self) -> Result<LambdaScan, ConfigError> {
        self.config
            .lambda_scan
            .ok_or_else(|| ConfigError::at("lambda_scan", "this experiment needs a lambda scan"))
    }

    pub fn require_eps(&self, min: usize) -> Result<&[f64], ConfigError> {
        if self.config.eps.len() < min {
            return Err(ConfigError::at("eps", format!("this experiment needs at least {min} ε values")));
        }
        Ok(&self.config.eps)
    }
}

pub fn load(path: &Path) -> Result<Setup, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::at("", format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> Result<Setup, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ConfigError {
            field: if field == "." { String::new() } else { field },
            line: Some(inner.line()),
            column: Some(inner.column()),
            message: strip_position(&inner.to_string()),
        }
    })?;
    validate(config)
}

// serde_json appends " at line L column C", which is reported separately.
fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

fn positive(field: &str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::at(field, format!("must be finite and positive, got {v}")))
    }
}

/// Semantic checks and construction of the potentials.
pub fn validate(config: RunConfig) -> Result<Setup, ConfigError> {
    let [m1, m2, m3] = config.masses;
    let mc = MassConfig::new(m1, m2, m3).map_err(|e| ConfigError::at("masses", e.to_string()))?;

    let registry = PotentialRegistry::default();
    let mut built: Vec<Arc<dyn Potential>> = Vec::with_capacity(3);
    for (k, spec) in config.potentials.specs().into_iter().enumerate() {
        let field = config.potentials.field(k);
        let pot = registry
            .build(&spec.family, &spec.params)
            .map_err(|e| ConfigError::at(format!("{field}.family/params"), e.to_string()))?;
        let mismatch = alpha_mismatch(pot.as_ref());
        if !(mismatch <= ALPHA_TOLERANCE) {
            return Err(ConfigError::at(
                field,
                format!("α = {} but √(2π) v̂(0) differs by {mismatch:.3e}", pot.alpha()),
            ));
        }
        if let Some(stated) = spec.alpha {
            let diff = (stated - pot.alpha()).abs();
            if !(diff <= ALPHA_TOLERANCE) {
                return Err(ConfigError::at(
                    format!("{field}.alpha"),
                    format!(
                        "stated α = {stated} but the parameters give √(2π) v̂(0) = {} (mismatch {diff:.3e})",
                        pot.alpha()
                    ),
                ));
            }
        }
        built.push(pot);
    }
    let pots = PairPotentials::new(built[0].clone(), built[1].clone(), built[2].clone());

    if config.grid.n < 4 {
        return Err(ConfigError::at("grid.n", format!("need at least 4 nodes, got {}", config.grid.n)));
    }
    if let Some(l) = config.grid.l {
        positive("grid.l", l)?;
    }
    if let Some(l) = config.lambda {
        positive("lambda", l)?;
    }
    if let Some(s) = config.lambda_scan {
        positive("lambda_scan.lo", s.lo)?;
        if !(s.hi > s.lo && s.hi.is_finite()) {
            return Err(ConfigError::at("lambda_scan.hi", format!("must exceed lo = {}, got {}", s.lo, s.hi)));
        }
        if s.steps < 3 {
            return Err(ConfigError::at("lambda_scan.steps", format!("need at least 3, got {}", s.steps)));
        }
    }
    for (k, &e) in config.eps.iter().enumerate() {
        positive(&format!("eps[{k}]"), e)?;
        if k > 0 && e >= config.eps[k - 1] {
            return Err(ConfigError::at(format!("eps[{k}]"), "ε list must be strictly decreasing"));
        }
    }
    let t = &config.tolerances;
    if t.probes == 0 {
        return Err(ConfigError::at("tolerances.probes", "must be at least 1"));
    }
    if t.iterations == 0 {
        return Err(ConfigError::at("tolerances.iterations", "must be at least 1"));
    }
    positive("tolerances.floor_tol", t.floor_tol)?;
    positive("tolerances.weight_b", t.weight_b)?;
    positive("tolerances.gmres_tol", t.gmres_tol)?;
    if t.gmres_restart == 0 || t.gmres_max_iter == 0 {
        return Err(ConfigError::at("tolerances.gmres_restart", "GMRES sizes must be at least 1"));
    }
    positive("source_width", config.source_width)?;
    if let Some(o) = config.oracle {
        if o.points < 8 || o.points % 2 != 0 {
            return Err(ConfigError::at("oracle.points", format!("must be even and at least 8, got {}", o.points)));
        }
        positive("oracle.box_len", o.box_len)?;
    }
    Ok(Setup { config, mc, pots })
}
