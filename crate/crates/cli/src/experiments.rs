//! Experiments behind one trait, registered by subcommand name.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};
use zerorange::convergence::{fit_rate, run_rate_experiment, weighted_charge_distance, RateSetup};
use zerorange::deltares::{check_boundary, find_bound_states, CouplingMatrix, LimitResolvent};
use zerorange::faddeev::{FaddeevSolver, MarginCheck};
use zerorange::kinematics::{PairIndex, Particle};
use zerorange::krylov::GmresOptions;
use zerorange::oracle::{DirectOracle, OracleOptions};
use zerorange::quadrature::{GridFunction2D, MomentumGrid};
use zerorange::twobody::{solve_tmatrix, tau, tau_pole, tmatrix_pole, weighted_sup_diff};
use zerorange::validate::run_suite;

use crate::config::{ConfigError, Setup};

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Solver(zerorange::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<zerorange::Error> for RunError {
    fn from(e: zerorange::Error) -> Self {
        RunError::Solver(e)
    }
}

/// One CSV file: a fixed header and rows of already formatted cells.
#[derive(Debug, Clone)]
pub struct Table {
    pub file: &'static str,
    pub header: &'static [&'static str],
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &'static str, header: &'static [&'static str]) -> Self {
        Table {
            file,
            header,
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}", self.file);
        self.rows.push(row);
    }
}

/// Shortest representation that parses back to the same f64.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct Outcome {
    pub outputs: Value,
    pub diagnostics: Value,
    pub tables: Vec<Table>,
    /// False when a validation check failed.
    pub passed: bool,
}

impl Outcome {
    fn ok(outputs: Value, diagnostics: Value, tables: Vec<Table>) -> Self {
        Outcome {
            outputs,
            diagnostics,
            tables,
            passed: true,
        }
    }
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;
    fn about(&self) -> &'static str;
    /// `setup` is `None` only when no config file was given.
    fn run(&self, setup: Option<&Setup>, seed: u64) -> Result<Outcome, RunError>;
}

fn need(setup: Option<&Setup>) -> Result<&Setup, ConfigError> {
    setup.ok_or_else(|| ConfigError {
        field: "--config".into(),
        line: None,
        column: None,
        message: "this experiment needs a configuration file".into(),
    })
}

fn shared_grid(s: &Setup) -> Result<Arc<MomentumGrid>, RunError> {
    let scale = s
        .grid_scale()
        .ok_or_else(|| ConfigError {
            field: "grid.l".into(),
            line: None,
            column: None,
            message: "no scale given and no lambda to derive one from".into(),
        })?;
    Ok(MomentumGrid::shared(s.config.grid.n, scale)?)
}

fn source(s: &Setup, grid: Arc<MomentumGrid>) -> GridFunction2D {
    let w2 = s.config.source_width.powi(2);
    GridFunction2D::from_fn(grid, Particle::One, |q, p| (-(q * q + p * p) / (2.0 * w2)).exp())
}

fn couplings(s: &Setup) -> CouplingMatrix {
    CouplingMatrix { alpha: s.pots.alphas() }
}

fn lambdas(s: &Setup) -> Result<Vec<f64>, ConfigError> {
    let l = s.lambdas();
    if l.is_empty() {
        return Err(ConfigError {
            field: "lambda".into(),
            line: None,
            column: None,
            message: "give either lambda or lambda_scan".into(),
        });
    }
    Ok(l)
}

/// Two-body t-matrix against τ for every interacting pair.
struct TwoBody;

impl Experiment for TwoBody {
    fn name(&self) -> &'static str {
        "two-body"
    }

    fn about(&self) -> &'static str {
        "Two-body t-matrix diagnostics and the weighted t^ε → τ rate"
    }

    fn run(&self, setup: Option<&Setup>, _seed: u64) -> Result<Outcome, RunError> {
        let s = need(setup)?;
        let lambda = s.require_lambda()?;
        let eps = s.require_eps(3)?;
        let grid = shared_grid(s)?;
        let b = s.config.tolerances.weight_b;
        let mut table = Table::new(
            "two_body.csv",
            &["pair", "eps", "lambda", "alpha", "tau", "weighted_sup_diff", "kernel_max_abs", "asymmetry"],
        );
        let mut pairs = Vec::new();
        for pair in PairIndex::ALL {
            if s.pots.is_zero(pair) {
                continue;
            }
            let pot = s.pots.get(pair);
            let m = s.mc.pair_mass(pair);
            let alpha = pot.alpha();
            let tv = tau(lambda, alpha, m)?;
            let mut diffs = Vec::with_capacity(eps.len());
            for &e in eps {
                let kernel = solve_tmatrix(pot, e, lambda, m, &grid)?;
                let d = weighted_sup_diff(&kernel, tv, b);
                table.push(vec![
                    pair.label().into(),
                    num(e),
                    num(lambda),
                    num(alpha),
                    num(tv),
                    num(d),
                    num(kernel.max_abs()),
                    num(kernel.asymmetry()),
                ]);
                diffs.push(d);
            }
            let fit = fit_rate(eps, &diffs)?;
            let pole = tau_pole(alpha, m);
            let smallest = eps[eps.len() - 1];
            let (tm_pole, tm_error) = match pole.map(|_| tmatrix_pole(pot, smallest, m, &grid)) {
                Some(Ok(p)) => (Some(p), None),
                Some(Err(e)) => (None, Some(e.to_string())),
                None => (None, None),
            };
            pairs.push(json!({
                "pair": pair.label(),
                "family": pot.family(),
                "alpha": alpha,
                "reduced_mass": m,
                "tau": tv,
                "tau_pole": pole,
                "tmatrix_pole": tm_pole,
                "tmatrix_pole_eps": smallest,
                "tmatrix_pole_error": tm_error,
                "slope": fit.slope,
                "intercept": fit.intercept,
                "fit_residual": fit.residual,
            }));
        }
        let outputs = json!({ "lambda": lambda, "weight_b": b, "pairs": pairs });
        let diagnostics = json!({ "grid_n": grid.len(), "grid_scale": grid.scale() });
        Ok(Outcome::ok(outputs, diagnostics, vec![table]))
    }
}

/// Zero-range limit: charges, resolvent applications and boundary residuals.
struct StmSolve;

impl Experiment for StmSolve {
    fn name(&self) -> &'static str {
        "stm-solve"
    }

    fn about(&self) -> &'static str {
        "Zero-range charges, resolvent applications and boundary residuals"
    }

    fn run(&self, setup: Option<&Setup>, _seed: u64) -> Result<Outcome, RunError> {
        let s = need(setup)?;
        let lambdas = lambdas(s)?;
        let grid = shared_grid(s)?;
        let a = couplings(s);
        let f = source(s, grid.clone());
        let mut summary = Table::new(
            "stm.csv",
            &[
                "lambda",
                "xi_norm_1",
                "xi_norm_2",
                "xi_norm_3",
                "psi_norm",
                "boundary_23",
                "boundary_31",
                "boundary_12",
                "path_diff",
                "condition",
            ],
        );
        let mut charges = Table::new("charges.csv", &["lambda", "p", "xi_1", "xi_2", "xi_3"]);
        let mut worst_boundary: f64 = 0.0;
        for &lambda in &lambdas {
            let limit = LimitResolvent::new(grid.clone(), s.mc, a, lambda)?;
            let xi = limit.solve_charges(&f);
            let psi = limit.assemble(&f, &xi);
            let boundary = check_boundary(&psi, &xi, lambda, &a, &s.mc);
            let mut other = limit.apply_operator_path(&f);
            other.axpy(-1.0, &psi);
            let path_diff = other.norm() / psi.norm();
            worst_boundary = boundary.iter().copied().fold(worst_boundary, f64::max);
            summary.push(vec![
                num(lambda),
                num(xi.xi[0].norm()),
                num(xi.xi[1].norm()),
                num(xi.xi[2].norm()),
                num(psi.norm()),
                num(boundary[0]),
                num(boundary[1]),
                num(boundary[2]),
                num(path_diff),
                num(xi.condition),
            ]);
            for (i, &p) in grid.nodes().iter().enumerate() {
                charges.push(vec![
                    num(lambda),
                    num(p),
                    num(xi.xi[0].values[i]),
                    num(xi.xi[1].values[i]),
                    num(xi.xi[2].values[i]),
                ]);
            }
        }
        let outputs = json!({
            "lambdas": lambdas,
            "alpha": a.alpha,
            "source_width": s.config.source_width,
            "max_boundary_residual": worst_boundary,
        });
        let diagnostics = json!({ "grid_n": grid.len(), "grid_scale": grid.scale() });
        Ok(Outcome::ok(outputs, diagnostics, vec![summary, charges]))
    }
}

/// Finite-range Faddeev solves against the zero-range limit.
struct FaddeevSolve;

impl Experiment for FaddeevSolve {
    fn name(&self) -> &'static str {
        "faddeev-solve"
    }

    fn about(&self) -> &'static str {
        "Faddeev components ρ^ε, their distance to the charges and optional oracle comparison"
    }

    fn run(&self, setup: Option<&Setup>, _seed: u64) -> Result<Outcome, RunError> {
        let s = need(setup)?;
        let lambdas = lambdas(s)?;
        let eps = s.require_eps(1)?;
        let grid = shared_grid(s)?;
        let a = couplings(s);
        let f = source(s, grid.clone());
        let t = s.config.tolerances;
        let gmres = GmresOptions {
            tol: t.gmres_tol,
            restart: t.gmres_restart,
            max_iter: t.gmres_max_iter,
        };
        let mut table = Table::new(
            "faddeev.csv",
            &[
                "eps",
                "lambda",
                "rho_norm_1",
                "rho_norm_2",
                "rho_norm_3",
                "resolvent_norm",
                "limit_diff",
                "charge_dist_1",
                "charge_dist_2",
                "charge_dist_3",
                "gmres_iterations",
                "gmres_residual",
                "clamps",
                "oracle_diff",
                "oracle_iterations",
            ],
        );
        for &lambda in &lambdas {
            let limit = LimitResolvent::new(grid.clone(), s.mc, a, lambda)?;
            let xi = limit.solve_charges(&f);
            let psi0 = limit.assemble(&f, &xi);
            for &e in eps {
                let mut solver = FaddeevSolver::new(grid.clone(), s.mc, &s.pots, e, lambda, MarginCheck::default())?;
                solver.gmres = gmres;
                let comps = solver.solve(&f)?;
                let psi = solver.assemble(&f, &comps);
                let mut diff = psi.clone();
                diff.axpy(-1.0, &psi0);
                let dist = weighted_charge_distance(&comps, &xi, t.weight_b, &s.mc);
                let oracle = match s.config.oracle {
                    Some(o) => {
                        let opts = OracleOptions {
                            points: o.points,
                            box_len: o.box_len,
                            ..OracleOptions::default()
                        };
                        let sol = DirectOracle::new(&s.pots, e, &s.mc, opts)?.solve(&f, lambda)?;
                        let mut d = sol.psi.clone();
                        d.axpy(-1.0, &psi);
                        Some((d.norm() / psi.norm(), sol.iterations))
                    }
                    None => None,
                };
                table.push(vec![
                    num(e),
                    num(lambda),
                    num(comps.rho[0].norm()),
                    num(comps.rho[1].norm()),
                    num(comps.rho[2].norm()),
                    num(psi.norm()),
                    num(diff.norm()),
                    num(dist[0]),
                    num(dist[1]),
                    num(dist[2]),
                    comps.iterations.to_string(),
                    num(comps.residual),
                    comps.clamps.to_string(),
                    opt(oracle.map(|o| o.0)),
                    oracle.map(|o| o.1.to_string()).unwrap_or_default(),
                ]);
            }
        }
        let outputs = json!({
            "lambdas": lambdas,
            "eps": eps,
            "alpha": a.alpha,
            "weight_b": t.weight_b,
            "oracle": s.config.oracle.is_some(),
        });
        let diagnostics = json!({
            "grid_n": grid.len(),
            "grid_scale": grid.scale(),
            "gmres": { "tol": gmres.tol, "restart": gmres.restart, "max_iter": gmres.max_iter },
        });
        Ok(Outcome::ok(outputs, diagnostics, vec![table]))
    }
}

/// Three-body bound states of the zero-range Hamiltonian.
struct BoundStatesScan;

impl Experiment for BoundStatesScan {
    fn name(&self) -> &'static str {
        "bound-states"
    }

    fn about(&self) -> &'static str {
        "det and σ_min scans of 1 + AM(λ) with refined roots"
    }

    fn run(&self, setup: Option<&Setup>, _seed: u64) -> Result<Outcome, RunError> {
        let s = need(setup)?;
        let scan = s.require_scan()?;
        let grid = shared_grid(s)?;
        let a = couplings(s);
        let found = find_bound_states(&a, &s.mc, &grid, scan.lo, scan.hi, scan.steps)?;
        let tau_threshold = PairIndex::ALL
            .iter()
            .filter_map(|&p| tau_pole(a.get(p), s.mc.pair_mass(p)))
            .fold(None, |acc: Option<f64>, x| Some(acc.map_or(x, |y| y.max(x))));

        let mut scan_table = Table::new("bound_scan.csv", &["lambda", "det_sign", "log_abs_det", "sigma_min"]);
        for p in &found.scan {
            scan_table.push(vec![num(p.lambda), num(p.det_sign), num(p.log_abs_det), num(p.sigma_min)]);
        }
        let mut roots = Table::new("bound_roots.csv", &["kind", "lambda"]);
        if let Some(t) = tau_threshold {
            roots.push(vec!["two-body-threshold".into(), num(t)]);
        }
        for &r in &found.det_roots {
            roots.push(vec!["det".into(), num(r)]);
        }
        for &r in &found.sigma_roots {
            roots.push(vec!["sigma-min".into(), num(r)]);
        }
        let outputs = json!({
            "alpha": a.alpha,
            "two_body_threshold": found.threshold,
            "tau_pole_threshold": tau_threshold,
            "det_roots": found.det_roots,
            "sigma_roots": found.sigma_roots,
        });
        let diagnostics = json!({
            "grid_n": grid.len(),
            "grid_scale": grid.scale(),
            "scan": { "lo": scan.lo, "hi": scan.hi, "steps": scan.steps },
        });
        Ok(Outcome::ok(outputs, diagnostics, vec![scan_table, roots]))
    }
}

/// Norm-resolvent convergence rate.
struct Converge;

impl Experiment for Converge {
    fn name(&self) -> &'static str {
        "converge"
    }

    fn about(&self) -> &'static str {
        "Power-iteration estimates of ‖R^ε − R‖ and the fitted rate"
    }

    fn run(&self, setup: Option<&Setup>, seed: u64) -> Result<Outcome, RunError> {
        let s = need(setup)?;
        let lambda = s.require_lambda()?;
        let eps = s.require_eps(3)?;
        if s.config.grid.l.is_some() {
            log::warn!("converge always uses the scale √(C123 λ); grid.l is ignored");
        }
        let t = s.config.tolerances;
        let label = {
            let fam: Vec<&str> = PairIndex::ALL.iter().map(|&p| s.pots.get(p).family()).collect();
            if fam.iter().all(|f| *f == fam[0]) {
                fam[0].to_string()
            } else {
                fam.join("/")
            }
        };
        let mut rs = RateSetup::new(label, s.mc, lambda, eps.to_vec(), s.config.grid.n);
        rs.opts.probes = t.probes;
        rs.opts.iterations = t.iterations;
        rs.opts.seed = seed;
        rs.floor_tol = t.floor_tol;
        rs.floor_iterations = t.floor_iterations;
        let exp = run_rate_experiment(&rs, &s.pots)?;

        let mut table = Table::new("converge.csv", &["eps", "lambda", "norm_diff", "local_slope", "fit_slope"]);
        for k in 0..exp.eps.len() {
            let local = (k > 0).then(|| (exp.norms[k - 1] / exp.norms[k]).ln() / (exp.eps[k - 1] / exp.eps[k]).ln());
            table.push(vec![num(exp.eps[k]), num(lambda), num(exp.norms[k]), opt(local), num(exp.slope())]);
        }
        let outputs = json!({ "slope": exp.slope(), "experiment": exp });
        let diagnostics = json!({ "floor_check_passed": exp.floor.passed, "dropped_eps": exp.floor.dropped });
        Ok(Outcome::ok(outputs, diagnostics, vec![table]))
    }
}

/// The invariant suite.
struct Validate;

impl Experiment for Validate {
    fn name(&self) -> &'static str {
        "validate"
    }

    fn about(&self) -> &'static str {
        "Run the invariant suite; exits 4 if any check fails"
    }

    fn run(&self, _setup: Option<&Setup>, seed: u64) -> Result<Outcome, RunError> {
        let checks = run_suite(seed);
        let mut table = Table::new("validate.csv", &["name", "value", "tolerance", "passed", "detail"]);
        for c in &checks {
            table.push(vec![
                c.name.into(),
                num(c.value),
                num(c.tolerance),
                c.passed.to_string(),
                c.detail.clone(),
            ]);
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Ok(Outcome {
            outputs: json!({ "checks": checks, "failed": failed }),
            diagnostics: json!({ "count": checks.len() }),
            tables: vec![table],
            passed: failed.is_empty(),
        })
    }
}

/// Subcommand name → experiment.
pub struct ExperimentRegistry {
    entries: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        let mut reg = ExperimentRegistry { entries: BTreeMap::new() };
        reg.register(Box::new(TwoBody));
        reg.register(Box::new(StmSolve));
        reg.register(Box::new(FaddeevSolve));
        reg.register(Box::new(BoundStatesScan));
        reg.register(Box::new(Converge));
        reg.register(Box::new(Validate));
        reg
    }
}

impl ExperimentRegistry {
    pub fn register(&mut self, exp: Box<dyn Experiment>) {
        self.entries.insert(exp.name(), exp);
    }

    pub fn get(&self, name: &str) -> Option<&dyn Experiment> {
        self.entries.get(name).map(|e| e.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Experiment> + '_ {
        self.entries.values().map(|e| e.as_ref())
    }
}
