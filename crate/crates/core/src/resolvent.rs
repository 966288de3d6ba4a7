//! Resolvent strategies behind one trait, selected by name at runtime.
//!
//! Every variant maps a source f (natural coordinates of particle 1) to
//! (H + λ)⁻¹ f for its own Hamiltonian: the free one, the zero-range limit
//! through either assembly path, the Faddeev finite-range solver, or the
//! brute-force position-space oracle.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::deltares::{apply_free_resolvent, CouplingMatrix, LimitResolvent};
use crate::error::{Error, Result};
use crate::faddeev::{FaddeevSolver, MarginCheck};
use crate::kinematics::MassConfig;
use crate::oracle::{DirectOracle, OracleOptions};
use crate::potential::PairPotentials;
use crate::quadrature::{GridFunction2D, MomentumGrid};

pub trait Resolvent: Send + Sync {
    fn name(&self) -> &'static str;
    fn lambda(&self) -> f64;
    fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D>;
}

/// Everything a strategy may need to set itself up.
#[derive(Clone)]
pub struct ResolventContext {
    pub grid: Arc<MomentumGrid>,
    pub mc: MassConfig,
    pub lambda: f64,
    pub pots: PairPotentials,
    /// Zero-range couplings; `None` derives them from `pots`.
    pub couplings: Option<CouplingMatrix>,
    pub eps: f64,
    pub margin: MarginCheck,
    pub oracle: OracleOptions,
}

impl ResolventContext {
    pub fn new(grid: Arc<MomentumGrid>, mc: MassConfig, lambda: f64, pots: PairPotentials, eps: f64) -> Self {
        ResolventContext {
            grid,
            mc,
            lambda,
            pots,
            couplings: None,
            eps,
            margin: MarginCheck::default(),
            oracle: OracleOptions::default(),
        }
    }

    pub fn couplings(&self) -> CouplingMatrix {
        self.couplings.unwrap_or(CouplingMatrix {
            alpha: self.pots.alphas(),
        })
    }
}

struct Free {
    mc: MassConfig,
    lambda: f64,
}

impl Resolvent for Free {
    fn name(&self) -> &'static str {
        "free"
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D> {
        Ok(apply_free_resolvent(f, self.lambda, &self.mc))
    }
}

struct LimitCharge(LimitResolvent);

impl Resolvent for LimitCharge {
    fn name(&self) -> &'static str {
        "limit-charge"
    }
    fn lambda(&self) -> f64 {
        self.0.lambda
    }
    fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D> {
        Ok(self.0.apply(f))
    }
}

struct LimitOperator(LimitResolvent);

impl Resolvent for LimitOperator {
    fn name(&self) -> &'static str {
        "limit-operator"
    }
    fn lambda(&self) -> f64 {
        self.0.lambda
    }
    fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D> {
        Ok(self.0.apply_operator_path(f))
    }
}

struct Faddeev(FaddeevSolver);

impl Resolvent for Faddeev {
    fn name(&self) -> &'static str {
        "faddeev"
    }
    fn lambda(&self) -> f64 {
        self.0.lambda
    }
    fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D> {
        self.0.apply(f)
    }
}

struct Oracle {
    oracle: DirectOracle,
    grid: Arc<MomentumGrid>,
    lambda: f64,
}

impl Resolvent for Oracle {
    fn name(&self) -> &'static str {
        "oracle"
    }
    fn lambda(&self) -> f64 {
        self.lambda
    }
    fn apply(&self, f: &GridFunction2D) -> Result<GridFunction2D> {
        if !Arc::ptr_eq(&f.grid, &self.grid) && f.grid.nodes() != self.grid.nodes() {
            return Err(Error::InvalidInput("source lives on a different grid".into()));
        }
        Ok(self.oracle.solve(f, self.lambda)?.psi)
    }
}

type Builder = fn(&ResolventContext) -> Result<Box<dyn Resolvent>>;

/// Name → constructor table for resolvent strategies.
pub struct ResolventRegistry {
    builders: BTreeMap<&'static str, Builder>,
}

impl Default for ResolventRegistry {
    fn default() -> Self {
        let mut reg = ResolventRegistry {
            builders: BTreeMap::new(),
        };
        reg.register("free", |c| {
            Ok(Box::new(Free {
                mc: c.mc,
                lambda: c.lambda,
            }))
        });
        reg.register("limit-charge", |c| {
            Ok(Box::new(LimitCharge(LimitResolvent::new(
                c.grid.clone(),
                c.mc,
                c.couplings(),
                c.lambda,
            )?)))
        });
        reg.register("limit-operator", |c| {
            Ok(Box::new(LimitOperator(LimitResolvent::new(
                c.grid.clone(),
                c.mc,
                c.couplings(),
                c.lambda,
            )?)))
        });
        reg.register("faddeev", |c| {
            Ok(Box::new(Faddeev(FaddeevSolver::new(
                c.grid.clone(),
                c.mc,
                &c.pots,
                c.eps,
                c.lambda,
                c.margin,
            )?)))
        });
        reg.register("oracle", |c| {
            Ok(Box::new(Oracle {
                oracle: DirectOracle::new(&c.pots, c.eps, &c.mc, c.oracle)?,
                grid: c.grid.clone(),
                lambda: c.lambda,
            }))
        });
        reg
    }
}

impl ResolventRegistry {
    pub fn register(&mut self, name: &'static str, builder: Builder) {
        self.builders.insert(name, builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.builders.keys().copied()
    }

    pub fn build(&self, name: &str, ctx: &ResolventContext) -> Result<Box<dyn Resolvent>> {
        let builder = self.builders.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::InvalidInput(format!("unknown resolvent '{name}', known: {known:?}"))
        })?;
        builder(ctx)
    }
}
