use thiserror::Error;

/// Errors raised by the solvers in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The two-body Nyström system is (numerically) singular, i.e. the energy
    /// sits on or next to a two-body bound state of the scaled potential.
    #[error("near-singular two-body system at lambda = {lambda} (condition estimate {condition:.3e})")]
    NearSingular { lambda: f64, condition: f64 },

    /// The charge system is ill conditioned, typically because the energy is
    /// close to a three-body bound state of the zero-range Hamiltonian.
    #[error("ill-conditioned charge system at lambda = {lambda} (condition estimate {condition:.3e})")]
    IllConditioned { lambda: f64, condition: f64 },

    #[error("tau is singular at lambda = {lambda} (pole at {pole})")]
    TauPole { lambda: f64, pole: f64 },

    #[error("point {point} lies outside the resolved range |q| <= {q_max}")]
    Extrapolation { point: f64, q_max: f64 },

    #[error("no root in search bracket [{lo}, {hi}]")]
    NoRoot { lo: f64, hi: f64 },

    #[error("iterative solver did not converge after {iterations} iterations (last relative residual {last:.3e})")]
    NotConverged {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("lambda = {lambda} is below the admissible margin {floor} for the finite-range solver")]
    BelowSpectrumMargin { lambda: f64, floor: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
