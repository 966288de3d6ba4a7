//! Momentum-space solvers for three particles on a line with short-range
//! pair interactions.
//!
//! Two resolvents are computed side by side: the finite-range one, built
//! from the Faddeev equations with scaled potentials ε⁻¹v(x/ε), and its
//! zero-range limit, built from the one-dimensional charge equations. The
//! [`convergence`] module measures how fast the first approaches the second.

pub mod convergence;
pub mod deltares;
pub mod error;
pub mod faddeev;
pub mod kinematics;
pub mod krylov;
pub mod linalg;
pub mod oracle;
pub mod potential;
pub mod quadrature;
pub mod resolvent;
pub mod special;
pub mod twobody;
pub mod validate;

pub use error::{Error, Result};
