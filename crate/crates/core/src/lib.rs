//! Equilibrium measures of mass `t` on the real line in polynomial external
//! fields, their evolution in `t`, and the phase transitions of the support.
//!
//! The crate is organised bottom-up:
//!
//! - [`polycore`]: dense real polynomials, roots, Laurent expansions at infinity.
//! - [`hyperquad`]: quadrature with square-root endpoint behaviour, Green and
//!   coupling polynomials, Robin constants.
//! - [`eqstate`]: a single equilibrium state at fixed `t` and its refinement.
//! - [`dynamics`]: evolution in `t`, event detection and local scaling probes.
//! - [`quartic`]: closed-form theory for quartic fields.
//! - [`fekete`]: weighted Fekete points as an independent discrete check.

pub mod dynamics;
pub mod eqstate;
pub mod error;
pub mod fekete;
pub mod hyperquad;
pub mod polycore;
pub mod quad;
pub mod quartic;

pub use error::{Error, Result};
pub use num_complex::Complex64;
