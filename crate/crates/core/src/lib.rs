//! Evolution families for non-autonomous linear equations on finite
//! dimensional state spaces: frozen-coefficient semigroups, two-parameter
//! propagators, parabolic regularity norms, and observation admissibility
//! certificates, with deterministic seeded sampling throughout.

pub mod admissibility;
pub mod config;
pub mod error;
pub mod evolution;
pub mod family;
pub mod grid;
pub mod linalg;
pub mod maxreg;
pub mod norms;
pub mod pde;
pub mod sampling;
pub mod semigroup;

pub use error::{Error, Result};
