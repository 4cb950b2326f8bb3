//! Dirac evolution on desk-scale globally hyperbolic spacetimes with timelike
//! boundary, under nonlocal (Grassmannian) boundary conditions.

pub mod analysis;
pub mod boundary;
mod bordered;
pub mod clifford;
pub mod dense;
pub mod discrete;
pub mod error;
pub mod evolve;
pub mod geometry;
pub mod green;
pub mod oracle;
pub mod profile;
pub mod spinor;

pub use error::{Error, Result};

pub type C64 = faer::c64;
