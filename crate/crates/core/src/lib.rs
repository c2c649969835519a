//! Symbolic and transfer-operator model of the geodesic flow on Schottky
//! quotients of the hyperbolic plane and their congruence covers.
//!
//! The modules build on each other in order: exact matrix arithmetic, the
//! Schottky ping-pong data, the symbolic coding, thermodynamic quantities of
//! the collocated transfer operator, the twisted operators over `SL2(Z/qZ)`,
//! the Dolgopyat contraction verifier, zeta functions and counting.

pub mod arith;
pub mod coding;
pub mod congruence;
pub mod counting;
pub mod dolgopyat;
mod error;
pub mod linalg;
pub mod schottky;
pub mod thermo;
pub mod zeta;

pub use error::{Error, Result};
