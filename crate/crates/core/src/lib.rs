//! Decoupled finite element solver for the clamped biharmonic problem `Δ²φ = f`.
//!
//! The fourth-order problem is split into a Poisson problem, a Stokes problem and a
//! second Poisson problem, each discretized with continuous Lagrange elements on
//! nested triangulations that may be graded toward singular corners.

pub mod analysis;
pub mod assembly;
pub mod corner;
pub mod error;
pub mod linalg;
pub mod mesh;
pub mod quadrature;
pub mod solvers;
pub mod source;
pub mod space;
pub mod sparse;

pub use error::{Error, Result};
