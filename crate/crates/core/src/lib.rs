//! High-order Lagrangian shock hydrodynamics on curved tensor-product meshes.

pub mod app;
pub mod diagnostics;
pub mod error;
pub mod fem;
pub mod integrator;
pub mod linalg;
pub mod mesh;
pub mod operators;
pub mod physics;

pub use error::{HydroError, Result};
