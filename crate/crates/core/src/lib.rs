//! Linear elasticity with a nonlocal surface penalty against
//! self-interpenetration.
//!
//! The pipeline: [`mesh`] builds the pincer benchmark, [`fem`] assembles the
//! P1 stiffness and load, [`reduction`] condenses the quadratic energy onto
//! the non-penetration degrees of freedom, [`penalty`] evaluates the surface
//! penalty and its gradient, and [`optimize`] minimizes the sum with a
//! preconditioned BFGS iteration. [`validate`] checks computed deformations
//! a posteriori. [`cli`] wires these into the `selfcontact` binary.

pub mod bfgs;
pub mod cli;
pub mod config;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod optimize;
pub mod penalty;
pub mod reduction;
pub mod report;
pub mod sparse;
pub mod validate;
pub mod vtk;

pub use error::{Error, Result};
