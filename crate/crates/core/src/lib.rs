//! Explicit pointwise lower bounds for solutions of the Boltzmann equation.

pub mod cascade;
pub mod certificate;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod grid;
pub mod kernel;
pub mod noncutoff;
pub mod quadrature;
pub mod upheaval;
pub mod verifier;

pub use error::{Error, Result};
