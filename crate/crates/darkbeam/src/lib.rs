//! Continuous transfer of quantum states from a cw light field to a moving
//! atomic beam by Raman adiabatic passage in a spatially varying Stokes
//! field.
//!
//! The crate provides the dimensionless physical model and its feasibility
//! conditions ([`model`]), the closed-form adiabatic transfer map
//! ([`adiabatic`]), a direct solver for the coupled envelope equations
//! ([`pde`]), photon/atom counting statistics and Gaussian entanglement
//! transfer ([`stats`]), and a scenario runner with JSON configuration
//! ([`config`], [`scenario`]).

pub mod adiabatic;
pub mod stats;
pub mod envelope;
pub mod error;
pub mod model;
pub mod pde;
pub mod quad;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
