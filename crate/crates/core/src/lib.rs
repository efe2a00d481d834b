//! Projection-based reduced-order models for parametric shear-thinning Stokes
//! flow on deforming domains, discretized with continuous simplex space-time
//! finite elements.

pub mod analysis;
pub mod config;
pub mod constitutive;
pub mod eim;
pub mod error;
pub mod fom;
pub mod formats;
pub mod mesh;
pub mod offline;
pub mod pipeline;
pub mod pod;
pub mod rom;
pub mod sparse;
pub mod verification;

pub use error::{Error, Result};
