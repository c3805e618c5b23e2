//! Separation of variables verification lab for the fundamental gl(3) and gl(2)
//! inhomogeneous rational lattice models.
//!
//! The library builds transfer matrices and their fusion hierarchy, the SoV co-vector and
//! vector bases, their coupling matrix and measure, the degenerate-twist orthogonal bases with
//! their determinant scalar-product formulas, and the spectral-projector charges that restore
//! orthogonality for invertible twists.

pub mod cli;
pub mod det0_spectrum;
pub mod error;
pub mod gl2_model;
pub mod gl3_model;
pub mod numkernel;
pub mod sampling;
pub mod sov_bases;
pub mod sov_measure;
pub mod tt_charges;

pub use error::{Result, SovError};
pub use numkernel::{CMatrix, C64};
