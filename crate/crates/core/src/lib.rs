//! Substructuring solver workbench: adaptive-coarse-space BDDC and FETI-DP
//! preconditioners for 2D/3D elliptic problems with heterogeneous,
//! high-contrast coefficients.
//!
//! The pipeline is: structured mesh + coefficient field -> per-subdomain FEM
//! assembly -> interface equivalence classes -> Schur complements -> adaptive
//! generalized eigenvalue problems per face/edge -> primal constraint
//! selection and change of basis -> BDDC (change of basis) or FETI-DP
//! (projector preconditioner) solve with PCG and Ritz-value condition
//! estimates.

pub mod adaptive;
pub mod bddc;
pub mod coeff;
pub mod decomp;
pub mod error;
pub mod experiment;
pub mod fem;
pub mod fetidp;
pub mod krylov;
pub mod linalg;
pub mod mesh;
pub mod scaling;
pub mod schur;

pub use error::{Error, Result};

/// Dense double-precision matrix used throughout.
pub type DMat = nalgebra::DMatrix<f64>;
/// Dense double-precision column vector.
pub type DVec = nalgebra::DVector<f64>;
