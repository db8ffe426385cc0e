//! Numerical toolkit for the quadratic Hessian equation `sigma_2(D^2 u) = 1`:
//! pointwise operator algebra, Jacobi-inequality certification, Legendre–Lewy
//! transforms, exact solutions, a finite-difference solver, very weak residuals
//! and the two-dimensional minimal-surface chain.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod jacobi;
pub mod legendre;
pub mod linear;
pub mod nitsche;
pub mod optim;
pub mod report;
pub mod solver;
pub mod spectrum;
pub mod tensor;
pub mod weak;
pub mod zoo;

#[cfg(test)]
mod pipeline_tests;

pub use error::{Error, Result};
pub use grid::{GridField, GridSpec};
pub use spectrum::{Branch, Spectrum, SymMatrix};
pub use tensor::{Tensor3, Tensor4};
pub use zoo::ClosedFormSolution;
