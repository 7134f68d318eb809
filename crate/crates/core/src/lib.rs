//! Antisymmetric recurrent networks as forward-Euler discretizations of
//! stable ODEs.
//!
//! The crate covers the weight parametrization, the recurrent cells and
//! their Jacobians, backpropagation through time, training, dataset
//! readers, and spectral analysis of per-step and end-to-end Jacobians.

pub mod analysis;
pub mod cells;
pub mod cli;
pub mod data;
pub mod error;
pub mod linalg;
pub mod network;
pub mod ode;
pub mod optim;
pub mod spectral;

pub use error::{Error, Result};
pub use linalg::{ComplexScalar, Matrix, SeededRng};
