//! Reduced-order modelling of parameterized Hamiltonian systems.
//!
//! Full-order wave and shallow-water discretizations, symplectic integrators, linear
//! (cotangent-lift / POD) reductions, and convolutional autoencoders coupled with
//! Hamiltonian neural networks, trained on a small reverse-mode autodiff engine.

pub mod autodiff;
pub mod error;
pub mod fom;
pub mod integrators;
pub mod linear;
pub mod neural;
pub mod training;
pub mod workbench;

pub use error::{Error, Result};
