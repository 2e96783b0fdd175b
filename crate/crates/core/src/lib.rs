//! Optimization on Tucker tensor varieties.
//!
//! The crate provides dense multilinear kernels ([`tenalg`]), matrix
//! factorizations ([`matkernels`]), Tucker tensors with HOSVD truncation
//! ([`tucker`]), the tangent-cone geometry of the bounded-rank Tucker
//! variety ([`geometry`]), completion and least-squares objectives
//! ([`objectives`]) and three solvers ([`solvers`]): GRAP, a
//! retraction-free variant of it, and the rank-adaptive TRAM.
//!
//! The `parallel` feature (on by default) runs the sample-set kernels on
//! rayon; results are bit-identical to the sequential path.

pub mod error;
pub mod exec;
pub mod geometry;
pub mod matkernels;
pub mod objectives;
pub mod solvers;
pub mod tenalg;
pub mod tucker;

pub use error::{Error, Result};
pub use geometry::{Ambient, ConeBasisChoice, TangentConeElement, TangentVector};
pub use objectives::{CompletionObjective, DenseLeastSquares, Objective, SampleSet};
pub use tenalg::{DenseTensor, Matrix, Shape};
pub use tucker::{TuckerRank, TuckerTensor};
