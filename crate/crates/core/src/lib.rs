//! Numerical laboratory for low-rank adapter training dynamics.
//!
//! The crate builds synthetic linear and ReLU fine-tuning problems where a
//! frozen weight `W` is adapted by a trainable low-rank product `A * B`
//! toward an unknown low-rank shift, runs gradient-descent-family optimizers
//! over the factors, and measures the subspace-alignment and contraction
//! quantities that the underlying convergence theory predicts.
//!
//! All numerics are generic over the scalar type through [`scalar::Real`];
//! the concrete aliases below fix `f64`, which every shipped experiment and
//! tolerance assumes.

pub mod adapters;
pub mod diagnostics;
pub mod error;
pub mod grads;
mod io_util;
pub mod matops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod theory;

pub use error::{Error, Result};

/// Dense `f64` matrix, the working type of the whole experiment harness.
pub type Mat = matops::DenseMatrix<f64>;
/// Compact SVD factors over `f64`.
pub type Svd = matops::SvdFactors<f64>;
/// Synthetic fine-tuning problem over `f64`.
pub type Problem = synth::Problem<f64>;
/// Trainable adapter pair over `f64`.
pub type Adapter = adapters::AdapterPair<f64>;
/// Trajectory of per-step diagnostics over `f64`.
pub type Trajectory = diagnostics::Trajectory<f64>;

/// Single-precision matrix alias; the kernels are scalar-generic, but the
/// shipped experiments and tolerances assume the `f64` lane.
pub type Mat32 = matops::DenseMatrix<f32>;
