//! Scalar abstraction for the numeric kernels.
//!
//! Everything downstream works over [`Real`], a thin extension of
//! `num_traits::Float`. `f64` is the only scalar the shipped experiments
//! use (the theorem tolerances are in the 1e-8..1e-10 class), but the
//! kernels themselves do not care.

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point scalar usable by the dense kernels.
pub trait Real: Float + NumAssign + FromPrimitive + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    /// Lossy conversion from `f64`, used for constants and sampled values.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts into any Real")
    }

    /// Lossy conversion to `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}
