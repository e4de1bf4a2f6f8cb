//! Structured-grid solvers for the isothermal two-fluid Euler-Lorentz model
//! in the strongly magnetized, low Mach number regime.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ap_diffusion;
pub mod ap_stepper;
pub mod classical_stepper;
pub mod error;
pub mod grid;
pub mod harness;
pub mod hyperbolic_flux;
pub mod linalg;
pub mod stencil_ops;

pub use error::{Error, Result};
