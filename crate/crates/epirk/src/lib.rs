//! Stiffly accurate EPIRK exponential time integrators with adaptive-Krylov
//! evaluation of phi-function/vector products.
//!
//! The crate is organized around the pipeline used by an exponential
//! integrator run:
//!
//! - [`phi`]: scalar and small-dense-matrix `phi_k` kernels,
//! - [`krylov`]: Arnoldi projection and the adaptive (substepping) Krylov
//!   evaluation of linear combinations `sum_k phi_k(gA) b_k`,
//! - [`schemes`]: EPIRK tableau representation, the forward-difference to
//!   residual-form conversion, and the built-in stiffly accurate schemes,
//! - [`order`]: numerical verification of the stiff order conditions,
//! - [`problems`]: method-of-lines discretizations of the benchmark PDEs,
//! - [`integrator`]: vertical/horizontal/mixed execution strategies plus
//!   fixed-step and adaptive-step drivers,
//! - [`report`]: serializable run records.

pub mod error;
pub mod integrator;
pub mod krylov;
pub mod order;
pub mod schemes;
pub mod phi;
pub mod problems;
pub mod report;

pub use error::{Error, Result};
