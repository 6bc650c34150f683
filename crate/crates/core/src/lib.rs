//! Cross curvature flow (XCF) on 3-manifolds.
//!
//! The flow deforms a metric by `dg/dt = 2h` when the sectional curvature is
//! negative and by `dg/dt = -2h` when it is positive, where `h` is the cross
//! curvature tensor (the determinant-weighted inverse of the Einstein tensor).
//!
//! The crate is `no_std` with `alloc`. It provides
//!
//! * [`tensor`]: pointwise multilinear algebra in three dimensions,
//! * [`curvature`]: the full curvature bundle from a metric 2-jet,
//! * [`lie`]: left-invariant metrics on Lie groups (the exact homogeneous backend),
//! * [`grid`]: periodic finite-difference fields on the coordinate 3-torus,
//! * [`flow`]: RK4 integration of the flow on both backends,
//! * [`functionals`]: the monotone integral quantities and their rates,
//! * [`presets`]: curated Lie algebras and initial metrics,
//! * [`verify`]: the identity suite with residuals and convergence orders.
//!
//! Enable the `parallel` feature to evaluate grid kernels with rayon, and `serde`
//! to derive serialization for traces and reports.
#![cfg_attr(not(feature = "std"), no_std)]
// Index loops mirror the tensor notation; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod curvature;
pub mod error;
pub mod flow;
pub mod functionals;
pub mod grid;
pub mod lie;
pub mod presets;
pub mod tensor;
pub mod verify;

mod par;

pub use error::{Error, Result};
