//! Adaptive multiresolution representation of functions in one to three
//! dimensions in an Alpert multiwavelet basis, with integral operators
//! (Coulomb, bound-state Helmholtz) applied through separated Gaussian
//! expansions in non-standard form, and a fixed-point bound-state solver.
//!
//! ```
//! use mra::funcops::{project, ProjectionParams};
//! use mra::tree::Domain;
//!
//! let g = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp();
//! let f = project(&g, 3, Domain::symmetric(6.0).unwrap(), ProjectionParams::new(6, 1e-4)).unwrap();
//! assert!((f.trace() - std::f64::consts::PI.powf(1.5)).abs() < 1e-4);
//! ```

// NaN must fail the positivity and range checks, and axis loops index
// several arrays at once.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod convolution;
pub mod error;
pub mod funcops;
pub mod real;
pub mod solvers;
pub(crate) mod tensor;
pub mod tree;

pub use error::{MraError, Result};
pub use tree::{Domain, Form, MraFunction, NodeKey};
