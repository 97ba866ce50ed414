//! Coordinate-independent inverse-dynamics identification.
//!
//! Force residuals are covectors, so their natural size is the dual norm
//! `rᵀ M⁻¹ r` under the mechanism's metric `M` (mass or drag matrix). The
//! dual-metric least-squares fit is nonconvex as written but becomes a
//! semidefinite program through a Schur-complement epigraph, because `M` is
//! affine in the dynamic parameters. This crate holds the models, a small
//! dense SDP solver, the estimators, the simulators and the evaluation
//! protocol. It is `no_std` with `alloc`.

#![no_std]
// NaN must fail validity checks, so they are written `!(x > 0.0)`.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod error;
pub mod estimators;
pub mod evaluate;
pub mod linalg;
pub mod model;
pub mod protocol;
pub mod sdp;
pub mod simulate;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
