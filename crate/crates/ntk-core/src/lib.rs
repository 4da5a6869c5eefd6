//! Exact kernels for infinitely wide ReLU networks.
//!
//! The crate computes, in closed form or by deterministic numerics:
//!
//! - arc-cosine kernel functions and the two-layer ReLU tangent kernel
//!   ([`arccos`]),
//! - tangent and fixed-feature kernels of deep fully-connected ReLU
//!   networks ([`fc`]),
//! - tangent and fixed-feature kernels of convolutional ReLU networks
//!   with patch extraction and (Gaussian or Dirac) pooling, evaluated by
//!   an exact dynamic program over position-pair kernel planes ([`conv`]),
//! - spherical-harmonic spectra of dot-product kernels on the unit
//!   sphere via Funk-Hecke quadrature ([`spectral`]),
//! - smoothness and stability diagnostics of the induced RKHS mappings
//!   ([`smoothness`], [`deform`]),
//! - Monte Carlo estimators from finite-width random networks that
//!   cross-check every analytic kernel ([`mc`]).
//!
//! The crate is `no_std` (with `alloc`); IO, file formats and the command
//! line front end live in the companion crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod activation;
pub mod arccos;
pub mod conv;
pub mod deform;
pub mod error;
pub mod fc;
pub mod mc;
pub mod quadrature;
pub mod smoothness;
pub mod spectral;

pub use conv::{ArchitectureSpec, ImageSignal};
pub use error::{Error, Result};
