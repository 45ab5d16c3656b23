//! Estimating the distribution of unknown response probabilities from capped
//! response-effort counts, and the inverse-probability estimators built on it.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, configuration,
//! threading and the command-line driver live in the `deconv-ht` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod deconvolve;
mod error;
pub mod estimators;
pub mod kernels;
pub mod mixture;
pub mod qp;
pub mod simulate;

pub use error::{Error, Result};
