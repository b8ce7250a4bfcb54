//! Two-stage Bayesian variable selection for Cox regression with spatially
//! varying coefficients.
//!
//! Stage one fits an independent Cox model at every site ([`survival`]).
//! Stage two treats the per-site estimates as Gaussian observations of the
//! site coefficients and samples a hierarchy with a spatial horseshoe prior
//! and a spike-and-slab prior on each coefficient's spatial decay
//! ([`mcmc`]). [`selection`] turns the posterior into decisions, and
//! [`sim`] reproduces the simulation studies end to end.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod mcmc;
pub mod selection;
pub mod sim;
pub mod survival;

pub use error::{Error, Result};
