#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Spatial point process toolkit.
//!
//! Inhomogeneous K and cross-K diagnostics with Monte-Carlo envelopes,
//! univariate and bivariate log-Gaussian Cox process simulation with a signed
//! linear model of coregionalization, and parameter estimation by minimum
//! contrast and MCMC on a discretised latent field.

pub mod error;
pub mod geom;
pub mod raster;
pub mod cli;
pub mod covar;
pub mod fit;
pub mod grf;
pub mod kernel;
pub mod ripley;
pub mod sim;
pub mod svg;

pub use error::{Error, Result};
