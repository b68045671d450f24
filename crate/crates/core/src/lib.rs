//! Parametrised, uncertainty-aware reduced-order modelling of PDE trajectories.
//!
//! Snapshots are compressed by a parameter-conditioned variational autoencoder
//! ([`vae`]), latent dynamics are forecast by a transformer with cross-attention
//! to the external parameters ([`transformer`]), and both are trained jointly
//! ([`training`]). Re-encoding a forecast and sampling the latent Gaussian gives
//! an ensemble spread ([`uq`]) which drives sampling of the parameter space
//! ([`adaptive`]).

pub mod adaptive;
pub mod autodiff;
pub mod config;
pub mod datagen;
mod error;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod training;
pub mod transformer;
pub mod uq;
pub mod vae;

pub use error::{Error, Result};
