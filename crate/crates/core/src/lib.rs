//! Diffusion-bridge sampling with an ODE sampler that starts from a
//! posterior draw, plus the baselines and numerical checks around it.
//!
//! Data predictors are analytic oracles ([`oracle`]) so that every drift,
//! score and distributional claim can be checked against closed forms.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod oracle;
pub mod samplers;
pub mod schedule;
pub mod validation;

pub use error::{BridgeError, Result};
pub use oracle::State;
