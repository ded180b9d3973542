//! Event-triggered nonlinear model predictive control with intermittent
//! state sampling.
//!
//! The pipeline: a [`model::SystemModel`] and weights give a terminal
//! region ([`terminal`]); the shrinking-horizon problem ([`ocp`]) is solved
//! at update instants chosen by the triggering rules ([`trigger`]); and
//! [`sim`] closes the loop against a bounded disturbance.

pub mod config;
pub mod disturbance;
pub mod error;
pub mod export;
pub mod linalg;
pub mod model;
pub mod ocp;
pub mod ode;
pub mod sim;
pub mod terminal;
pub mod trigger;
pub mod validation;

pub use error::{Error, Result};
