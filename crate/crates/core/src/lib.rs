//! Adaptive early episode stopping for off-policy actor-critic learning.
//!
//! The crate is split into the dense-network core ([`nn`]), the TD3 agent
//! ([`td3`]), the stop controller and exploration-noise schedule
//! ([`controller`]), a point-mass maze ([`maze`]) and replay storage with its
//! diagnostics ([`replay`]).

pub mod controller;
pub mod error;
pub mod maze;
pub mod nn;
pub mod replay;
pub mod td3;

pub use error::{Error, Result};
