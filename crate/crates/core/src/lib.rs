//! Robust, cost-optimal gain allocation for Foschini–Miljanic power control
//! on two-subnetwork topologies exposed to adding-edge attacks.
//!
//! The pieces build on each other bottom-up:
//! [`topology`] and [`spectral`] provide graph and eigen primitives, [`fm`]
//! the power-control dynamics, [`gp`] a geometric-programming solver,
//! [`robust`] the stability-certificate constraints, [`game`] the
//! round-robin policymaker game and [`attacker`] the greedy worst-case
//! edge-adding attack.

pub mod attacker;
pub mod error;
pub mod fm;
pub mod game;
pub mod gp;
pub mod robust;
pub mod spectral;
pub mod topology;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
