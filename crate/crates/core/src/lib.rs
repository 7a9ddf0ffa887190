//! Group-negotiation orchestration for heterogeneous robot teams, with a
//! planar kinematic assembly simulator and an evaluation harness.

pub mod backends;
pub mod command;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod memory;
pub mod orchestrator;
pub mod rng;
pub mod skills;
pub mod types;
pub mod world;

pub use error::Error;
