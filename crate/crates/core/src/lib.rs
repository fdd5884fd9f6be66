//! Multi-carrier NOMA downlink resource allocation: the system model,
//! exact and heuristic baselines, and a two-module DDPG allocator.

pub mod arch;
pub mod baselines;
pub mod config;
pub mod ddpg;
pub mod error;
pub mod experiment;
pub mod noma;
pub mod pa;
pub mod reward;
pub mod sa;
pub mod scenario;
pub mod trainer;
pub mod verify;

pub use error::{CoreError, Result};
