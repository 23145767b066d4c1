//! Discrete-time simulator of a two-tier aerial computing network.
//!
//! Ground users offload computation tasks over an uplink NOMA channel to
//! UAV base stations, which process part of each task and forward the rest
//! to a high altitude platform (HAP). The crate tracks per-user Age of
//! Information (AoI), exposes the network as a multi-agent MDP, and ships
//! the actor-critic learners (MADDPG and peer-to-peer federated averaging)
//! plus the reference baselines used to evaluate them.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! experiment orchestration live in the `ntn-cli` companion crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agents;
pub mod aoi;
pub mod baselines;
pub mod channel;
pub mod config;
pub mod env;
mod error;
pub mod nn;
pub mod rng;
pub mod scheduler;
pub mod world;

pub use config::{ScenarioConfig, TrainConfig};
pub use env::{Env, JointAction, SchedulerKind, StepOutcome};
pub use error::{Error, Result};
