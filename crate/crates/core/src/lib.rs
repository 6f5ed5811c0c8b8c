//! Deterministic federated learning simulator for non-cooperative backdoor
//! attacks: several independent adversaries, each with its own trigger and
//! target class, poison a FedAvg global model that may be defended by norm
//! clipping or Gaussian noise.

pub mod adversary;
pub mod backdoor;
pub mod config;
pub mod data;
pub mod defenses;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod seeds;
pub mod simulation;

pub use error::{Error, Result};
