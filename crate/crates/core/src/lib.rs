//! Simulator for training a GAN across wireless devices: devices keep their
//! data and train local discriminators, the server trains the generator, and
//! a simulated cell charges every exchange against a shared uplink band.

pub mod cli;
pub mod config;
pub mod datasets;
pub mod error;
pub mod gan;
pub mod metrics;
pub mod net;
pub mod nn;
pub mod orchestrator;
pub mod rng;
pub mod scheduler;

pub use error::{Error, Result};
