//! Experiment orchestration for the RDRLVI simulations: configuration,
//! seeded parallel replications, sweeps, persistence and plotting.

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod plot;
pub mod runner;

pub use error::{HarnessError, Result};
