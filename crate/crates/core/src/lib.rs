//! Sample-and-hold simulation of predictive agents (MPC, roll-out Q-learning,
//! stacked Q-learning) parking an extended nonholonomic double integrator,
//! together with the sweep harness used to benchmark them.

pub mod agents;
pub mod critic;
pub mod dynamics;
pub mod experiments;
pub mod error;
pub mod optimize;
pub mod oracle;
pub mod selfcheck;
pub mod simulator;

pub use error::{Error, Result};
