//! Multi-agent DQN simulator for sharing edge CPU between network slices.
//!
//! Each slice runs a two-stage queue (edge computation, then RAN
//! transmission). One agent per slice picks a CPU allocation and a discrete
//! message every step; a central server detects allocation conflicts,
//! steps the queues and hands out rewards. See the `examples/` directory for
//! runnable entry points.

pub mod agent;
pub mod bus;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod queueing;
pub mod traffic;

pub use config::Scenario;
pub use error::{Error, Result};
pub use orchestrator::Variant;
