//! The std side of the project: run configuration, threaded rollout workers,
//! the training loops, grid evaluation files and the multi-run studies.

pub mod config;
pub mod error;
pub mod harness;
pub mod rollout;
pub mod store;
pub mod studies;
pub mod trainer;

pub use config::RunConfig;
pub use error::{LabError, Result};
