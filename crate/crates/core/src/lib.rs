//! Core algorithms for single-phase context adaptation in contextual MDPs.
//!
//! Everything here is `no_std` + `alloc`: the dense/conv network substrate with
//! hand-written backward passes, the wind and power/mass environments, the
//! expert/adapter/baseline policies, the QR-SAC learner, the replay buffer and
//! the evaluation metrics (normalized ratios, Pareto selection, isolation
//! forest). IO, threads and the CLI live in the `sparc-lab` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod agent;
pub mod envs;
pub mod error;
pub mod eval;
pub mod isoforest;
pub mod nn;
pub mod policy;
pub mod qrsac;
pub mod real;
pub mod replay;
pub mod rng;

pub use error::{Error, Result};
pub use real::Real;
