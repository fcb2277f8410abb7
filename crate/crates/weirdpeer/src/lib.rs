//! Std companion of `weirdpeer-core`: the fault and coverage runtimes
//! linked into peers, the orchestrator that supervises an exchange, the
//! campaign drivers, the TinyChat testbed and the command line.

pub mod baseline;
pub mod cli;
pub mod config;
pub mod cov;
pub mod env;
pub mod executor;
pub mod fixture;
pub mod orchestrator;
pub mod output;
pub mod peer;
pub mod runner;
pub mod runtime;
pub mod testbed;

pub use weirdpeer_core as core;
