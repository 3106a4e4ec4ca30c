//! File formats, parallel execution and the command-line front end for
//! `impulse-core`.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod parallel;

pub use parallel::RayonExecutor;
