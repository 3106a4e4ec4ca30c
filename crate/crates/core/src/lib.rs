//! Finite-horizon impulse control of jump diffusions.
//!
//! Penalized finite-difference solver for the HJB quasi-variational
//! inequality, a Monte Carlo simulator of the controlled SDE, and numerical
//! checks tying the two together. `no_std` with `alloc`; file formats,
//! threads and the command line live in the companion `impulse` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod assumptions;
pub mod error;
pub mod exec;
pub mod expr;
pub mod grid;
pub mod math;
pub mod model;
pub mod operators;
pub mod penalty;
pub mod rng;
pub mod sim;
pub mod solver;
pub mod sparse;
pub mod validation;

#[cfg(test)]
pub(crate) mod testutil;

pub use assumptions::{validate_assumptions, AssumptionEntry, AssumptionReport};
pub use error::{CheckError, ModelError, OperatorError, SimError, SolverError};
pub use exec::{Executor, Sequential};
pub use grid::{Axis, BoxRegion, Field, Grid, ImpulseMap};
pub use model::{CoefficientFn, Constants, JumpAtom, JumpSpec, ProblemSpec, SmallJumps};
pub use penalty::PenaltyFamily;
pub use solver::{Solution, SolverConfig};
