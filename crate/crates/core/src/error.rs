use alloc::string::String;
use alloc::vec::Vec;

use crate::expr::ExprError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("expression for {field}: {source}")]
    Expression {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("dimension mismatch for {field}: expected {expected}, found {found}")]
    Dimension { field: String, expected: usize, found: usize },
    #[error("dominance violated: γ+δ ≥ μ ({gamma} + {delta} ≥ {mu})")]
    Dominance { gamma: f64, delta: f64, mu: f64 },
    #[error("dominance violated: ν > μ ({nu} > {mu})")]
    GrowthDominance { nu: f64, mu: f64 },
    #[error("invalid parameter {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("non-finite value of {what} at x={x:?}, t={t}")]
    NonFinite { what: String, x: Vec<f64>, t: f64 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OperatorError {
    #[error("grid too coarse: axis {axis} has {count} nodes (need at least 3)")]
    GridTooCoarse { axis: usize, count: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("jump destination {point:?} lies beyond the extension margin")]
    BeyondExtension { point: Vec<f64> },
    #[error("no feasible impulse at node {node}")]
    EmptyShiftSet { node: usize },
    #[error("field has {found} values, grid has {expected} nodes")]
    Shape { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("linear solver did not converge (residual {residual:e} after {iterations} iterations)")]
    LinearSolve { residual: f64, iterations: usize },
    #[error("Newton iteration diverged at slice {slice} (residual {residual:e}, line search exhausted)")]
    NewtonDivergence { slice: usize, residual: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CheckError {
    #[error("invalid check configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}
