use alloc::vec;

use crate::model::{CoefficientFn, Constants, JumpSpec, ProblemSpec};

/// Driftless unit-σ problem with zero costs and unit intervention cost.
pub(crate) fn simple_spec(dim: usize) -> ProblemSpec {
    ProblemSpec {
        dim,
        horizon: 1.0,
        discount: 0.0,
        drift: vec![CoefficientFn::Constant(0.0); dim],
        diffusion: (0..dim)
            .map(|i| (0..dim).map(|j| CoefficientFn::Constant(if i == j { 1.0 } else { 0.0 })).collect())
            .collect(),
        jumps: JumpSpec::default(),
        running_cost: CoefficientFn::Constant(0.0),
        terminal_cost: CoefficientFn::Constant(0.0),
        intervention_cost: CoefficientFn::Constant(1.0),
        constants: Constants { l_bound: 1.0, k: 0.5, ..Constants::default() },
    }
}
