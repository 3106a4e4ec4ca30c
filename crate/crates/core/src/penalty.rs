//! The penalty family `β_ε`.

use serde::{Deserialize, Serialize};

use crate::math;

pub const DEFAULT_FLOOR: f64 = 1e-8;

/// `β_ε(x) = x/ε` for `x ≥ 0` and `floor·(exp(x/(ε·floor)) − 1)` below zero.
///
/// Both branches have slope `1/ε` at the origin, the map is increasing and
/// convex, and `β_ε ≥ −floor ≥ −1`. `floor = 1` gives `e^{x/ε} − 1` on the
/// negative axis; the default floor is [`DEFAULT_FLOOR`] so that the penalty
/// is negligible where the obstacle is inactive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyFamily {
    pub epsilon: f64,
    pub floor: f64,
}

impl PenaltyFamily {
    pub fn new(epsilon: f64) -> Self {
        PenaltyFamily { epsilon, floor: DEFAULT_FLOOR }
    }

    pub fn with_floor(epsilon: f64, floor: f64) -> Self {
        PenaltyFamily { epsilon, floor: floor.clamp(f64::MIN_POSITIVE, 1.0) }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x >= 0.0 {
            x / self.epsilon
        } else {
            (self.floor * (math::exp(x / (self.epsilon * self.floor)) - 1.0)).max(-1.0)
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / self.epsilon
        } else {
            math::exp(x / (self.epsilon * self.floor)) / self.epsilon
        }
    }
}

pub fn beta_eval(family: &PenaltyFamily, x: f64) -> f64 {
    family.eval(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_values() {
        let b = PenaltyFamily::with_floor(0.1, 1.0);
        assert_eq!(beta_eval(&b, 0.0), 0.0);
        assert!((beta_eval(&b, 0.5) - 5.0).abs() < 1e-12);
        assert!((beta_eval(&b, -1e6) + 1.0).abs() < 1e-12);
        assert!((b.eval(-0.1) - (libm::exp(-1.0) - 1.0)).abs() < 1e-15);
        assert_eq!(b.derivative(0.0), 10.0);
        assert!((b.derivative(-1e-12) - 10.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn family_properties(eps in 1e-3f64..1.0, floor in 1e-6f64..1.0, x in -5.0f64..5.0, dx in 1e-6f64..1.0) {
            let b = PenaltyFamily::with_floor(eps, floor);
            prop_assert!(b.eval(x) >= -1.0);
            prop_assert!(b.eval(x + dx) >= b.eval(x));
            prop_assert!(b.derivative(x) > 0.0 || b.eval(x) == -b.floor);
            prop_assert!(b.derivative(x + dx) >= b.derivative(x));
            prop_assert!(b.derivative(x) <= 1.0 / eps + 1e-12);
            // convexity through the midpoint
            let mid = b.eval(x + dx / 2.0);
            prop_assert!(mid <= 0.5 * (b.eval(x) + b.eval(x + dx)) + 1e-9 * (1.0 + mid.abs()));
        }
    }
}
