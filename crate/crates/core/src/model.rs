//! Problem description: coefficients, jump measure, costs and the standing
//! constants of the impulse-control problem.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::expr::{Expr, Point, SymbolSet};
use crate::math;

/// Which vector argument a builtin coefficient acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorArg {
    X,
    Xi,
}

/// Scalar variable a lookup table is indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableVar {
    X(usize),
    Xi(usize),
    T,
    S,
}

/// A scalar coefficient: a builtin family or a compiled expression.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientFn {
    Constant(f64),
    /// `offset + coeffs · v + time * t` where `v` is `x` or `xi`.
    Affine { on: VectorArg, offset: f64, coeffs: Vec<f64>, time: f64 },
    /// `offset + linear · v + vᵀ Q v` with `Q` row-major.
    Quadratic { on: VectorArg, offset: f64, linear: Vec<f64>, matrix: Vec<f64> },
    /// Piecewise-linear interpolation of `values` at `knots`, flat outside.
    Table { var: TableVar, knots: Vec<f64>, values: Vec<f64> },
    Expr(Expr),
}

impl CoefficientFn {
    pub fn expr(src: &str, symbols: &SymbolSet) -> Result<Self, crate::expr::ExprError> {
        let e = Expr::parse(src, symbols)?;
        Ok(match e.as_constant() {
            Some(v) => CoefficientFn::Constant(v),
            None => CoefficientFn::Expr(e),
        })
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            CoefficientFn::Constant(v) => Some(*v),
            _ => None,
        }
    }

    #[inline]
    pub fn eval(&self, p: &Point<'_>) -> f64 {
        match self {
            CoefficientFn::Constant(v) => *v,
            CoefficientFn::Expr(e) => e.eval(p),
            CoefficientFn::Affine { on, offset, coeffs, time } => {
                let v = pick(*on, p);
                offset + math::dot(coeffs, v) + time * p.t
            }
            CoefficientFn::Quadratic { on, offset, linear, matrix } => {
                let v = pick(*on, p);
                let n = v.len();
                let mut q = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        q += v[i] * matrix[i * n + j] * v[j];
                    }
                }
                offset + math::dot(linear, v) + q
            }
            CoefficientFn::Table { var, knots, values } => {
                let s = match var {
                    TableVar::X(i) => p.x[*i],
                    TableVar::Xi(i) => p.xi[*i],
                    TableVar::T => p.t,
                    TableVar::S => p.s,
                };
                table_lookup(knots, values, s)
            }
        }
    }

    /// Checks the builtin's parameter shapes against `dim`.
    pub fn check_shape(&self, field: &str, dim: usize) -> Result<(), ModelError> {
        let mismatch = |expected, found| ModelError::Dimension { field: field.to_string(), expected, found };
        match self {
            CoefficientFn::Affine { coeffs, .. } if coeffs.len() != dim => Err(mismatch(dim, coeffs.len())),
            CoefficientFn::Quadratic { linear, .. } if linear.len() != dim => Err(mismatch(dim, linear.len())),
            CoefficientFn::Quadratic { matrix, .. } if matrix.len() != dim * dim => {
                Err(mismatch(dim * dim, matrix.len()))
            }
            CoefficientFn::Table { knots, values, .. } => {
                if knots.len() != values.len() || knots.is_empty() {
                    return Err(mismatch(knots.len(), values.len()));
                }
                if knots.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ModelError::Invalid {
                        name: field.to_string(),
                        reason: "table knots must be strictly increasing".into(),
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            CoefficientFn::Constant(_) | CoefficientFn::Quadratic { .. } => false,
            CoefficientFn::Affine { time, .. } => *time != 0.0,
            CoefficientFn::Table { var, .. } => *var == TableVar::T,
            CoefficientFn::Expr(e) => e.depends_on_time(),
        }
    }

    /// Human-readable form; expressions render to re-parseable text.
    pub fn describe(&self) -> String {
        match self {
            CoefficientFn::Constant(v) => format!("{v:?}"),
            CoefficientFn::Expr(e) => e.render(),
            other => format!("{other:?}"),
        }
    }
}

fn pick<'a>(on: VectorArg, p: &Point<'a>) -> &'a [f64] {
    match on {
        VectorArg::X => p.x,
        VectorArg::Xi => p.xi,
    }
}

fn table_lookup(knots: &[f64], values: &[f64], s: f64) -> f64 {
    if s <= knots[0] {
        return values[0];
    }
    let last = knots.len() - 1;
    if s >= knots[last] {
        return values[last];
    }
    let k = knots.partition_point(|&k| k <= s) - 1;
    let w = (s - knots[k]) / (knots[k + 1] - knots[k]);
    values[k] * (1.0 - w) + values[k + 1] * w
}

/// One finite-activity jump component: rate `λ(x,t)` and size `z(x,t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpAtom {
    pub intensity: CoefficientFn,
    pub size: Vec<CoefficientFn>,
}

/// Compensated small-jump part: `π(dz) = ρ(s) ds ⊗ Σ_j w_j δ_{d_j}`, `z = s d_j`,
/// supported on radii `s ∈ (0, cutoff)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallJumps {
    /// Radial density `ρ(s)`, an expression in `s`.
    pub density: CoefficientFn,
    pub cutoff: f64,
    /// Unit directions with weights summing to one.
    pub directions: Vec<(Vec<f64>, f64)>,
}

impl SmallJumps {
    /// Symmetric `±e_i` directions with equal weights.
    pub fn axis_directions(dim: usize) -> Vec<(Vec<f64>, f64)> {
        let w = 1.0 / (2 * dim) as f64;
        let mut out = Vec::with_capacity(2 * dim);
        for i in 0..dim {
            for sign in [1.0, -1.0] {
                let mut d = vec![0.0; dim];
                d[i] = sign;
                out.push((d, w));
            }
        }
        out
    }

    /// Quadrature approximation of the radial measure: `(s_q, ρ(s_q) w_q)`.
    pub fn radial_masses(&self, nodes: usize) -> Vec<(f64, f64)> {
        let (s, w) = math::graded_radial_rule(self.cutoff, nodes);
        s.iter()
            .zip(&w)
            .map(|(&s, &w)| (s, w * self.density.eval(&Point::radial(s))))
            .collect()
    }

    /// `∫_0^cutoff s^p ρ(s) ds` by the graded rule.
    pub fn radial_moment(&self, p: f64, nodes: usize) -> f64 {
        self.radial_masses(nodes).iter().map(|(s, m)| math::pow(*s, p) * m).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JumpSpec {
    pub atoms: Vec<JumpAtom>,
    pub small: Option<SmallJumps>,
    /// Declared bound on `∫_{|z|<1} |z|^δ π(dz)`.
    pub order_delta_bound: f64,
}

impl JumpSpec {
    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty() && self.small.is_none()
    }
}

/// Standing constants of the problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub gamma: f64,
    pub delta: f64,
    pub mu: f64,
    pub nu: f64,
    /// Subadditivity slack `K`.
    #[serde(rename = "K")]
    pub k: f64,
    /// Lower bound `L`.
    #[serde(rename = "L_bound")]
    pub l_bound: f64,
    /// Optional growth constant `c` in `B(ξ,t) ≥ L + c|ξ|^μ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub growth_c: Option<f64>,
    /// Optional cap on the sampled Lipschitz/Hölder/growth constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_cap: Option<f64>,
}

impl Default for Constants {
    fn default() -> Self {
        Constants { gamma: 0.25, delta: 0.5, mu: 1.0, nu: 0.0, k: 0.0, l_bound: 0.0, growth_c: None, c_cap: None }
    }
}

/// Full description of one impulse-control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub dim: usize,
    pub horizon: f64,
    pub discount: f64,
    /// `b(x,t)`, length `dim`.
    pub drift: Vec<CoefficientFn>,
    /// `σ(x,t)`, `dim` rows of `m` columns.
    pub diffusion: Vec<Vec<CoefficientFn>>,
    pub jumps: JumpSpec,
    /// `f(t,x)`.
    pub running_cost: CoefficientFn,
    /// `g(x)`.
    pub terminal_cost: CoefficientFn,
    /// `B(ξ,t)`.
    pub intervention_cost: CoefficientFn,
    pub constants: Constants,
}

/// Coefficients evaluated at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffBundle {
    pub b: Vec<f64>,
    /// `A = ½σσᵀ`, row-major `dim × dim`.
    pub a: Vec<f64>,
    pub f: f64,
    pub jump_atoms: Vec<(f64, Vec<f64>)>,
}

impl ProblemSpec {
    /// Structural invariants plus the declared dominance relations.
    pub fn check(&self) -> Result<(), ModelError> {
        self.check_structure()?;
        let c = &self.constants;
        if c.gamma + c.delta >= c.mu {
            return Err(ModelError::Dominance { gamma: c.gamma, delta: c.delta, mu: c.mu });
        }
        if c.nu > c.mu {
            return Err(ModelError::GrowthDominance { nu: c.nu, mu: c.mu });
        }
        Ok(())
    }

    /// Everything in [`ProblemSpec::check`] except dominance.
    pub fn check_structure(&self) -> Result<(), ModelError> {
        let invalid = |name: &str, reason: &str| ModelError::Invalid { name: name.into(), reason: reason.into() };
        if self.dim == 0 {
            return Err(invalid("dim", "must be at least 1"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive"));
        }
        if !(self.discount >= 0.0 && self.discount.is_finite()) {
            return Err(invalid("discount", "must be nonnegative"));
        }
        let dim = self.dim;
        let dims = |field: &str, found: usize| {
            if found != dim {
                Err(ModelError::Dimension { field: field.into(), expected: dim, found })
            } else {
                Ok(())
            }
        };
        dims("drift", self.drift.len())?;
        dims("diffusion", self.diffusion.len())?;
        let m = self.diffusion[0].len();
        if m == 0 {
            return Err(invalid("diffusion", "needs at least one column"));
        }
        for row in &self.diffusion {
            if row.len() != m {
                return Err(ModelError::Dimension { field: "diffusion".into(), expected: m, found: row.len() });
            }
            for c in row {
                c.check_shape("diffusion", dim)?;
            }
        }
        for c in &self.drift {
            c.check_shape("drift", dim)?;
        }
        for (k, atom) in self.jumps.atoms.iter().enumerate() {
            dims(&format!("jumps.atoms[{k}].size"), atom.size.len())?;
        }
        if let Some(small) = &self.jumps.small {
            if !(small.cutoff > 0.0 && small.cutoff <= 1.0) {
                return Err(invalid("jumps.small.cutoff", "must lie in (0, 1]"));
            }
            if small.directions.is_empty() {
                return Err(invalid("jumps.small.directions", "must not be empty"));
            }
            let mut total = 0.0;
            for (d, w) in &small.directions {
                dims("jumps.small.directions", d.len())?;
                if math::abs(math::norm(d) - 1.0) > 1e-9 || *w < 0.0 {
                    return Err(invalid("jumps.small.directions", "directions must be unit vectors with w ≥ 0"));
                }
                total += w;
            }
            if math::abs(total - 1.0) > 1e-9 {
                return Err(invalid("jumps.small.directions", "weights must sum to one"));
            }
        }
        self.running_cost.check_shape("running_cost", dim)?;
        self.terminal_cost.check_shape("terminal_cost", dim)?;
        self.intervention_cost.check_shape("intervention_cost", dim)?;
        let c = &self.constants;
        if !(c.gamma >= 0.0) {
            return Err(invalid("gamma", "must be ≥ 0"));
        }
        if !(c.delta > 0.0 && c.delta <= 1.0) {
            return Err(invalid("delta", "must lie in (0, 1]"));
        }
        if !(c.mu > 0.0 && c.mu <= 1.0) {
            return Err(invalid("mu", "must lie in (0, 1]"));
        }
        if !(c.nu >= 0.0 && c.nu < 1.0) {
            return Err(invalid("nu", "must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn noise_columns(&self) -> usize {
        self.diffusion[0].len()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let p = Point::state(x, t);
        for (o, c) in out.iter_mut().zip(&self.drift) {
            *o = c.eval(&p);
        }
    }

    /// `σ(x,t)` into row-major `dim × m`.
    #[inline]
    pub fn sigma_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let p = Point::state(x, t);
        let m = self.noise_columns();
        for (i, row) in self.diffusion.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                out[i * m + j] = c.eval(&p);
            }
        }
    }

    /// `A = ½σσᵀ` into row-major `dim × dim`.
    pub fn a_into(&self, x: &[f64], t: f64, sigma_buf: &mut [f64], out: &mut [f64]) {
        self.sigma_into(x, t, sigma_buf);
        let n = self.dim;
        let m = self.noise_columns();
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..m {
                    s += sigma_buf[i * m + k] * sigma_buf[j * m + k];
                }
                out[i * n + j] = 0.5 * s;
            }
        }
    }

    #[inline]
    pub fn running(&self, x: &[f64], t: f64) -> f64 {
        self.running_cost.eval(&Point::state(x, t))
    }

    #[inline]
    pub fn terminal(&self, x: &[f64]) -> f64 {
        self.terminal_cost.eval(&Point::state(x, self.horizon))
    }

    #[inline]
    pub fn impulse_cost(&self, xi: &[f64], t: f64) -> f64 {
        self.intervention_cost.eval(&Point::impulse(xi, t))
    }

    /// Atom `k` at `(x,t)`: rate and size written into `size`.
    #[inline]
    pub fn atom_into(&self, k: usize, x: &[f64], t: f64, size: &mut [f64]) -> f64 {
        let atom = &self.jumps.atoms[k];
        let p = Point::state(x, t);
        for (o, c) in size.iter_mut().zip(&atom.size) {
            *o = c.eval(&p);
        }
        atom.intensity.eval(&p)
    }

    /// Evaluates all local coefficients at `(x,t)`.
    pub fn eval_coeffs(&self, x: &[f64], t: f64) -> Result<CoeffBundle, ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::Dimension { field: "x".into(), expected: self.dim, found: x.len() });
        }
        let n = self.dim;
        let mut b = vec![0.0; n];
        self.drift_into(x, t, &mut b);
        let mut sig = vec![0.0; n * self.noise_columns()];
        let mut a = vec![0.0; n * n];
        self.a_into(x, t, &mut sig, &mut a);
        let f = self.running(x, t);
        let mut jump_atoms = Vec::with_capacity(self.jumps.atoms.len());
        for k in 0..self.jumps.atoms.len() {
            let mut z = vec![0.0; n];
            let lam = self.atom_into(k, x, t, &mut z);
            jump_atoms.push((lam, z));
        }
        let nonfinite = |what: &str| ModelError::NonFinite { what: what.into(), x: x.to_vec(), t };
        if b.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("drift"));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(nonfinite("diffusion"));
        }
        if !f.is_finite() {
            return Err(nonfinite("running_cost"));
        }
        if jump_atoms.iter().any(|(l, z)| !l.is_finite() || z.iter().any(|v| !v.is_finite())) {
            return Err(nonfinite("jump atom"));
        }
        Ok(CoeffBundle { b, a, f, jump_atoms })
    }

    /// Whether `b`, `σ` or the atoms change with time.
    pub fn dynamics_depend_on_time(&self) -> bool {
        self.drift.iter().chain(self.diffusion.iter().flatten()).any(|c| c.depends_on_time())
            || self.jumps.atoms.iter().any(|a| a.intensity.depends_on_time() || a.size.iter().any(|c| c.depends_on_time()))
    }

    /// Whether every coefficient that enters the local operator is constant.
    pub fn has_constant_local_coeffs(&self) -> bool {
        self.drift.iter().all(|c| c.as_constant().is_some())
            && self.diffusion.iter().flatten().all(|c| c.as_constant().is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::simple_spec;

    #[test]
    fn diffusion_matrix_is_half_sigma_sigma_t() {
        let mut spec = simple_spec(2);
        spec.diffusion[1][1] = CoefficientFn::Constant(2.0);
        let c = spec.eval_coeffs(&[0.3, -0.1], 0.2).unwrap();
        assert_eq!(c.a, vec![0.5, 0.0, 0.0, 2.0]);

        let mut one = simple_spec(1);
        one.diffusion[0][0] = CoefficientFn::expr("sqrt(2)", &SymbolSet::state(1)).unwrap();
        let c = one.eval_coeffs(&[0.0], 0.0).unwrap();
        assert!((c.a[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn atoms_evaluate() {
        let mut spec = simple_spec(1);
        spec.jumps.atoms.push(JumpAtom {
            intensity: CoefficientFn::Constant(2.0),
            size: vec![CoefficientFn::Constant(1.0)],
        });
        let c = spec.eval_coeffs(&[0.7], 0.3).unwrap();
        assert_eq!(c.jump_atoms, vec![(2.0, vec![1.0])]);
    }

    #[test]
    fn dominance_is_enforced() {
        let mut spec = simple_spec(1);
        spec.constants.gamma = 0.5;
        spec.constants.delta = 0.5;
        spec.constants.mu = 0.9;
        let e = spec.check().unwrap_err();
        assert!(e.to_string().starts_with("dominance violated: γ+δ ≥ μ"));
        assert!(spec.check_structure().is_ok());
    }

    #[test]
    fn non_finite_evaluation_is_reported() {
        let mut spec = simple_spec(1);
        spec.running_cost = CoefficientFn::expr("log(x[0])", &SymbolSet::state(1)).unwrap();
        assert!(matches!(spec.eval_coeffs(&[-1.0], 0.0), Err(ModelError::NonFinite { .. })));
    }

    #[test]
    fn builtins() {
        let q = CoefficientFn::Quadratic {
            on: VectorArg::Xi,
            offset: 1.0,
            linear: vec![0.0],
            matrix: vec![1.0],
        };
        assert_eq!(q.eval(&Point::impulse(&[3.0], 0.0)), 10.0);
        let t = CoefficientFn::Table { var: TableVar::T, knots: vec![0.0, 1.0], values: vec![2.0, 4.0] };
        assert_eq!(t.eval(&Point::state(&[], 0.25)), 2.5);
        assert_eq!(t.eval(&Point::state(&[], 7.0)), 4.0);
        let a = CoefficientFn::Affine { on: VectorArg::X, offset: 1.0, coeffs: vec![2.0, -1.0], time: 0.5 };
        assert_eq!(a.eval(&Point::state(&[1.0, 1.0], 2.0)), 3.0);
    }
}
