//! Penalized solver for the time-inverted QVI.
//!
//! `u(x,τ) = V(x,T−τ)` starts from `g` and is marched forward in `τ` with
//! implicit `L` and penalty, explicit `I`. The obstacle `Ψ = M̂u` is frozen
//! inside each outer iteration and refreshed between them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{OperatorError, SolverError};
use crate::exec::{Executor, Sequential};
use crate::grid::{Axis, BoxRegion, Extension, Field, Grid, ImpulseMap};
use crate::math;
use crate::model::ProblemSpec;
use crate::operators::{self, MSearch, ShiftSet, SmallJumpRule};
use crate::penalty::PenaltyFamily;
use crate::sparse::{bicgstab, Csr};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub axes: Vec<Axis>,
    /// Time slices including `τ = 0`.
    pub t_count: usize,
    pub epsilon_schedule: Vec<f64>,
    /// Small-jump split radius.
    pub theta: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub obstacle_tol: f64,
    pub obstacle_max_iter: usize,
    pub region_tol: f64,
    pub quadrature_nodes: usize,
    /// Lower level of `β_ε`; defaults to `penalty::DEFAULT_FLOOR`.
    pub penalty_floor: Option<f64>,
    /// Impulse search box; defaults to every shift that stays on the grid.
    pub search: Option<BoxRegion>,
    pub refine_m: bool,
    pub linear_tol: f64,
    pub linear_max_iter: usize,
    /// Sample count and seed of the assumption checks run before a solve.
    pub assumption_samples: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            axes: Vec::new(),
            t_count: 101,
            epsilon_schedule: vec![0.1, 0.05, 0.025, 0.0125, 1e-3, 1e-4, 1e-5, 1e-6],
            theta: 0.1,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            obstacle_tol: 1e-6,
            obstacle_max_iter: 50,
            region_tol: 1e-6,
            quadrature_nodes: operators::DEFAULT_QUADRATURE_NODES,
            penalty_floor: None,
            search: None,
            refine_m: false,
            linear_tol: 1e-10,
            linear_max_iter: 1000,
            assumption_samples: 2000,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<Grid, SolverError> {
        let bad = |m: &str| Err(SolverError::Config(m.into()));
        if self.axes.len() != spec.dim {
            return Err(SolverError::Config(format!("{} grid axes for a {}-dimensional problem", self.axes.len(), spec.dim)));
        }
        if self.epsilon_schedule.is_empty() {
            return bad("epsilon_schedule must not be empty");
        }
        if self.epsilon_schedule.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return bad("epsilon_schedule entries must be positive");
        }
        if self.epsilon_schedule.windows(2).any(|w| w[1] >= w[0]) {
            return bad("epsilon_schedule must be strictly decreasing");
        }
        for (name, v) in [
            ("newton_tol", self.newton_tol),
            ("obstacle_tol", self.obstacle_tol),
            ("linear_tol", self.linear_tol),
        ] {
            if !(v > 0.0) {
                return Err(SolverError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.region_tol >= 0.0) || !(self.theta >= 0.0) {
            return bad("region_tol and theta must be nonnegative");
        }
        if self.newton_max_iter == 0 || self.obstacle_max_iter == 0 || self.quadrature_nodes == 0 {
            return bad("iteration limits and quadrature_nodes must be positive");
        }
        if let Some(f) = self.penalty_floor {
            if !(f > 0.0 && f <= 1.0) {
                return bad("penalty_floor must lie in (0, 1]");
            }
        }
        if let Some(s) = &self.search {
            if s.dim() != spec.dim || s.lo.iter().zip(&s.hi).any(|(a, b)| a > b) {
                return bad("search box has the wrong shape");
            }
        }
        Ok(Grid::new(self.axes.clone(), self.t_count, spec.horizon)?)
    }

    pub fn penalty(&self, epsilon: f64) -> PenaltyFamily {
        match self.penalty_floor {
            Some(f) => PenaltyFamily::with_floor(epsilon, f),
            None => PenaltyFamily::new(epsilon),
        }
    }

    pub fn m_search(&self, grid: &Grid) -> MSearch {
        match &self.search {
            Some(s) => MSearch { search: s.clone(), refine: self.refine_m },
            None => MSearch { refine: self.refine_m, ..MSearch::full(grid) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct QviResidual {
    pub r1_max: f64,
    pub r2_max: f64,
    pub comp_max: f64,
    /// Nodes included (depth ≥ 10% of the box width, slices k ≥ 1).
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `(ε, max β_ε(u_ε − Ψ))` from the last outer iteration.
    pub penalty_max: Vec<(f64, f64)>,
    pub qvi_residual: QviResidual,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    /// Steps that hit `newton_max_iter` without meeting `newton_tol`.
    pub newton_unconverged: usize,
    pub converged: bool,
    /// Max-norm change in the last outer iteration.
    pub last_change: f64,
    /// Largest decrease applied when projecting onto `u ≤ M̂u`.
    pub projection_max: f64,
    /// `Δt` times the largest total jump intensity of the explicit step.
    pub jump_cfl: f64,
}

/// Value slices, obstacle, impulse maps and action masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub grid: Grid,
    /// `u(·, τ_k)`; slice 0 is `g`.
    pub slices: Vec<Field>,
    /// `M̂u` per slice.
    pub obstacle: Vec<Field>,
    pub impulse: Vec<ImpulseMap>,
    /// Action mask `𝒜̂` per slice; its complement is `𝒞̂`.
    pub action: Vec<Vec<bool>>,
    pub region_tol: f64,
    pub diagnostics: Diagnostics,
}

impl Solution {
    /// Original time of slice `k`.
    pub fn original_time(&self, k: usize) -> f64 {
        self.grid.horizon - self.grid.time(k)
    }

    /// Slice nearest to original time `t`.
    pub fn nearest_slice(&self, t: f64) -> usize {
        let tau = (self.grid.horizon - t).clamp(0.0, self.grid.horizon);
        let k = math::round(tau / self.grid.dt()) as usize;
        k.min(self.grid.t_count - 1)
    }

    /// `V(x, t)`: multilinear in space, linear in time, g-growth extension
    /// outside the box.
    pub fn value_at(&self, spec: &ProblemSpec, x: &[f64], t: f64) -> Result<f64, OperatorError> {
        let tau = (self.grid.horizon - t).clamp(0.0, self.grid.horizon);
        let s = tau / self.grid.dt();
        let k = (math::floor(s) as usize).min(self.grid.t_count - 2);
        let w = s - k as f64;
        let ext = Extension::new(&self.grid, spec);
        let mut scratch = vec![0.0; x.len()];
        let a = ext.eval(&self.slices[k], x, &mut scratch)?;
        if w == 0.0 {
            return Ok(a);
        }
        let b = ext.eval(&self.slices[k + 1], x, &mut scratch)?;
        Ok(a * (1.0 - w) + b * w)
    }

    /// Feedback decision at `(x, t)`: nearest node, nearest slice.
    pub fn policy_at(&self, x: &[f64], t: f64) -> Option<&[f64]> {
        let k = self.nearest_slice(t);
        let node = self.grid.nearest(x);
        if self.action[k][node] {
            self.impulse[k][node].as_deref()
        } else {
            None
        }
    }

    /// Rebuilds obstacle, impulse maps and masks from value slices.
    pub fn from_slices<E: Executor>(
        exec: &E,
        spec: &ProblemSpec,
        cfg: &SolverConfig,
        slices: Vec<Field>,
        diagnostics: Diagnostics,
    ) -> Result<Solution, SolverError> {
        let grid = cfg.validate(spec)?;
        if slices.len() != grid.t_count {
            return Err(SolverError::Config(format!("{} slices for t_count {}", slices.len(), grid.t_count)));
        }
        for s in &slices {
            grid.check_field(s)?;
        }
        let search = cfg.m_search(&grid);
        let shifts = ShiftSet::new(&grid, &search.search);
        let mut obstacle = Vec::with_capacity(slices.len());
        let mut impulse = Vec::with_capacity(slices.len());
        for (k, u) in slices.iter().enumerate() {
            let t = grid.horizon - grid.time(k);
            let (m, map) = operators::apply_m_with(exec, u, spec, &grid, t, &search, &shifts)?;
            obstacle.push(m);
            impulse.push(map);
        }
        let mut sol = Solution {
            grid,
            slices,
            obstacle,
            impulse,
            action: Vec::new(),
            region_tol: cfg.region_tol,
            diagnostics,
        };
        sol.action = extract_regions(&sol, cfg.region_tol);
        Ok(sol)
    }
}

/// `𝒜̂ = {M̂u − u ≤ region_tol}` per slice.
pub fn extract_regions(sol: &Solution, region_tol: f64) -> Vec<Vec<bool>> {
    sol.slices
        .iter()
        .zip(&sol.obstacle)
        .map(|(u, m)| u.iter().zip(m).map(|(u, m)| m - u <= region_tol).collect())
        .collect()
}

/// Boundary closure of each implicit step.
pub enum LinearBoundary<'a> {
    /// Prescribed values on the lateral boundary, `(x, τ) ↦ φ`.
    Dirichlet(&'a dyn Fn(&[f64], f64) -> f64),
    /// `u(x_b) − u(x_p) = g(x_b) − g(x_p)` with `x_p` the nearest node of the
    /// inner ring.
    Extension,
}

struct Stepper<'a, E: Executor> {
    exec: &'a E,
    spec: &'a ProblemSpec,
    grid: &'a Grid,
    cfg: &'a SolverConfig,
    rule: SmallJumpRule,
    l_cache: Option<Csr>,
    /// For boundary nodes: partner node and right-hand side (`None` inside).
    boundary: Vec<Option<(Option<usize>, f64)>>,
    dirichlet: Option<&'a dyn Fn(&[f64], f64) -> f64>,
    stats: Diagnostics,
}

impl<'a, E: Executor> Stepper<'a, E> {
    fn new(
        exec: &'a E,
        spec: &'a ProblemSpec,
        grid: &'a Grid,
        cfg: &'a SolverConfig,
        closure: LinearBoundary<'a>,
    ) -> Result<Self, SolverError> {
        let n = grid.dim();
        let strides = grid.strides();
        let mut boundary = vec![None; grid.len()];
        let mut idx = vec![0usize; n];
        let dirichlet = match closure {
            LinearBoundary::Dirichlet(f) => Some(f),
            LinearBoundary::Extension => None,
        };
        for (node, b) in boundary.iter_mut().enumerate() {
            if !grid.is_boundary(node) {
                continue;
            }
            if dirichlet.is_some() {
                *b = Some((None, 0.0));
                continue;
            }
            grid.multi_into(node, &mut idx);
            let mut p = node;
            for i in 0..n {
                let c = idx[i].clamp(1, grid.axes[i].count - 2);
                p = p + c * strides[i] - idx[i] * strides[i];
            }
            let dg = spec.terminal(&grid.coords(node)) - spec.terminal(&grid.coords(p));
            if !dg.is_finite() {
                return Err(SolverError::Model(crate::error::ModelError::NonFinite {
                    what: "terminal_cost".into(),
                    x: grid.coords(node),
                    t: spec.horizon,
                }));
            }
            *b = Some((Some(p), dg));
        }
        let l_cache = if spec.dynamics_depend_on_time() { None } else { Some(operators::assemble_l(spec, grid, 0.0)?) };
        let rule = SmallJumpRule::new(spec, cfg.quadrature_nodes);
        Ok(Stepper { exec, spec, grid, cfg, rule, l_cache, boundary, dirichlet, stats: Diagnostics::default() })
    }

    fn jump_cfl(&self) -> f64 {
        let mut lam: f64 = 0.0;
        let n = self.grid.dim();
        let mut z = vec![0.0; n];
        for node in 0..self.grid.len() {
            let x = self.grid.coords(node);
            for k in 0..self.grid.t_count {
                let t = self.grid.horizon - self.grid.time(k);
                let total: f64 = (0..self.spec.jumps.atoms.len()).map(|a| self.spec.atom_into(a, &x, t, &mut z)).sum();
                lam = lam.max(total);
                if !self.spec.dynamics_depend_on_time() {
                    break;
                }
            }
        }
        self.grid.dt() * (lam + self.rule.total_mass())
    }

    /// System matrix without the penalty: `I/Δt + L̂` inside, closure rows on
    /// the boundary (scaled by `1/Δt`).
    fn system(&self, t: f64) -> Result<Csr, SolverError> {
        let owned;
        let l = match &self.l_cache {
            Some(l) => l,
            None => {
                owned = operators::assemble_l(self.spec, self.grid, t)?;
                &owned
            }
        };
        let inv = 1.0 / self.grid.dt();
        let mut a = Csr::with_capacity(l.n, l.vals.len() + l.n);
        let mut row = Vec::new();
        for i in 0..l.n {
            match self.boundary[i] {
                Some((p, _)) => {
                    row.push((i, inv));
                    if let Some(p) = p {
                        row.push((p, -inv));
                    }
                }
                None => {
                    let (c, v) = l.row(i);
                    row.extend(c.iter().copied().zip(v.iter().copied()));
                    row.push((i, inv));
                }
            }
            a.push_row(&mut row);
        }
        Ok(a)
    }

    /// One implicit step from `u_prev` (slice `k−1`) to slice `k`.
    fn step(
        &mut self,
        k: usize,
        u_prev: &[f64],
        guess: &[f64],
        penalty: Option<(&PenaltyFamily, &[f64])>,
    ) -> Result<Field, SolverError> {
        let grid = self.grid;
        let tau = grid.time(k);
        let t = grid.horizon - tau;
        let inv = 1.0 / grid.dt();
        let a = self.system(t)?;
        let iu = operators::apply_i_with(self.exec, u_prev, self.spec, grid, t, self.cfg.theta, u_prev, &self.rule)?;
        let len = grid.len();
        let mut rhs = vec![0.0; len];
        let mut x = vec![0.0; grid.dim()];
        for node in 0..len {
            grid.coords_into(node, &mut x);
            rhs[node] = match self.boundary[node] {
                Some((Some(_), dg)) => dg * inv,
                Some((None, _)) => (self.dirichlet.expect("Dirichlet closure"))(&x, tau) * inv,
                None => {
                    let f = self.spec.running(&x, t);
                    if !f.is_finite() {
                        return Err(SolverError::Model(crate::error::ModelError::NonFinite {
                            what: "running_cost".into(),
                            x: x.clone(),
                            t,
                        }));
                    }
                    u_prev[node] * inv + f + iu[node]
                }
            };
        }
        // Dirichlet rows are not penalized
        let penalized = |node: usize| !matches!(self.boundary[node], Some((None, _)));
        let residual = |u: &[f64], out: &mut [f64]| {
            a.mul_into(u, out);
            for i in 0..len {
                out[i] -= rhs[i];
                if let Some((fam, psi)) = penalty {
                    if penalized(i) {
                        out[i] += fam.eval(u[i] - psi[i]);
                    }
                }
            }
        };
        let scale = rhs.iter().fold(1.0f64, |m, v| m.max(math::abs(*v)));
        let target = self.cfg.newton_tol * scale;
        let mut u = guess.to_vec();
        let mut f = vec![0.0; len];
        residual(&u, &mut f);
        let mut fnorm = f.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
        let mut trial = vec![0.0; len];
        let mut f_trial = vec![0.0; len];
        let mut converged = fnorm <= target;
        let mut iter = 0;
        while !converged && iter < self.cfg.newton_max_iter {
            iter += 1;
            let jac = match penalty {
                Some((fam, psi)) => {
                    let d: Vec<f64> =
                        (0..len).map(|i| if penalized(i) { fam.derivative(u[i] - psi[i]) } else { 0.0 }).collect();
                    a.scaled_plus_diag(1.0, &d)
                }
                None => a.clone(),
            };
            // residuals below the round-off level of the Jacobian are noise
            let jnorm = (0..len).map(|i| jac.row(i).1.iter().map(|v| math::abs(*v)).sum::<f64>()).fold(0.0, f64::max);
            let unorm = u.iter().fold(1.0f64, |m, v| m.max(math::abs(*v)));
            let noise = 16.0 * f64::EPSILON * jnorm * unorm;
            if fnorm <= noise {
                converged = true;
                break;
            }
            let neg: Vec<f64> = f.iter().map(|v| -v).collect();
            let mut delta = vec![0.0; len];
            self.stats.linear_iterations +=
                bicgstab(&jac, &neg, &mut delta, self.cfg.linear_tol, self.cfg.linear_max_iter)?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..=30 {
                for i in 0..len {
                    trial[i] = u[i] + lambda * delta[i];
                }
                residual(&trial, &mut f_trial);
                let tn = f_trial.iter().fold(0.0f64, |m, v| m.max(math::abs(*v)));
                if tn <= (1.0 - 1e-4 * lambda) * fnorm || tn <= target.max(noise) {
                    core::mem::swap(&mut u, &mut trial);
                    core::mem::swap(&mut f, &mut f_trial);
                    fnorm = tn;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                if fnorm <= 1e3 * noise {
                    converged = true;
                    break;
                }
                return Err(SolverError::NewtonDivergence { slice: k, residual: fnorm });
            }
            let dnorm = delta.iter().fold(0.0f64, |m, v| m.max(math::abs(*v))) * lambda;
            let unorm = u.iter().fold(1.0f64, |m, v| m.max(math::abs(*v)));
            converged = fnorm <= target || dnorm <= self.cfg.newton_tol * unorm;
        }
        self.stats.newton_iterations += iter;
        if !converged {
            self.stats.newton_unconverged += 1;
        }
        Ok(u)
    }

    /// Marches every slice from `u(·,0) = initial`.
    fn march(
        &mut self,
        initial: &[f64],
        warm: Option<&[Field]>,
        penalty: Option<(&PenaltyFamily, &[Field])>,
    ) -> Result<Vec<Field>, SolverError> {
        let mut out = Vec::with_capacity(self.grid.t_count);
        out.push(initial.to_vec());
        for k in 1..self.grid.t_count {
            let prev = &out[k - 1];
            let guess = warm.map(|w| w[k].as_slice()).unwrap_or(prev.as_slice());
            let pen = penalty.map(|(f, psi)| (f, psi[k].as_slice()));
            let next = self.step(k, prev, guess, pen)?;
            out.push(next);
        }
        Ok(out)
    }
}

/// Implicit march of `u_τ + L̂u − Îu = f` with the given lateral closure.
pub fn solve_linear(
    spec: &ProblemSpec,
    cfg: &SolverConfig,
    initial: &[f64],
    boundary: LinearBoundary<'_>,
) -> Result<Vec<Field>, SolverError> {
    spec.check_structure()?;
    let grid = cfg.validate(spec)?;
    grid.check_field(initial)?;
    let mut stepper = Stepper::new(&Sequential, spec, &grid, cfg, boundary)?;
    stepper.march(initial, None, None)
}

/// Full penalized solve.
pub fn solve_penalized(spec: &ProblemSpec, cfg: &SolverConfig) -> Result<Solution, SolverError> {
    solve_penalized_with(&Sequential, spec, cfg)
}

pub fn solve_penalized_with<E: Executor>(exec: &E, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<Solution, SolverError> {
    spec.check_structure()?;
    let grid = cfg.validate(spec)?;
    let search = cfg.m_search(&grid);
    let shifts = ShiftSet::new(&grid, &search.search);
    let mut stepper = Stepper::new(exec, spec, &grid, cfg, LinearBoundary::Extension)?;
    let jump_cfl = math::abs(stepper.jump_cfl());
    let initial: Field = (0..grid.len())
        .map(|i| {
            let x = grid.coords(i);
            let g = spec.terminal(&x);
            if g.is_finite() {
                Ok(g)
            } else {
                Err(SolverError::Model(crate::error::ModelError::NonFinite { what: "terminal_cost".into(), x, t: spec.horizon }))
            }
        })
        .collect::<Result<_, _>>()?;

    let obstacle_of = |u: &[Field]| -> Result<Vec<Field>, SolverError> {
        u.iter()
            .enumerate()
            .map(|(k, s)| {
                let t = grid.horizon - grid.time(k);
                Ok(operators::apply_m_with(exec, s, spec, &grid, t, &search, &shifts)?.0)
            })
            .collect()
    };

    let mut u = stepper.march(&initial, None, None)?;
    let mut converged = false;
    let mut change = f64::MAX;
    let mut penalty_max = Vec::new();
    let mut outer = 0;
    while outer < cfg.obstacle_max_iter {
        outer += 1;
        let psi = obstacle_of(&u)?;
        let mut cur = u.clone();
        penalty_max.clear();
        for &eps in &cfg.epsilon_schedule {
            let fam = cfg.penalty(eps);
            cur = stepper.march(&initial, Some(&cur), Some((&fam, &psi)))?;
            let mut bmax = f64::NEG_INFINITY;
            for k in 1..grid.t_count {
                for (a, b) in cur[k].iter().zip(&psi[k]) {
                    bmax = bmax.max(fam.eval(a - b));
                }
            }
            penalty_max.push((eps, bmax));
        }
        change = 0.0;
        for (a, b) in cur.iter().zip(&u) {
            for (x, y) in a.iter().zip(b) {
                change = change.max(math::abs(x - y));
            }
        }
        u = cur;
        if change < cfg.obstacle_tol {
            converged = true;
            break;
        }
    }

    // project onto u ≤ M̂u slice by slice (slice 0 is terminal data)
    let mut projection_max: f64 = 0.0;
    let final_obstacle = obstacle_of(&u)?;
    for k in 1..grid.t_count {
        for (v, m) in u[k].iter_mut().zip(&final_obstacle[k]) {
            if *v > *m {
                projection_max = projection_max.max(*v - *m);
                *v = *m;
            }
        }
    }

    let stats = core::mem::take(&mut stepper.stats);
    let diagnostics = Diagnostics {
        penalty_max,
        qvi_residual: QviResidual::default(),
        outer_iterations: outer,
        newton_iterations: stats.newton_iterations,
        linear_iterations: stats.linear_iterations,
        newton_unconverged: stats.newton_unconverged,
        converged,
        last_change: change,
        projection_max,
        jump_cfl,
    };
    let mut sol = Solution::from_slices(exec, spec, cfg, u, diagnostics)?;
    sol.diagnostics.qvi_residual = qvi_residual_with(exec, &sol, spec, cfg)?;
    Ok(sol)
}

/// Discrete QVI residuals on nodes at least 10% of the box width from the
/// lateral boundary, slices `k ≥ 1`.
pub fn qvi_residual(sol: &Solution, spec: &ProblemSpec, cfg: &SolverConfig) -> Result<QviResidual, SolverError> {
    qvi_residual_with(&Sequential, sol, spec, cfg)
}

pub fn qvi_residual_with<E: Executor>(
    exec: &E,
    sol: &Solution,
    spec: &ProblemSpec,
    cfg: &SolverConfig,
) -> Result<QviResidual, SolverError> {
    let grid = &sol.grid;
    let rule = SmallJumpRule::new(spec, cfg.quadrature_nodes);
    let inv = 1.0 / grid.dt();
    let mut out = QviResidual::default();
    let deep: Vec<usize> = (0..grid.len()).filter(|&i| grid.is_deep_interior(i, 0.1)).collect();
    let mut x = vec![0.0; grid.dim()];
    for k in 1..grid.t_count {
        let t = grid.horizon - grid.time(k);
        let u = &sol.slices[k];
        let prev = &sol.slices[k - 1];
        let lu = operators::assemble_l(spec, grid, t)?.mul(u);
        let iu = operators::apply_i_with(exec, prev, spec, grid, t, cfg.theta, prev, &rule)?;
        for &node in &deep {
            grid.coords_into(node, &mut x);
            let d1 = (u[node] - prev[node]) * inv + lu[node] - spec.running(&x, t) - iu[node];
            let d2 = u[node] - sol.obstacle[k][node];
            if sol.action[k][node] {
                out.r2_max = out.r2_max.max(math::abs(d2));
            } else {
                out.r1_max = out.r1_max.max(math::abs(d1));
            }
            out.comp_max = out.comp_max.max(math::abs(d1).min(math::abs(d2)));
            out.nodes += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SymbolSet;
    use crate::model::CoefficientFn;
    use crate::testutil::simple_spec;

    fn cfg1(lo: f64, hi: f64, count: usize, t_count: usize) -> SolverConfig {
        SolverConfig { axes: vec![Axis::new(lo, hi, count)], t_count, ..SolverConfig::default() }
    }

    fn heat_spec() -> ProblemSpec {
        let mut spec = simple_spec(1);
        spec.diffusion[0][0] = CoefficientFn::expr("sqrt(2)", &SymbolSet::state(1)).unwrap();
        spec.terminal_cost = CoefficientFn::expr("x[0]^2", &SymbolSet::terminal(1)).unwrap();
        spec.intervention_cost = CoefficientFn::expr("1e6 + xi[0]^2", &SymbolSet::impulse(1)).unwrap();
        spec
    }

    #[test]
    fn linear_march_reference_values() {
        let spec = heat_spec();
        let cfg = cfg1(-2.0, 2.0, 41, 11);
        let g = cfg.validate(&spec).unwrap();
        let init: Vec<f64> = (0..g.len()).map(|i| g.coords(i)[0].powi(2)).collect();
        let exact = |x: &[f64], tau: f64| x[0] * x[0] + 2.0 * tau;
        let u = solve_linear(&spec, &cfg, &init, LinearBoundary::Dirichlet(&exact)).unwrap();
        for (k, s) in u.iter().enumerate() {
            for node in 0..g.len() {
                assert!((s[node] - exact(&g.coords(node), g.time(k))).abs() <= 1e-8);
            }
        }

        let mut spec = simple_spec(1);
        spec.diffusion[0][0] = CoefficientFn::Constant(0.0);
        spec.running_cost = CoefficientFn::Constant(1.0);
        let zero = vec![0.0; g.len()];
        let u = solve_linear(&spec, &cfg, &zero, LinearBoundary::Extension).unwrap();
        assert!(u[10].iter().all(|v| (v - 1.0).abs() < 1e-9));

        spec.running_cost = CoefficientFn::Constant(0.0);
        spec.discount = 1.0;
        let one = vec![1.0; g.len()];
        let u = solve_linear(&spec, &cfg, &one, LinearBoundary::Extension).unwrap();
        // backward Euler: (1 + Δt)^{-k}
        assert!(u[10].iter().all(|v| (v - 1.1f64.powi(-10)).abs() < 1e-9));
        assert!(u[10].iter().all(|v| (v - (-1.0f64).exp()).abs() < 0.02));
    }

    #[test]
    fn zero_costs_give_zero_value_and_no_action() {
        let mut spec = simple_spec(1);
        spec.intervention_cost = CoefficientFn::expr("1 + xi[0]^2", &SymbolSet::impulse(1)).unwrap();
        let sol = solve_penalized(&spec, &cfg1(-1.0, 1.0, 21, 6)).unwrap();
        assert!(sol.slices.iter().flatten().all(|v| v.abs() < 1e-6));
        assert!(sol.action.iter().flatten().all(|a| !a));
    }

    #[test]
    fn heat_baseline_small_grid() {
        let spec = heat_spec();
        let sol = solve_penalized(&spec, &cfg1(-2.0, 2.0, 81, 21)).unwrap();
        let k = sol.grid.t_count - 1;
        for node in 0..sol.grid.len() {
            let x = sol.grid.coords(node)[0];
            assert!((sol.slices[k][node] - x * x - 2.0).abs() < 2e-2, "{x}");
        }
        assert!(sol.action.iter().flatten().all(|a| !a));
        assert!(sol.diagnostics.converged);
        assert!(sol.diagnostics.qvi_residual.r1_max < 5e-2);
        assert_eq!(sol.diagnostics.qvi_residual.r2_max, 0.0);
    }

    #[test]
    fn controlled_problem_respects_obstacle_and_comparison() {
        let mut spec = simple_spec(1);
        spec.diffusion[0][0] = CoefficientFn::Constant(1.0);
        spec.running_cost = CoefficientFn::expr("x[0]^2", &SymbolSet::state(1)).unwrap();
        spec.intervention_cost = CoefficientFn::expr("0.5 + 0.1*abs(xi[0])", &SymbolSet::impulse(1)).unwrap();
        spec.constants.k = 0.5;
        spec.constants.l_bound = 0.5;
        let cfg = cfg1(-3.0, 3.0, 61, 21);
        let sol = solve_penalized(&spec, &cfg).unwrap();
        for k in 0..cfg.t_count {
            for node in 0..sol.grid.len() {
                assert!(sol.slices[k][node] <= sol.obstacle[k][node] + 1e-9);
            }
        }
        let last = cfg.t_count - 1;
        assert!(sol.action[last].iter().any(|a| *a));
        assert!(!sol.action[last][sol.grid.nearest(&[0.0])]);

        let mut more = spec.clone();
        more.running_cost = CoefficientFn::expr("x[0]^2 + 0.3", &SymbolSet::state(1)).unwrap();
        let sol2 = solve_penalized(&more, &cfg).unwrap();
        for (a, b) in sol.slices.iter().flatten().zip(sol2.slices.iter().flatten()) {
            assert!(b >= &(a - 1e-9));
        }
    }

    #[test]
    fn smaller_epsilon_does_not_raise_baseline() {
        let spec = heat_spec();
        let mut cfg = cfg1(-2.0, 2.0, 41, 11);
        cfg.epsilon_schedule = vec![0.1];
        let a = solve_penalized(&spec, &cfg).unwrap();
        cfg.epsilon_schedule = vec![0.05];
        let b = solve_penalized(&spec, &cfg).unwrap();
        for (x, y) in b.slices.iter().flatten().zip(a.slices.iter().flatten()) {
            assert!(*x <= *y + 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        let spec = simple_spec(1);
        let mut cfg = cfg1(-1.0, 1.0, 11, 3);
        cfg.epsilon_schedule = vec![0.1, 0.1];
        assert!(matches!(solve_penalized(&spec, &cfg), Err(SolverError::Config(_))));
        let cfg = SolverConfig { axes: vec![], ..SolverConfig::default() };
        assert!(cfg.validate(&spec).is_err());
    }
}
