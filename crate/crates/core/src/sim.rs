//! Euler–Maruyama simulation of the controlled jump SDE and Monte Carlo
//! estimates of the cost functional.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::exec::{Executor, Sequential};
use crate::expr::Expr;
use crate::grid::BoxRegion;
use crate::math;
use crate::model::ProblemSpec;
use crate::rng;
use crate::solver::Solution;

/// Rule mapping `(x, t)` to "wait" or an impulse `ξ ≠ 0`.
#[derive(Debug, Clone)]
pub enum ImpulseStrategy<'a> {
    NoAction,
    /// Action mask and impulse map of a solution, nearest node and slice.
    Feedback(&'a Solution),
    /// `(time, ξ)`: applied once at the first decision time `≥ time`.
    FixedSchedule(Vec<(f64, Vec<f64>)>),
    /// Impulse `ξ(x,t)` whenever `trigger(x,t) > 0`.
    Threshold { trigger: Expr, impulse: Vec<Expr> },
}

impl ImpulseStrategy<'_> {
    fn decide(&self, x: &[f64], t: f64, cursor: &mut usize) -> Option<Vec<f64>> {
        let xi = match self {
            ImpulseStrategy::NoAction => None,
            ImpulseStrategy::Feedback(sol) => sol.policy_at(x, t).map(|xi| xi.to_vec()),
            ImpulseStrategy::FixedSchedule(events) => {
                let e = events.get(*cursor)?;
                if t + 1e-12 >= e.0 {
                    *cursor += 1;
                    Some(e.1.clone())
                } else {
                    None
                }
            }
            ImpulseStrategy::Threshold { trigger, impulse } => {
                let p = crate::expr::Point::state(x, t);
                if trigger.eval(&p) > 0.0 {
                    Some(impulse.iter().map(|e| e.eval(&p)).collect())
                } else {
                    None
                }
            }
        }?;
        if xi.iter().all(|v| *v == 0.0) || xi.iter().any(|v| !v.is_finite()) {
            None
        } else {
            Some(xi)
        }
    }

    pub fn check(&self, dim: usize) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.into()));
        match self {
            ImpulseStrategy::FixedSchedule(events) => {
                if events.iter().any(|e| e.1.len() != dim) {
                    return bad("schedule impulse has the wrong dimension");
                }
                if events.windows(2).any(|w| w[1].0 < w[0].0) {
                    return bad("schedule times must be nondecreasing");
                }
            }
            ImpulseStrategy::Threshold { impulse, .. } if impulse.len() != dim => {
                return bad("threshold impulse has the wrong dimension");
            }
            ImpulseStrategy::Feedback(sol) if sol.grid.dim() != dim => {
                return bad("solution dimension differs from the problem");
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub max_impulses_per_path: usize,
    pub antithetic: bool,
    /// Radius below which small jumps are dropped; defaults to a tenth of
    /// the density cutoff.
    pub small_jump_cutoff: Option<f64>,
    pub quadrature_nodes: usize,
    /// `|X|` beyond which a path is flagged as exploded and frozen.
    pub overflow_guard: f64,
    /// Also run at `dt/2` and `dt/4`.
    pub richardson: bool,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            dt: 1e-3,
            n_paths: 10_000,
            seed: 0,
            max_impulses_per_path: 1000,
            antithetic: false,
            small_jump_cutoff: None,
            quadrature_nodes: crate::operators::DEFAULT_QUADRATURE_NODES,
            overflow_guard: 1e8,
            richardson: false,
        }
    }
}

impl PathConfig {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt <= spec.horizon) {
            return Err(SimError::Config(format!("dt must lie in (0, {}]", spec.horizon)));
        }
        if self.n_paths == 0 {
            return Err(SimError::Config("n_paths must be at least 1".into()));
        }
        if !(self.overflow_guard > 0.0) || self.quadrature_nodes == 0 {
            return Err(SimError::Config("overflow_guard and quadrature_nodes must be positive".into()));
        }
        if let Some(c) = self.small_jump_cutoff {
            if !(c >= 0.0) {
                return Err(SimError::Config("small_jump_cutoff must be nonnegative".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PathFlags {
    pub exploded: bool,
    pub budget_exceeded: bool,
}

impl PathFlags {
    pub fn any(&self) -> bool {
        self.exploded || self.budget_exceeded
    }
}

/// One simulated trajectory. Costs are discounted to `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    /// State after any impulses at the matching time.
    pub states: Vec<Vec<f64>>,
    pub impulses: Vec<(f64, Vec<f64>)>,
    pub running_cost: f64,
    pub intervention_cost: f64,
    pub terminal_cost: f64,
    pub flags: PathFlags,
}

impl PathRecord {
    pub fn total_cost(&self) -> f64 {
        self.running_cost + self.intervention_cost + self.terminal_cost
    }
}

/// When a path stops.
#[derive(Debug, Clone, PartialEq)]
pub enum StopRule {
    Horizon,
    /// Fixed time `s`; decisions at `s` itself are left to the value function.
    FixedTime(f64),
    /// First decision time at which the state is outside the box, else `T`.
    FirstExit(BoxRegion),
}

/// Result of a path run up to its stopping time.
#[derive(Debug, Clone, PartialEq)]
pub struct Stopped {
    /// Discounted running plus intervention cost before the stop.
    pub cost: f64,
    pub time: f64,
    pub state: Vec<f64>,
    pub discount: f64,
    pub flags: PathFlags,
}

/// Jump sampler built once per run.
struct Jumps {
    /// Cumulative small-jump rates and the jump vectors.
    small_cum: Vec<f64>,
    small_z: Vec<Vec<f64>>,
    small_rate: f64,
    /// `Σ rate·z` over simulated small jumps (compensator per unit time).
    small_drift: Vec<f64>,
}

impl Jumps {
    fn new(spec: &ProblemSpec, cfg: &PathConfig) -> (Self, f64) {
        let n = spec.dim;
        let mut small_cum = Vec::new();
        let mut small_z = Vec::new();
        let mut small_drift = vec![0.0; n];
        let mut neglected = 0.0;
        let mut total = 0.0;
        if let Some(sj) = &spec.jumps.small {
            let cut = cfg.small_jump_cutoff.unwrap_or(sj.cutoff / 10.0);
            for (s, m) in sj.radial_masses(cfg.quadrature_nodes) {
                if s < cut {
                    neglected += s * m;
                    continue;
                }
                for (d, w) in &sj.directions {
                    let rate = m * w;
                    if rate <= 0.0 {
                        continue;
                    }
                    let z: Vec<f64> = d.iter().map(|v| v * s).collect();
                    for i in 0..n {
                        small_drift[i] += rate * z[i];
                    }
                    total += rate;
                    small_cum.push(total);
                    small_z.push(z);
                }
            }
        }
        (Jumps { small_cum, small_z, small_rate: total, small_drift }, neglected)
    }
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 || !mean.is_finite() {
        return 0;
    }
    match Poisson::new(mean) {
        Ok(p) => {
            let v: f64 = p.sample(rng);
            v as u64
        }
        Err(_) => 0,
    }
}

struct Runner<'a> {
    spec: &'a ProblemSpec,
    strategy: &'a ImpulseStrategy<'a>,
    cfg: &'a PathConfig,
    jumps: Jumps,
}

impl Runner<'_> {
    /// Simulates path `index`; `record` keeps the full trajectory.
    fn run(&self, x0: &[f64], t0: f64, index: usize, stop: &StopRule, mut record: Option<&mut PathRecord>) -> Stopped {
        let spec = self.spec;
        let n = spec.dim;
        let m = spec.noise_columns();
        let horizon = spec.horizon;
        let (stream, sign) = if self.cfg.antithetic { (index / 2, if index % 2 == 1 { -1.0 } else { 1.0 }) } else { (index, 1.0) };
        let mut rng = rng::stream(self.cfg.seed, rng::domain::PATHS, stream as u64);
        let steps = {
            let s = math::ceil((horizon - t0) / self.cfg.dt - 1e-9);
            (s as usize).max(1)
        };
        let stop_time = match stop {
            StopRule::FixedTime(s) => *s,
            _ => f64::INFINITY,
        };
        let time = |k: usize| if k == steps { horizon } else { t0 + self.cfg.dt * k as f64 };
        let mut x = x0.to_vec();
        let mut b = vec![0.0; n];
        let mut sig = vec![0.0; n * m];
        let mut z = vec![0.0; n];
        let mut w = vec![0.0; m];
        let mut cursor = 0;
        let mut impulses = 0;
        let mut cost = 0.0;
        let mut flags = PathFlags::default();
        let r = spec.discount;
        let disc = |t: f64| if r == 0.0 { 1.0 } else { math::exp(-r * (t - t0)) };
        let mut k = 0;
        loop {
            let t = time(k);
            let stopped = match stop {
                StopRule::Horizon => false,
                StopRule::FixedTime(_) => t + 1e-12 >= stop_time,
                StopRule::FirstExit(bx) => !bx.contains(&x),
            };
            if stopped || flags.exploded {
                if let Some(rec) = record.as_deref_mut() {
                    rec.running_cost = cost;
                }
                return Stopped { cost, time: t, state: x, discount: disc(t), flags };
            }
            while let Some(xi) = self.strategy.decide(&x, t, &mut cursor) {
                if impulses >= self.cfg.max_impulses_per_path {
                    flags.budget_exceeded = true;
                    break;
                }
                impulses += 1;
                let c = disc(t) * spec.impulse_cost(&xi, t);
                cost += c;
                for i in 0..n {
                    x[i] += xi[i];
                }
                if let Some(rec) = record.as_deref_mut() {
                    rec.intervention_cost += c;
                    rec.impulses.push((t, xi));
                }
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.times.push(t);
                rec.states.push(x.clone());
            }
            if k == steps {
                return Stopped { cost, time: t, state: x, discount: disc(t), flags };
            }
            let h = time(k + 1) - t;
            let dc = disc(t) * spec.running(&x, t) * h;
            cost += dc;
            if let Some(rec) = record.as_deref_mut() {
                rec.running_cost += dc;
            }
            spec.drift_into(&x, t, &mut b);
            spec.sigma_into(&x, t, &mut sig);
            for wj in w.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *wj = sign * g * math::sqrt(h);
            }
            let mut dx = vec![0.0; n];
            for i in 0..n {
                let mut s = b[i] * h;
                for j in 0..m {
                    s += sig[i * m + j] * w[j];
                }
                dx[i] = s;
            }
            for a in 0..spec.jumps.atoms.len() {
                let lam = spec.atom_into(a, &x, t, &mut z);
                let count = poisson(&mut rng, lam * h) as f64;
                let compensate = math::norm(&z) < 1.0;
                for i in 0..n {
                    dx[i] += count * z[i];
                    if compensate {
                        dx[i] -= lam * z[i] * h;
                    }
                }
            }
            if self.jumps.small_rate > 0.0 {
                let count = poisson(&mut rng, self.jumps.small_rate * h);
                for _ in 0..count {
                    let u: f64 = rng.random::<f64>() * self.jumps.small_rate;
                    let j = self.jumps.small_cum.partition_point(|c| *c <= u).min(self.jumps.small_z.len() - 1);
                    for i in 0..n {
                        dx[i] += self.jumps.small_z[j][i];
                    }
                }
                for i in 0..n {
                    dx[i] -= self.jumps.small_drift[i] * h;
                }
            }
            for i in 0..n {
                x[i] += dx[i];
            }
            if x.iter().any(|v| !v.is_finite() || math::abs(*v) > self.cfg.overflow_guard) {
                flags.exploded = true;
            }
            k += 1;
        }
    }
}

fn check_start(spec: &ProblemSpec, x0: &[f64], t0: f64) -> Result<(), SimError> {
    if x0.len() != spec.dim {
        return Err(SimError::Config(format!("x0 has {} entries, problem dimension is {}", x0.len(), spec.dim)));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(SimError::Config("x0 must be finite".into()));
    }
    if !(t0 >= 0.0 && t0 < spec.horizon) {
        return Err(SimError::Config(format!("t0 must lie in [0, {})", spec.horizon)));
    }
    Ok(())
}

/// Simulates one full path up to the horizon.
pub fn simulate_path(
    spec: &ProblemSpec,
    strategy: &ImpulseStrategy<'_>,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
    path_index: usize,
) -> Result<PathRecord, SimError> {
    cfg.validate(spec)?;
    check_start(spec, x0, t0)?;
    strategy.check(spec.dim)?;
    let (jumps, _) = Jumps::new(spec, cfg);
    let runner = Runner { spec, strategy, cfg, jumps };
    let mut rec = PathRecord {
        times: Vec::new(),
        states: Vec::new(),
        impulses: Vec::new(),
        running_cost: 0.0,
        intervention_cost: 0.0,
        terminal_cost: 0.0,
        flags: PathFlags::default(),
    };
    let end = runner.run(x0, t0, path_index, &StopRule::Horizon, Some(&mut rec));
    rec.flags = end.flags;
    rec.terminal_cost = end.discount * spec.terminal(&end.state);
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateFlags {
    pub exploded: usize,
    pub budget_exceeded: usize,
    /// More than 1% of paths flagged.
    pub unreliable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub ci95: f64,
    pub n_paths: usize,
    pub dt: f64,
    pub flags: EstimateFlags,
    /// `∫_0^{θ'} s ρ(s) ds` of the dropped small jumps.
    pub neglected_small_jump_moment: f64,
    /// `(dt, mean, stderr)` at `dt`, `dt/2`, `dt/4` when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub richardson: Option<Vec<(f64, f64, f64)>>,
}

/// Mean and standard error in index order; antithetic pairs are averaged first.
pub fn mean_stderr(values: &[f64], antithetic: bool) -> (f64, f64) {
    let samples: Vec<f64> = if antithetic && values.len() >= 2 {
        values.chunks(2).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect()
    } else {
        values.to_vec()
    };
    let n = samples.len() as f64;
    // shifted by the first value so identical samples average exactly
    let v0 = values[0];
    let mean_s = v0 + samples.iter().map(|v| v - v0).sum::<f64>() / n;
    let var = if samples.len() > 1 { samples.iter().map(|v| (v - mean_s) * (v - mean_s)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mean = v0 + values.iter().map(|v| v - v0).sum::<f64>() / values.len() as f64;
    (mean, math::sqrt(var / n))
}

/// Runs `cfg.n_paths` paths with `stop` and maps each stopped path through `finish`.
#[allow(clippy::too_many_arguments)]
pub fn run_paths_with<E: Executor, R: Send, F>(
    exec: &E,
    spec: &ProblemSpec,
    strategy: &ImpulseStrategy<'_>,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
    stop: &StopRule,
    finish: F,
) -> Result<Vec<(R, PathFlags)>, SimError>
where
    F: Fn(&Stopped) -> R + Sync + Send,
{
    cfg.validate(spec)?;
    check_start(spec, x0, t0)?;
    strategy.check(spec.dim)?;
    let (jumps, _) = Jumps::new(spec, cfg);
    let runner = Runner { spec, strategy, cfg, jumps };
    Ok(exec.map(cfg.n_paths, |i| {
        let s = runner.run(x0, t0, i, stop, None);
        (finish(&s), s.flags)
    }))
}

pub fn estimate_cost(
    spec: &ProblemSpec,
    strategy: &ImpulseStrategy<'_>,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
) -> Result<CostEstimate, SimError> {
    estimate_cost_with(&Sequential, spec, strategy, x0, t0, cfg)
}

pub fn estimate_cost_with<E: Executor>(
    exec: &E,
    spec: &ProblemSpec,
    strategy: &ImpulseStrategy<'_>,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
) -> Result<CostEstimate, SimError> {
    let mut est = estimate_once(exec, spec, strategy, x0, t0, cfg)?;
    if cfg.richardson {
        let mut levels = vec![(est.dt, est.mean, est.stderr)];
        for div in [2.0, 4.0] {
            let sub = PathConfig { dt: cfg.dt / div, richardson: false, ..cfg.clone() };
            let e = estimate_once(exec, spec, strategy, x0, t0, &sub)?;
            levels.push((e.dt, e.mean, e.stderr));
        }
        est.richardson = Some(levels);
    }
    Ok(est)
}

fn estimate_once<E: Executor>(
    exec: &E,
    spec: &ProblemSpec,
    strategy: &ImpulseStrategy<'_>,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
) -> Result<CostEstimate, SimError> {
    let (_, neglected) = Jumps::new(spec, cfg);
    let out = run_paths_with(exec, spec, strategy, x0, t0, cfg, &StopRule::Horizon, |s| {
        s.cost + s.discount * spec.terminal(&s.state)
    })?;
    let values: Vec<f64> = out.iter().map(|o| o.0).collect();
    let (mean, stderr) = mean_stderr(&values, cfg.antithetic);
    let exploded = out.iter().filter(|o| o.1.exploded).count();
    let budget = out.iter().filter(|o| o.1.budget_exceeded).count();
    let flagged = out.iter().filter(|o| o.1.any()).count();
    Ok(CostEstimate {
        mean,
        stderr,
        ci95: 1.96 * stderr,
        n_paths: cfg.n_paths,
        dt: cfg.dt,
        flags: EstimateFlags { exploded, budget_exceeded: budget, unreliable: flagged * 100 > cfg.n_paths },
        neglected_small_jump_moment: neglected,
        richardson: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGap {
    pub estimate: CostEstimate,
    pub value: f64,
    /// `Ĵ − u(x0, t0)`.
    pub gap: f64,
}

impl PolicyGap {
    /// `Ĵ ≥ V` up to noise and `tol`.
    pub fn sign_ok(&self, tol: f64) -> bool {
        self.gap >= -(self.estimate.ci95 + tol)
    }
}

/// Cost of `strategy` (the solution's own feedback policy by default) minus
/// the solver value.
pub fn evaluate_policy_gap_with<E: Executor>(
    exec: &E,
    spec: &ProblemSpec,
    sol: &Solution,
    strategy: Option<&ImpulseStrategy<'_>>,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
) -> Result<PolicyGap, SimError> {
    let own = ImpulseStrategy::Feedback(sol);
    let strategy = strategy.unwrap_or(&own);
    let estimate = estimate_cost_with(exec, spec, strategy, x0, t0, cfg)?;
    let value = sol
        .value_at(spec, x0, t0)
        .map_err(|e| SimError::Config(format!("solution does not cover the start point: {e}")))?;
    Ok(PolicyGap { gap: estimate.mean - value, value, estimate })
}

pub fn evaluate_policy_gap(
    spec: &ProblemSpec,
    sol: &Solution,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
) -> Result<PolicyGap, SimError> {
    evaluate_policy_gap_with(&Sequential, spec, sol, None, x0, t0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SymbolSet;
    use crate::model::{CoefficientFn, JumpAtom, SmallJumps};
    use crate::testutil::simple_spec;

    fn still(spec: &mut ProblemSpec) {
        spec.diffusion[0][0] = CoefficientFn::Constant(0.0);
    }

    fn cfg(n: usize, dt: f64) -> PathConfig {
        PathConfig { n_paths: n, dt, ..PathConfig::default() }
    }

    #[test]
    fn degenerate_paths() {
        let mut spec = simple_spec(1);
        still(&mut spec);
        spec.running_cost = CoefficientFn::expr("x[0]^2 + 1", &SymbolSet::state(1)).unwrap();
        let rec = simulate_path(&spec, &ImpulseStrategy::NoAction, &[1.0], 0.0, &cfg(1, 0.01), 0).unwrap();
        assert!(rec.states.iter().all(|s| s[0] == 1.0));
        assert!((rec.running_cost - 2.0).abs() < 1e-12);

        spec.drift[0] = CoefficientFn::Constant(1.0);
        let rec = simulate_path(&spec, &ImpulseStrategy::NoAction, &[0.3], 0.0, &cfg(1, 0.01), 0).unwrap();
        assert!((rec.states.last().unwrap()[0] - 1.3).abs() < 1e-12);
    }

    #[test]
    fn fixed_schedule_bookkeeping() {
        let mut spec = simple_spec(1);
        still(&mut spec);
        spec.intervention_cost = CoefficientFn::expr("1 + xi[0]^2 + t", &SymbolSet::impulse(1)).unwrap();
        let s = ImpulseStrategy::FixedSchedule(vec![(0.5, vec![2.0])]);
        let rec = simulate_path(&spec, &s, &[1.0], 0.0, &cfg(1, 0.1), 0).unwrap();
        assert_eq!(rec.impulses.len(), 1);
        assert!((rec.impulses[0].0 - 0.5).abs() < 1e-12);
        assert_eq!(rec.impulses[0].1, vec![2.0]);
        assert!((rec.intervention_cost - 5.5).abs() < 1e-12);
        for (t, x) in rec.times.iter().zip(&rec.states) {
            assert_eq!(x[0], if *t < 0.5 - 1e-12 { 1.0 } else { 3.0 });
        }
    }

    #[test]
    fn paths_do_not_depend_on_batch_size() {
        let mut spec = simple_spec(1);
        spec.jumps.atoms.push(JumpAtom { intensity: CoefficientFn::Constant(3.0), size: vec![CoefficientFn::Constant(0.5)] });
        let a = simulate_path(&spec, &ImpulseStrategy::NoAction, &[0.0], 0.0, &cfg(10, 0.01), 7).unwrap();
        let b = simulate_path(&spec, &ImpulseStrategy::NoAction, &[0.0], 0.0, &cfg(1000, 0.01), 7).unwrap();
        assert_eq!(a, b);
        let c = simulate_path(&spec, &ImpulseStrategy::NoAction, &[0.0], 0.0, &cfg(10, 0.01), 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn compensated_small_jumps_are_martingales() {
        let mut spec = simple_spec(1);
        still(&mut spec);
        spec.terminal_cost = CoefficientFn::expr("x[0]", &SymbolSet::terminal(1)).unwrap();
        spec.jumps.small = Some(SmallJumps {
            density: CoefficientFn::expr("2*s^-1.5", &SymbolSet::radial()).unwrap(),
            cutoff: 0.5,
            directions: vec![(vec![1.0], 0.7), (vec![-1.0], 0.3)],
        });
        let est = estimate_cost(&spec, &ImpulseStrategy::NoAction, &[0.25], 0.0, &cfg(4000, 0.01)).unwrap();
        assert!((est.mean - 0.25).abs() <= 4.0 * est.stderr, "{est:?}");
        assert!(est.neglected_small_jump_moment > 0.0);
    }

    #[test]
    fn discounted_constant_cost() {
        let mut spec = simple_spec(1);
        still(&mut spec);
        spec.discount = 0.7;
        spec.running_cost = CoefficientFn::Constant(2.0);
        let est = estimate_cost(&spec, &ImpulseStrategy::NoAction, &[0.0], 0.0, &cfg(4, 1e-3)).unwrap();
        let exact = 2.0 * (1.0 - (-0.7f64).exp()) / 0.7;
        assert!((est.mean - exact).abs() < 2e-3);
    }

    #[test]
    fn budget_and_validation() {
        let mut spec = simple_spec(1);
        still(&mut spec);
        let s = ImpulseStrategy::Threshold {
            trigger: Expr::parse("1", &SymbolSet::state(1)).unwrap(),
            impulse: vec![Expr::parse("0.1", &SymbolSet::state(1)).unwrap()],
        };
        let mut c = cfg(200, 0.1);
        c.max_impulses_per_path = 5;
        let est = estimate_cost(&spec, &s, &[0.0], 0.0, &c).unwrap();
        assert_eq!(est.flags.budget_exceeded, 200);
        assert!(est.flags.unreliable);
        assert!(estimate_cost(&spec, &s, &[0.0], 0.0, &cfg(0, 0.1)).is_err());
        assert!(estimate_cost(&spec, &s, &[0.0], 1.0, &cfg(1, 0.1)).is_err());
    }

    #[test]
    fn antithetic_pairs_share_jumps_and_negate_noise() {
        let spec = simple_spec(1);
        let mut c = cfg(2, 0.1);
        c.antithetic = true;
        let a = simulate_path(&spec, &ImpulseStrategy::NoAction, &[0.0], 0.0, &c, 0).unwrap();
        let b = simulate_path(&spec, &ImpulseStrategy::NoAction, &[0.0], 0.0, &c, 1).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert!((x[0] + y[0]).abs() < 1e-12);
        }
    }
}
