//! Executable checks of a computed solution: dynamic programming residual,
//! a-priori growth and Hölder bounds, the obstacle chain and viscosity probes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CheckError;
use crate::exec::{Executor, Sequential};
use crate::grid::BoxRegion;
use crate::math;
use crate::model::ProblemSpec;
use crate::operators::{self, SmallJumpRule};
use crate::rng;
use crate::sim::{self, ImpulseStrategy, PathConfig, StopRule};
use crate::solver::Solution;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub label: String,
    pub x: Vec<f64>,
    /// Original (not inverted) time.
    pub t: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub id: String,
    pub status: CheckStatus,
    /// Smallest slack over the inequalities checked; `None` when vacuous.
    pub margin: Option<f64>,
    pub witnesses: Vec<Witness>,
    pub tolerances: BTreeMap<String, f64>,
    pub values: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl CheckReport {
    fn new(id: &str) -> Self {
        CheckReport {
            id: id.into(),
            status: CheckStatus::Pass,
            margin: None,
            witnesses: Vec::new(),
            tolerances: BTreeMap::new(),
            values: BTreeMap::new(),
            note: String::new(),
        }
    }

    fn value(&mut self, key: &str, v: f64) {
        if v.is_finite() {
            self.values.insert(key.into(), v);
        }
    }

    fn tol(&mut self, key: &str, v: f64) {
        self.tolerances.insert(key.into(), v);
    }

    fn slack(&mut self, s: f64) {
        self.margin = Some(self.margin.map_or(s, |m| m.min(s)));
    }

    fn witness(&mut self, label: &str, x: Vec<f64>, t: f64, value: f64) {
        self.witnesses.push(Witness { label: label.into(), x, t, value });
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Pass
    }
}

/// Stopping rule of the dynamic programming check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DppStop {
    FixedTime(f64),
    FirstExit(BoxRegion),
}

/// Default `C_disc` in `tol_dpp = CI95 + C_disc·(h² + Δτ + dt)`.
pub const DEFAULT_C_DISC: f64 = 1.0;

pub fn check_dpp(
    spec: &ProblemSpec,
    sol: &Solution,
    stop: &DppStop,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
) -> Result<CheckReport, CheckError> {
    check_dpp_with(&Sequential, spec, sol, stop, x0, t0, cfg, DEFAULT_C_DISC)
}

/// Runs the solution's feedback policy from `(x0, t0)` until the stopping
/// time and compares `E[costs + V(τ, X_τ)]` with `u(x0, t0)`.
#[allow(clippy::too_many_arguments)]
pub fn check_dpp_with<E: Executor>(
    exec: &E,
    spec: &ProblemSpec,
    sol: &Solution,
    stop: &DppStop,
    x0: &[f64],
    t0: f64,
    cfg: &PathConfig,
    c_disc: f64,
) -> Result<CheckReport, CheckError> {
    let bounds = sol.grid.bounds();
    if x0.len() != sol.grid.dim() || !bounds.contains(x0) {
        return Err(CheckError::Config(format!("start point {x0:?} lies outside the solved box")));
    }
    let rule = match stop {
        DppStop::FixedTime(s) => {
            if !(*s >= t0 && *s <= spec.horizon) {
                return Err(CheckError::Config(format!("stopping time {s} must lie in [t0, T]")));
            }
            StopRule::FixedTime(*s)
        }
        DppStop::FirstExit(b) => {
            if b.dim() != spec.dim || !b.is_nonempty() {
                return Err(CheckError::Config("exit box has the wrong dimension or is empty".into()));
            }
            StopRule::FirstExit(b.clone())
        }
    };
    let u0 = sol.value_at(spec, x0, t0)?;
    let strategy = ImpulseStrategy::Feedback(sol);
    let out = sim::run_paths_with(exec, spec, &strategy, x0, t0, cfg, &rule, |s| {
        let outside = !bounds.contains(&s.state);
        let v = sol.value_at(spec, &s.state, s.time).map(|v| s.cost + s.discount * v).unwrap_or(f64::NAN);
        (v, outside)
    })?;
    let outside = out.iter().filter(|o| o.0 .1).count();
    let values: Vec<f64> = out.iter().map(|o| o.0 .0).filter(|v| v.is_finite()).collect();
    let flagged = out.iter().filter(|o| o.1.any()).count();

    let mut rep = CheckReport::new("dpp");
    let h2 = sol.grid.axes.iter().map(|a| a.h() * a.h()).fold(0.0, f64::max);
    let disc = c_disc * (h2 + sol.grid.dt() + cfg.dt);
    rep.value("u", u0);
    rep.value("outside_fraction", outside as f64 / cfg.n_paths as f64);
    rep.value("flagged_paths", flagged as f64);
    rep.tol("c_disc", c_disc);
    rep.tol("h2", h2);
    rep.tol("grid_dt", sol.grid.dt());
    rep.tol("sim_dt", cfg.dt);
    rep.tol("discretization", disc);
    if values.is_empty() {
        rep.status = CheckStatus::Inconclusive;
        rep.note = "no stopped state could be evaluated".into();
        rep.witness("start", x0.to_vec(), t0, u0);
        return Ok(rep);
    }
    let (rhs, stderr) = sim::mean_stderr(&values, cfg.antithetic && values.len() == cfg.n_paths);
    let ci95 = 1.96 * stderr;
    let tol = ci95 + disc;
    let residual = rhs - u0;
    rep.value("rhs", rhs);
    rep.value("stderr", stderr);
    rep.value("residual", residual);
    rep.tol("ci95", ci95);
    rep.tol("tol_dpp", tol);
    // V is an infimum: any policy gives rhs ≥ u up to tol; near-optimality gives rhs ≤ u + tol
    rep.value("lower_margin", residual + tol);
    rep.value("upper_margin", tol - residual);
    rep.slack(tol - math::abs(residual));
    rep.witness("start", x0.to_vec(), t0, residual);
    rep.status = if outside * 100 > cfg.n_paths || flagged * 100 > cfg.n_paths {
        rep.note = "more than 1% of stopped paths left the solved box or were flagged".into();
        CheckStatus::Inconclusive
    } else if math::abs(residual) <= tol {
        CheckStatus::Pass
    } else {
        CheckStatus::Fail
    };
    Ok(rep)
}

pub const DEFAULT_BOUND_PAIRS: usize = 10_000;

/// Smallest constants with `−C(T+1) ≤ u ≤ C(1+|x|^{γ+δ})` over all nodes and
/// the space/time Hölder quotients over sampled node pairs.
pub fn check_bounds(sol: &Solution, spec: &ProblemSpec, pairs: usize, seed: u64) -> CheckReport {
    let grid = &sol.grid;
    let c = &spec.constants;
    let horizon = spec.horizon;
    let mut rep = CheckReport::new("bounds");
    let coords: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.coords(i)).collect();
    let (mut c_low, mut c_up) = (0.0f64, 0.0f64);
    let (mut w_low, mut w_up) = ((0, 0), (0, 0));
    for (k, u) in sol.slices.iter().enumerate() {
        for (i, v) in u.iter().enumerate() {
            let low = -v / (horizon + 1.0);
            if low > c_low || !low.is_finite() {
                c_low = low;
                w_low = (k, i);
            }
            let up = v / (1.0 + math::pow(math::norm(&coords[i]), c.gamma + c.delta));
            if up > c_up || !up.is_finite() {
                c_up = up;
                w_up = (k, i);
            }
        }
    }
    let (mut c_x, mut c_t) = (0.0f64, 0.0f64);
    let (mut w_x, mut w_t) = ((0, 0, 0), (0, 0, 0));
    let n = grid.dim();
    let mut idx = vec![0usize; n];
    for p in 0..pairs {
        let mut r = rng::stream(seed, rng::domain::BOUNDS, p as u64);
        let k1 = r.random_range(0..grid.t_count);
        let a = r.random_range(0..grid.len());
        // half the pairs are nearest neighbours, where the quotients peak
        let b = if p % 2 == 0 {
            grid.multi_into(a, &mut idx);
            let axis = r.random_range(0..n);
            if idx[axis] + 1 < grid.axes[axis].count {
                idx[axis] += 1;
            } else {
                idx[axis] -= 1;
            }
            grid.flat(&idx)
        } else {
            r.random_range(0..grid.len())
        };
        let k2 = if p % 2 == 0 {
            if k1 + 1 < grid.t_count { k1 + 1 } else { k1 - 1 }
        } else {
            r.random_range(0..grid.t_count)
        };
        if a != b {
            let (x, y) = (&coords[a], &coords[b]);
            let d: f64 = math::sqrt(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum());
            let w = (1.0 + math::pow(math::norm(x), c.gamma) + math::pow(math::norm(y), c.gamma)) * math::pow(d, c.delta);
            let q = math::abs(sol.slices[k1][a] - sol.slices[k1][b]) / w;
            if q > c_x || !q.is_finite() {
                c_x = q;
                w_x = (k1, a, b);
            }
        }
        if k1 != k2 {
            let x = &coords[a];
            let dt = math::abs(grid.time(k1) - grid.time(k2));
            let w = (1.0 + 2.0 * math::pow(math::norm(x), c.mu)) * math::pow(dt, c.delta / 2.0);
            let q = math::abs(sol.slices[k1][a] - sol.slices[k2][a]) / w;
            if q > c_t || !q.is_finite() {
                c_t = q;
                w_t = (k1, k2, a);
            }
        }
    }
    let t_of = |k: usize| sol.original_time(k);
    rep.witness("C_low", coords[w_low.1].clone(), t_of(w_low.0), c_low);
    rep.witness("C_up", coords[w_up.1].clone(), t_of(w_up.0), c_up);
    rep.witness("C_x", coords[w_x.1].clone(), t_of(w_x.0), c_x);
    rep.witness("C_t", coords[w_t.2].clone(), t_of(w_t.0), c_t);
    rep.value("C_low", c_low);
    rep.value("C_up", c_up);
    rep.value("C_x", c_x);
    rep.value("C_t", c_t);
    rep.value("pairs", pairs as f64);
    let all = [c_low, c_up, c_x, c_t];
    if all.iter().all(|v| v.is_finite()) {
        rep.status = CheckStatus::Pass;
    } else {
        rep.status = CheckStatus::Fail;
        rep.note = "a fitted constant is not finite".into();
    }
    rep
}

/// (a) `u ≤ M̂u`, (b) the `K/2` margin at impulse destinations, (c) one-sided
/// second differences of `M̂u` bounded by those of `u` on the continuation set.
pub fn check_obstacle_chain(sol: &Solution, spec: &ProblemSpec, region_tol: f64) -> CheckReport {
    let grid = &sol.grid;
    let n = grid.dim();
    let mut rep = CheckReport::new("obstacle");
    let scale = sol.slices.iter().flatten().fold(1.0f64, |m, v| m.max(math::abs(*v)));
    let tol_a = 1e-6 * scale;
    let k_half = spec.constants.k / 2.0;
    let h_min = grid.axes.iter().map(|a| a.h()).fold(f64::INFINITY, f64::min);
    let tol_c = 4.0 * region_tol / (h_min * h_min);
    rep.tol("a", tol_a);
    rep.tol("b", region_tol);
    rep.tol("c", tol_c);
    rep.value("K", spec.constants.k);

    // (a)
    let mut a_min = f64::INFINITY;
    let mut a_at = (0, 0);
    for (k, (u, m)) in sol.slices.iter().zip(&sol.obstacle).enumerate().skip(1) {
        for i in 0..u.len() {
            let gap = m[i] - u[i];
            if gap < a_min {
                a_min = gap;
                a_at = (k, i);
            }
        }
    }
    let a_ok = a_min >= -tol_a;
    rep.value("a_margin", a_min);
    rep.witness("a", grid.coords(a_at.1), sol.original_time(a_at.0), a_min);

    // (b)
    let mut b_min = f64::INFINITY;
    let mut b_at = None;
    let mut b_count = 0usize;
    let mut y = vec![0.0; n];
    for k in 1..sol.slices.len() {
        for i in 0..grid.len() {
            if !sol.action[k][i] {
                continue;
            }
            let Some(xi) = &sol.impulse[k][i] else { continue };
            grid.coords_into(i, &mut y);
            for d in 0..n {
                y[d] += xi[d];
            }
            let j = grid.nearest(&y);
            let gap = sol.obstacle[k][j] - sol.slices[k][j];
            b_count += 1;
            if gap < b_min {
                b_min = gap;
                b_at = Some((k, j));
            }
        }
    }
    let b_ok = b_count == 0 || b_min >= k_half - region_tol;
    rep.value("b_destinations", b_count as f64);
    if let Some((k, j)) = b_at {
        rep.value("b_margin", b_min - k_half);
        rep.witness("b", grid.coords(j), sol.original_time(k), b_min);
    }

    // (c)
    let mut idx = vec![0usize; n];
    let mut c_worst = f64::NEG_INFINITY;
    let mut c_at = None;
    let mut c_count = 0usize;
    let mut c_bound_max = f64::NEG_INFINITY;
    let strides = grid.strides();
    let second = |f: &[f64], i: usize, d: usize| {
        let h = grid.axes[d].h();
        (f[i + strides[d]] - 2.0 * f[i] + f[i - strides[d]]) / (h * h)
    };
    for k in 1..sol.slices.len() {
        let u = &sol.slices[k];
        let m = &sol.obstacle[k];
        let mut bound = f64::NEG_INFINITY;
        for i in 0..grid.len() {
            if sol.action[k][i] || grid.is_boundary(i) {
                continue;
            }
            for d in 0..n {
                bound = bound.max(second(u, i, d));
            }
        }
        if !bound.is_finite() {
            continue;
        }
        c_bound_max = c_bound_max.max(bound);
        for i in 0..grid.len() {
            if grid.is_boundary(i) {
                continue;
            }
            let Some(xi) = &sol.impulse[k][i] else { continue };
            grid.coords_into(i, &mut y);
            for d in 0..n {
                y[d] += xi[d];
            }
            if !grid.bounds().contains(&y) {
                continue;
            }
            let j = grid.nearest(&y);
            if grid.is_boundary(j) {
                continue;
            }
            grid.multi_into(i, &mut idx);
            for d in 0..n {
                let excess = second(m, i, d) - bound;
                c_count += 1;
                if excess > c_worst {
                    c_worst = excess;
                    c_at = Some((k, i));
                }
            }
        }
    }
    let c_ok = c_count == 0 || c_worst <= tol_c;
    rep.value("c_checked", c_count as f64);
    if let Some((k, i)) = c_at {
        rep.value("c_margin", -c_worst);
        rep.value("c_bound", c_bound_max);
        rep.witness("c", grid.coords(i), sol.original_time(k), c_worst);
    }

    rep.slack(a_min + tol_a);
    if b_count > 0 {
        rep.slack(b_min - k_half + region_tol);
    }
    if c_count > 0 {
        rep.slack(tol_c - c_worst);
    }
    rep.status = if a_ok && b_ok && c_ok { CheckStatus::Pass } else { CheckStatus::Fail };
    if !rep.passed() {
        let failed: Vec<&str> = [("a", a_ok), ("b", b_ok), ("c", c_ok)].iter().filter(|p| !p.1).map(|p| p.0).collect();
        rep.note = format!("failed sub-checks: {}", failed.join(","));
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub theta: f64,
    pub n_probes: usize,
    pub seed: u64,
    pub tol_visc: f64,
    /// Allowed fraction of valid probes in violation.
    pub max_violation_rate: f64,
    /// A fit is a touching function when its largest residual is below this
    /// fraction of the local variation of `u`.
    pub fit_ratio: f64,
    pub quadrature_nodes: usize,
    /// Probe centres keep at least this distance from the edge of the box.
    pub boundary_margin: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            theta: 0.1,
            n_probes: 500,
            seed: 0,
            tol_visc: 5e-2,
            max_violation_rate: 0.01,
            fit_ratio: 0.1,
            quadrature_nodes: operators::DEFAULT_QUADRATURE_NODES,
            boundary_margin: 0.0,
        }
    }
}

/// Local quadratic fit in `(x, τ)` over `5ⁿ × 3` nodes.
struct Fit {
    value: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    u_tau: f64,
    max_resid: f64,
    variation: f64,
    /// Extremes of `u − φ` over the stencil once φ is shifted through the centre value.
    dev_lo: f64,
    dev_hi: f64,
}

fn fit_quadratic(sol: &Solution, k: usize, center: &[usize]) -> Option<Fit> {
    let grid = &sol.grid;
    let n = grid.dim();
    let nb = 1 + n + 1 + n * (n + 1) / 2 + n + 1;
    let mut ata = vec![0.0; nb * nb];
    let mut atb = vec![0.0; nb];
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut centre_row = 0;
    let mut off = vec![-2i64; n];
    let mut idx = vec![0usize; n];
    let basis = |s: &[f64], st: f64| {
        let mut b = Vec::with_capacity(nb);
        b.push(1.0);
        b.extend_from_slice(s);
        b.push(st);
        for i in 0..n {
            for j in i..n {
                b.push(s[i] * s[j]);
            }
        }
        for v in s {
            b.push(v * st);
        }
        b.push(st * st);
        b
    };
    loop {
        for (d, o) in off.iter().enumerate() {
            idx[d] = (center[d] as i64 + o) as usize;
        }
        let node = grid.flat(&idx);
        let s: Vec<f64> = off.iter().map(|o| *o as f64).collect();
        for dk in [-1i64, 0, 1] {
            let kk = (k as i64 + dk) as usize;
            let b = basis(&s, dk as f64);
            let v = sol.slices[kk][node];
            if dk == 0 && off.iter().all(|o| *o == 0) {
                centre_row = rows.len();
            }
            for i in 0..nb {
                atb[i] += b[i] * v;
                for j in 0..nb {
                    ata[i * nb + j] += b[i] * b[j];
                }
            }
            rows.push((b, v));
        }
        let mut d = 0;
        while d < n {
            off[d] += 1;
            if off[d] <= 2 {
                break;
            }
            off[d] = -2;
            d += 1;
        }
        if d == n {
            break;
        }
    }
    let coef = math::solve_dense(&mut ata, &mut atb, nb)?;
    let resid: Vec<f64> = rows.iter().map(|(b, v)| v - b.iter().zip(&coef).map(|(x, c)| x * c).sum::<f64>()).collect();
    let (mut lo, mut hi, mut max_resid) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    let (mut dev_lo, mut dev_hi) = (0.0f64, 0.0f64);
    for ((_, v), r) in rows.iter().zip(&resid) {
        max_resid = max_resid.max(math::abs(*r));
        lo = lo.min(*v);
        hi = hi.max(*v);
        dev_lo = dev_lo.min(r - resid[centre_row]);
        dev_hi = dev_hi.max(r - resid[centre_row]);
    }
    let hs: Vec<f64> = grid.axes.iter().map(|a| a.h()).collect();
    let grad = (0..n).map(|i| coef[1 + i] / hs[i]).collect();
    let u_tau = coef[1 + n] / grid.dt();
    let mut hess = vec![0.0; n * n];
    let mut c = 2 + n;
    for i in 0..n {
        for j in i..n {
            let v = coef[c] / (hs[i] * hs[j]);
            if i == j {
                hess[i * n + i] = 2.0 * v;
            } else {
                hess[i * n + j] = v;
                hess[j * n + i] = v;
            }
            c += 1;
        }
    }
    Some(Fit { value: coef[0], grad, hess, u_tau, max_resid, variation: hi - lo, dev_lo, dev_hi })
}

/// Fits a quadratic touching function at random interior nodes and evaluates
/// `max{φ_τ + Lφ − f − I¹_θ[φ] − I²_θ[u], u − M̂u}`: a violation of the
/// subsolution side is a value above `tol_visc`, of the supersolution side
/// one below `−tol_visc`.
pub fn check_viscosity_probe(sol: &Solution, spec: &ProblemSpec, cfg: &ProbeConfig) -> Result<CheckReport, CheckError> {
    check_viscosity_probe_with(&Sequential, sol, spec, cfg)
}

pub fn check_viscosity_probe_with<E: Executor>(
    exec: &E,
    sol: &Solution,
    spec: &ProblemSpec,
    cfg: &ProbeConfig,
) -> Result<CheckReport, CheckError> {
    let grid = &sol.grid;
    let n = grid.dim();
    if grid.axes.iter().any(|a| a.count < 5) || grid.t_count < 3 {
        return Err(CheckError::Config("probing needs at least 5 nodes per axis and 3 slices".into()));
    }
    let mut ranges = Vec::with_capacity(n);
    for a in &grid.axes {
        let skip = if cfg.boundary_margin > 0.0 { math::ceil(cfg.boundary_margin / a.h() - 1e-9) as usize } else { 0 };
        let lo = skip.max(2);
        let hi = a.count.saturating_sub(lo + 1);
        if !(cfg.boundary_margin >= 0.0) || hi < lo {
            return Err(CheckError::Config(format!("boundary margin {} leaves no probe nodes", cfg.boundary_margin)));
        }
        ranges.push(lo..=hi);
    }
    let rule = SmallJumpRule::new(spec, cfg.quadrature_nodes);
    let results = exec.map(cfg.n_probes, |p| -> Result<Option<(f64, usize, usize, bool, bool)>, CheckError> {
        let mut r = rng::stream(cfg.seed, rng::domain::PROBES, p as u64);
        let k = r.random_range(1..grid.t_count - 1);
        let center: Vec<usize> = ranges.iter().map(|rg| r.random_range(rg.clone())).collect();
        let node = grid.flat(&center);
        let Some(fit) = fit_quadratic(sol, k, &center) else { return Ok(None) };
        let scale = 1.0 + math::abs(fit.value);
        if fit.max_resid > cfg.fit_ratio * fit.variation && fit.max_resid > 1e-10 * scale {
            return Ok(None);
        }
        let x = grid.coords(node);
        let t = sol.original_time(k);
        let u_c = sol.slices[k][node];
        let mut a = vec![0.0; n * n];
        let mut sig = vec![0.0; n * spec.noise_columns()];
        let mut b = vec![0.0; n];
        spec.a_into(&x, t, &mut sig, &mut a);
        spec.drift_into(&x, t, &mut b);
        let mut l = spec.discount * u_c;
        for i in 0..n {
            l -= b[i] * fit.grad[i];
            for j in 0..n {
                l -= a[i * n + j] * fit.hess[i * n + j];
            }
        }
        let phi = |y: &[f64]| {
            let mut v = u_c;
            for i in 0..n {
                let di = y[i] - x[i];
                v += fit.grad[i] * di;
                for j in 0..n {
                    v += 0.5 * fit.hess[i * n + j] * di * (y[j] - x[j]);
                }
            }
            v
        };
        let nonlocal = if spec.jumps.is_empty() {
            0.0
        } else {
            operators::nonlocal_split_at(spec, grid, &rule, &x, t, cfg.theta, &phi, &fit.grad, &sol.slices[k])?
        };
        let pde = fit.u_tau + l - spec.running(&x, t) - nonlocal;
        let h = pde.max(u_c - sol.obstacle[k][node]);
        let touch = fit.max_resid + 1e-10 * scale;
        Ok(Some((h, k, node, fit.dev_hi <= touch, fit.dev_lo >= -touch)))
    });
    let mut rep = CheckReport::new("viscosity");
    let (mut valid, mut sub, mut sup) = (0usize, 0usize, 0usize);
    let (mut worst, mut worst_at) = (0.0f64, None);
    for res in results {
        let Some((h, k, node, above, below)) = res? else { continue };
        if !above && !below {
            continue;
        }
        valid += 1;
        // φ above u tests the subsolution side, φ below u the supersolution side
        if above && h > cfg.tol_visc {
            sub += 1;
        } else if below && h < -cfg.tol_visc {
            sup += 1;
        }
        let h = if above { h.max(0.0) } else { 0.0 } + if below { h.min(0.0) } else { 0.0 };
        if math::abs(h) >= math::abs(worst) {
            worst = h;
            worst_at = Some((k, node));
        }
    }
    let rate = if valid == 0 { 0.0 } else { (sub + sup) as f64 / valid as f64 };
    rep.tol("tol_visc", cfg.tol_visc);
    rep.tol("max_violation_rate", cfg.max_violation_rate);
    rep.tol("fit_ratio", cfg.fit_ratio);
    rep.value("probes", cfg.n_probes as f64);
    rep.value("valid", valid as f64);
    rep.value("skipped", (cfg.n_probes - valid) as f64);
    rep.value("sub_violations", sub as f64);
    rep.value("super_violations", sup as f64);
    rep.value("violation_rate", rate);
    rep.value("worst_residual", worst);
    if let Some((k, node)) = worst_at {
        rep.witness("worst", grid.coords(node), sol.original_time(k), worst);
    }
    if valid == 0 {
        rep.status = CheckStatus::Inconclusive;
        rep.note = "no probe admitted a touching quadratic".into();
        return Ok(rep);
    }
    rep.slack(cfg.max_violation_rate - rate);
    rep.status = if rate <= cfg.max_violation_rate { CheckStatus::Pass } else { CheckStatus::Fail };
    Ok(rep)
}

/// Identifier list accepted by [`parse_check_list`].
pub const CHECK_IDS: [&str; 4] = ["dpp", "bounds", "obstacle", "viscosity"];

pub fn parse_check_list(list: &str) -> Result<Vec<String>, CheckError> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if !CHECK_IDS.contains(&item) {
            return Err(CheckError::Config(format!("unknown check {item:?}; expected one of {}", CHECK_IDS.join(","))));
        }
        if !out.iter().any(|s: &String| s == item) {
            out.push(item.to_string());
        }
    }
    if out.is_empty() {
        return Err(CheckError::Config("no checks selected".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SymbolSet;
    use crate::grid::Axis;
    use crate::model::CoefficientFn;
    use crate::solver::{Diagnostics, SolverConfig};
    use crate::testutil::simple_spec;

    fn heat_spec() -> ProblemSpec {
        let mut spec = simple_spec(1);
        spec.terminal_cost = CoefficientFn::expr("x[0]^2", &SymbolSet::terminal(1)).unwrap();
        spec.intervention_cost = CoefficientFn::expr("1e6 + xi[0]^2", &SymbolSet::impulse(1)).unwrap();
        spec
    }

    fn cfg(count: usize, t_count: usize) -> SolverConfig {
        SolverConfig { axes: vec![Axis::new(-2.0, 2.0, count)], t_count, ..SolverConfig::default() }
    }

    /// Exact heat solution `x² + τ` (A = ½).
    fn heat_exact(spec: &ProblemSpec, c: &SolverConfig) -> Solution {
        let grid = c.validate(spec).unwrap();
        let slices = (0..grid.t_count)
            .map(|k| (0..grid.len()).map(|i| grid.coords(i)[0].powi(2) + grid.time(k)).collect())
            .collect();
        Solution::from_slices(&Sequential, spec, c, slices, Diagnostics::default()).unwrap()
    }

    fn zero_solution(k0: f64, f: f64) -> (ProblemSpec, Solution) {
        let mut spec = simple_spec(1);
        spec.intervention_cost = CoefficientFn::expr(&format!("{k0} + xi[0]^2"), &SymbolSet::impulse(1)).unwrap();
        spec.running_cost = CoefficientFn::Constant(f);
        spec.constants.k = k0;
        let c = cfg(41, 11);
        let grid = c.validate(&spec).unwrap();
        let slices = vec![vec![0.0; grid.len()]; grid.t_count];
        let sol = Solution::from_slices(&Sequential, &spec, &c, slices, Diagnostics::default()).unwrap();
        (spec, sol)
    }

    #[test]
    fn dpp_degenerates_at_start_time() {
        let spec = heat_spec();
        let sol = heat_exact(&spec, &cfg(81, 21));
        let pc = PathConfig { n_paths: 50, dt: 1e-2, ..PathConfig::default() };
        let rep = check_dpp(&spec, &sol, &DppStop::FixedTime(0.3), &[0.4], 0.3, &pc).unwrap();
        assert_eq!(rep.values["residual"], 0.0);
        assert!(rep.passed());
    }

    #[test]
    fn dpp_heat_fixed_time() {
        let spec = heat_spec();
        let sol = heat_exact(&spec, &cfg(81, 21));
        let pc = PathConfig { n_paths: 4000, dt: 1e-2, ..PathConfig::default() };
        let rep = check_dpp(&spec, &sol, &DppStop::FixedTime(0.5), &[0.4], 0.0, &pc).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert!((rep.values["u"] - 1.16).abs() < 1e-12);
        assert!(rep.tolerances.contains_key("tol_dpp"));
        let json = serde_json::to_string(&rep).unwrap();
        let back: CheckReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn dpp_flags_paths_leaving_the_box() {
        let spec = heat_spec();
        let sol = heat_exact(&spec, &cfg(81, 21));
        let pc = PathConfig { n_paths: 200, dt: 1e-2, ..PathConfig::default() };
        let rep = check_dpp(&spec, &sol, &DppStop::FixedTime(1.0), &[1.9], 0.0, &pc).unwrap();
        assert_eq!(rep.status, CheckStatus::Inconclusive);
        assert!(check_dpp(&spec, &sol, &DppStop::FixedTime(1.0), &[2.5], 0.0, &pc).is_err());
    }

    #[test]
    fn bounds_on_zero_and_heat() {
        let (spec, sol) = zero_solution(1.0, 0.0);
        let rep = check_bounds(&sol, &spec, 1000, 0);
        assert!(rep.passed());
        for key in ["C_low", "C_up", "C_x", "C_t"] {
            assert_eq!(rep.values[key], 0.0, "{key}");
        }
        let spec = heat_spec();
        let sol = heat_exact(&spec, &cfg(81, 21));
        let rep = check_bounds(&sol, &spec, 1000, 0);
        assert!(rep.passed());
        assert_eq!(rep.values["C_low"], 0.0);
        assert!(rep.values["C_x"] > 0.0 && rep.values["C_x"] < 10.0);
        assert_eq!(rep.witnesses.len(), 4);
        assert_eq!(rep, check_bounds(&sol, &spec, 1000, 0));
    }

    #[test]
    fn obstacle_chain_heat_and_zero() {
        let spec = heat_spec();
        let sol = heat_exact(&spec, &cfg(81, 21));
        let rep = check_obstacle_chain(&sol, &spec, 1e-6);
        assert!(rep.passed(), "{rep:?}");
        assert!(rep.values["a_margin"] > 9.9e5);
        assert_eq!(rep.values["b_destinations"], 0.0);

        let (spec, sol) = zero_solution(1.0, 0.0);
        let rep = check_obstacle_chain(&sol, &spec, 1e-6);
        assert!(rep.passed(), "{rep:?}");
        let h = 0.1;
        assert!((rep.values["a_margin"] - (1.0 + h * h)).abs() < 1e-12);
        assert!(rep.values["c_margin"].abs() < 1e-9);
    }

    #[test]
    fn obstacle_chain_flags_artificial_violation() {
        let (spec, mut sol) = zero_solution(1.0, 0.0);
        sol.slices[3][20] = 5.0;
        let rep = check_obstacle_chain(&sol, &spec, 1e-6);
        assert_eq!(rep.status, CheckStatus::Fail);
        assert!(!rep.witnesses.is_empty());
    }

    #[test]
    fn probe_exact_heat() {
        let spec = heat_spec();
        let sol = heat_exact(&spec, &cfg(81, 21));
        let rep = check_viscosity_probe(&sol, &spec, &ProbeConfig { n_probes: 100, ..ProbeConfig::default() }).unwrap();
        assert!(rep.passed());
        assert_eq!(rep.values["valid"], 100.0);
        assert!(rep.values["worst_residual"].abs() < 1e-3, "{rep:?}");
    }

    #[test]
    fn probe_exact_correlated_two_d() {
        // u = x0·x1 + x0² + 2(a01 + a00)τ solves u_τ = tr(A D²u) for constant A
        let mut spec = simple_spec(2);
        spec.diffusion[0][0] = CoefficientFn::Constant(0.7);
        spec.diffusion[1][0] = CoefficientFn::Constant(0.2);
        spec.diffusion[1][1] = CoefficientFn::Constant(0.6);
        spec.intervention_cost = CoefficientFn::expr("1e6 + xi[0]^2", &SymbolSet::impulse(2)).unwrap();
        let (a00, a01) = (0.5 * 0.49, 0.5 * 0.14);
        let c = SolverConfig { axes: vec![Axis::new(-2.0, 2.0, 17), Axis::new(-1.0, 2.0, 13)], t_count: 11, ..SolverConfig::default() };
        let grid = c.validate(&spec).unwrap();
        let slices = (0..grid.t_count)
            .map(|k| {
                (0..grid.len())
                    .map(|i| {
                        let x = grid.coords(i);
                        x[0] * x[1] + x[0] * x[0] + 2.0 * (a01 + a00) * grid.time(k)
                    })
                    .collect()
            })
            .collect();
        let sol = Solution::from_slices(&Sequential, &spec, &c, slices, Diagnostics::default()).unwrap();
        let rep = check_viscosity_probe(&sol, &spec, &ProbeConfig { n_probes: 40, ..ProbeConfig::default() }).unwrap();
        assert_eq!(rep.values["valid"], 40.0);
        assert!(rep.values["worst_residual"].abs() < 1e-9, "{rep:?}");
    }

    #[test]
    fn probe_exact_with_drift() {
        // u = e^{-τ}·x1 solves u_τ = b·Du for b = (0, -x1) and zero diffusion
        let mut spec = simple_spec(2);
        spec.diffusion[0][0] = CoefficientFn::Constant(0.0);
        spec.diffusion[1][1] = CoefficientFn::Constant(0.0);
        spec.drift[1] = CoefficientFn::expr("-x[1]", &SymbolSet::state(2)).unwrap();
        spec.intervention_cost = CoefficientFn::expr("1e6 + xi[0]^2", &SymbolSet::impulse(2)).unwrap();
        let c = SolverConfig { axes: vec![Axis::new(-2.0, 2.0, 17), Axis::new(-2.0, 2.0, 17)], t_count: 41, ..SolverConfig::default() };
        let grid = c.validate(&spec).unwrap();
        let slices = (0..grid.t_count)
            .map(|k| (0..grid.len()).map(|i| (-grid.time(k)).exp() * grid.coords(i)[1]).collect())
            .collect();
        let sol = Solution::from_slices(&Sequential, &spec, &c, slices, Diagnostics::default()).unwrap();
        let rep = check_viscosity_probe(&sol, &spec, &ProbeConfig { n_probes: 40, ..ProbeConfig::default() }).unwrap();
        assert!(rep.values["worst_residual"].abs() < 1e-2, "{rep:?}");
    }

    #[test]
    fn probe_flags_artificial_zero() {
        let (spec, sol) = zero_solution(1.0, 1.0);
        let rep = check_viscosity_probe(&sol, &spec, &ProbeConfig { n_probes: 50, ..ProbeConfig::default() }).unwrap();
        assert_eq!(rep.status, CheckStatus::Fail);
        assert_eq!(rep.values["super_violations"], 50.0);
    }

    #[test]
    fn check_lists() {
        assert_eq!(parse_check_list("dpp, bounds,dpp").unwrap(), vec!["dpp", "bounds"]);
        assert!(parse_check_list("dpp,nope").is_err());
        assert!(parse_check_list("").is_err());
    }
}
