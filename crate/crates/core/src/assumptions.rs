//! Sampled checks of the standing assumptions on a problem instance.
//!
//! Every constant is an empirical max (or min) over sample points drawn from
//! per-sample counter-based streams, so the report is a deterministic function
//! of `(spec, box, samples, seed)`. None of these checks is a proof.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::grid::BoxRegion;
use crate::math;
use crate::model::ProblemSpec;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionEntry {
    pub id: u8,
    pub name: String,
    pub status: Status,
    /// Estimated constant (max or min over samples, see `note`).
    pub estimate: Option<f64>,
    /// Distance to failure; negative on failure.
    pub margin: Option<f64>,
    pub worst_point: Option<Vec<f64>>,
    pub sampled: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub samples: usize,
    pub seed: u64,
    pub entries: Vec<AssumptionEntry>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != Status::Fail)
    }

    pub fn entry(&self, id: u8) -> Option<&AssumptionEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionEntry> {
        self.entries.iter().filter(|e| e.status == Status::Fail)
    }
}

/// One random draw shared by all checks.
struct Sample {
    x: Vec<f64>,
    y: Vec<f64>,
    near: Vec<f64>,
    t: f64,
    t2: f64,
    xi: Vec<f64>,
    eta: Vec<f64>,
    eta_collinear: Vec<f64>,
}

fn draw(bx: &BoxRegion, horizon: f64, seed: u64, index: usize) -> Sample {
    let mut r = rng::stream(seed, rng::domain::ASSUMPTIONS, index as u64);
    let n = bx.dim();
    let pt = |r: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|i| bx.lo[i] + (bx.hi[i] - bx.lo[i]) * r.random::<f64>()).collect()
    };
    let x = pt(&mut r);
    let y = pt(&mut r);
    let z = pt(&mut r);
    let w = pt(&mut r);
    let near: Vec<f64> = (0..n)
        .map(|i| {
            let h = 1e-3 * (bx.hi[i] - bx.lo[i]);
            (x[i] + h * (2.0 * r.random::<f64>() - 1.0)).clamp(bx.lo[i], bx.hi[i])
        })
        .collect();
    let ta = horizon * r.random::<f64>();
    let tb = horizon * r.random::<f64>();
    let c: f64 = r.random::<f64>();
    let xi: Vec<f64> = (0..n).map(|i| y[i] - x[i]).collect();
    let eta: Vec<f64> = (0..n).map(|i| w[i] - z[i]).collect();
    let eta_collinear = xi.iter().map(|v| v * c).collect();
    Sample { x, y, near, t: ta.min(tb), t2: ta.max(tb), xi, eta, eta_collinear }
}

fn entry(id: u8, name: &str) -> AssumptionEntry {
    AssumptionEntry {
        id,
        name: name.to_string(),
        status: Status::Pass,
        estimate: None,
        margin: None,
        worst_point: None,
        sampled: true,
        note: String::new(),
    }
}

/// Running max of a ratio, remembering where it occurred.
struct Worst {
    value: f64,
    point: Vec<f64>,
}

impl Worst {
    fn max() -> Self {
        Worst { value: f64::NEG_INFINITY, point: Vec::new() }
    }
    fn min() -> Self {
        Worst { value: f64::INFINITY, point: Vec::new() }
    }
    fn up(&mut self, v: f64, p: impl FnOnce() -> Vec<f64>) {
        if v > self.value || v.is_nan() {
            self.value = v;
            self.point = p();
        }
    }
    fn down(&mut self, v: f64, p: impl FnOnce() -> Vec<f64>) {
        if v < self.value || v.is_nan() {
            self.value = v;
            self.point = p();
        }
    }
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

fn finite_check(v: f64, what: &str, x: &[f64], t: f64) -> Result<f64, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite { what: what.into(), x: x.to_vec(), t })
    }
}

/// Estimates the constants of the standing assumptions over `bx`.
pub fn validate_assumptions(
    spec: &ProblemSpec,
    bx: &BoxRegion,
    samples: usize,
    seed: u64,
) -> Result<AssumptionReport, ModelError> {
    if samples == 0 {
        return Err(ModelError::Invalid { name: "samples".into(), reason: "must be at least 1".into() });
    }
    if bx.dim() != spec.dim || !bx.is_nonempty() {
        return Err(ModelError::Invalid { name: "box".into(), reason: "must be nonempty with problem dimension".into() });
    }
    let n = spec.dim;
    let m = spec.noise_columns();
    let c = spec.constants;
    let cap = c.c_cap.unwrap_or(f64::INFINITY);
    let draws: Vec<Sample> = (0..samples).map(|i| draw(bx, spec.horizon, seed, i)).collect();

    let mut b1 = vec![0.0; n];
    let mut b2 = vec![0.0; n];
    let mut s1 = vec![0.0; n * m];
    let mut s2 = vec![0.0; n * m];
    let mut z1 = vec![0.0; n];
    let mut z2 = vec![0.0; n];

    // Assumption 2: Lipschitz continuity of b, σ and the atom first moment.
    let mut lip = Worst::max();
    for s in &draws {
        for y in [&s.y, &s.near] {
            let d = dist(&s.x, y);
            if d == 0.0 {
                continue;
            }
            spec.drift_into(&s.x, s.t, &mut b1);
            spec.drift_into(y, s.t, &mut b2);
            spec.sigma_into(&s.x, s.t, &mut s1);
            spec.sigma_into(y, s.t, &mut s2);
            for v in b1.iter().chain(&s1) {
                finite_check(*v, "drift/diffusion", &s.x, s.t)?;
            }
            let db = dist(&b1, &b2) / d;
            let ds = dist(&s1, &s2) / d;
            let mut jump_ratio = 0.0;
            for k in 0..spec.jumps.atoms.len() {
                let l1 = spec.atom_into(k, &s.x, s.t, &mut z1);
                let l2 = spec.atom_into(k, y, s.t, &mut z2);
                let diff: Vec<f64> = z1.iter().zip(&z2).map(|(a, b)| l1 * a - l2 * b).collect();
                jump_ratio += math::norm(&diff) / d;
            }
            lip.up(db.max(ds).max(jump_ratio), || cat(&[&s.x, y, &[s.t]]));
        }
    }
    let mut e2 = entry(2, "Lipschitz continuity of b, σ, jumps");
    e2.estimate = Some(lip.value.max(0.0));
    e2.margin = c.c_cap.map(|cap| cap - lip.value);
    if !(lip.value <= cap) {
        e2.status = Status::Fail;
        e2.worst_point = Some(lip.point.clone());
    } else {
        e2.worst_point = Some(lip.point);
    }
    e2.note = "max over sampled pairs (x, y, t) of |Δb|/|Δx|, |Δσ|/|Δx|, Σ|Δ(λz)|/|Δx|".into();

    // Assumption 3: growth with exponent ν.
    let small_second = spec.jumps.small.as_ref().map(|sj| sj.radial_moment(2.0, 128)).unwrap_or(0.0);
    let mut growth = Worst::max();
    for s in &draws {
        let xn = math::norm(&s.x);
        spec.drift_into(&s.x, s.t, &mut b1);
        spec.sigma_into(&s.x, s.t, &mut s1);
        let mut big = 0.0;
        let mut small = small_second;
        for k in 0..spec.jumps.atoms.len() {
            let lam = spec.atom_into(k, &s.x, s.t, &mut z1);
            let zn = math::norm(&z1);
            if zn >= 1.0 {
                big += lam * zn;
            } else {
                small += lam * zn * zn;
            }
        }
        let g_nu = 1.0 + math::pow(xn, c.nu);
        let ratio = (math::norm(&b1) / g_nu)
            .max(math::norm(&s1) / (1.0 + math::pow(xn, c.nu / 2.0)))
            .max(big / g_nu)
            .max(small / g_nu);
        growth.up(ratio, || cat(&[&s.x, &[s.t]]));
    }
    let mut e3 = entry(3, "growth condition with exponent ν");
    e3.estimate = Some(growth.value.max(0.0));
    e3.margin = c.c_cap.map(|cap| cap - growth.value);
    e3.status = if growth.value <= cap { Status::Pass } else { Status::Fail };
    e3.worst_point = Some(growth.point);
    e3.note = "max of |b|/(1+|x|^ν), |σ|/(1+|x|^(ν/2)) and jump moments over samples".into();

    // Assumption 4: Hölder continuity of f and g.
    let mut hold = Worst::max();
    for s in &draws {
        for y in [&s.y, &s.near] {
            let d = dist(&s.x, y);
            if d == 0.0 {
                continue;
            }
            let weight = (1.0 + math::pow(math::norm(&s.x), c.gamma) + math::pow(math::norm(y), c.gamma))
                * math::pow(d, c.delta);
            let f1 = finite_check(spec.running(&s.x, s.t), "running_cost", &s.x, s.t)?;
            let f2 = finite_check(spec.running(y, s.t), "running_cost", y, s.t)?;
            let g1 = finite_check(spec.terminal(&s.x), "terminal_cost", &s.x, s.t)?;
            let g2 = finite_check(spec.terminal(y), "terminal_cost", y, s.t)?;
            let r = (math::abs(f1 - f2) / weight).max(math::abs(g1 - g2) / weight);
            hold.up(r, || cat(&[&s.x, y, &[s.t]]));
        }
    }
    let mut e4 = entry(4, "Hölder continuity of f and g");
    e4.estimate = Some(hold.value.max(0.0));
    e4.margin = c.c_cap.map(|cap| cap - hold.value);
    e4.status = if hold.value <= cap { Status::Pass } else { Status::Fail };
    e4.worst_point = Some(hold.point);
    e4.note = "max |Δf|, |Δg| / ((1+|x|^γ+|y|^γ)|x−y|^δ) over sampled pairs".into();

    // Assumption 5: lower bounds.
    let mut lower = Worst::min();
    let mut growth_c = Worst::min();
    for s in &draws {
        let f = spec.running(&s.x, s.t);
        let g = spec.terminal(&s.x);
        lower.down(f.min(g) + c.l_bound, || cat(&[&s.x, &[s.t]]));
        let xin = math::norm(&s.xi);
        if xin > 0.0 {
            let b = finite_check(spec.impulse_cost(&s.xi, s.t), "intervention_cost", &s.xi, s.t)?;
            growth_c.down((b - c.l_bound) / math::pow(xin, c.mu), || cat(&[&s.xi, &[s.t]]));
        }
    }
    let mut e5 = entry(5, "lower boundedness f, g ≥ −L and B ≥ L + c|ξ|^μ");
    e5.estimate = Some(growth_c.value);
    let margin5 = lower.value.min(growth_c.value);
    e5.margin = Some(margin5);
    let l_positive = c.l_bound > 0.0;
    if lower.value >= 0.0 && growth_c.value > 0.0 && l_positive {
        e5.status = Status::Pass;
        e5.worst_point = Some(if lower.value < growth_c.value { lower.point } else { growth_c.point });
    } else {
        e5.status = Status::Fail;
        e5.worst_point = Some(if !l_positive {
            Vec::new()
        } else if lower.value < 0.0 {
            lower.point
        } else {
            growth_c.point
        });
        if !l_positive {
            e5.note = "declared L_bound must be positive; ".into();
        }
    }
    e5.note.push_str("estimate is the sampled c = min (B(ξ,t) − L)/|ξ|^μ");

    // Assumption 6: monotone in time, subadditive with slack K.
    let mut mono = Worst::min();
    let mut slack = Worst::min();
    for s in &draws {
        let early = spec.impulse_cost(&s.xi, s.t);
        let late = spec.impulse_cost(&s.xi, s.t2);
        mono.down(early - late, || cat(&[&s.xi, &[s.t, s.t2]]));
        for eta in [&s.eta, &s.eta_collinear] {
            let sum: Vec<f64> = s.xi.iter().zip(eta.iter()).map(|(a, b)| a + b).collect();
            let v = spec.impulse_cost(&s.xi, s.t) + spec.impulse_cost(eta, s.t) - spec.impulse_cost(&sum, s.t);
            slack.down(v, || cat(&[&s.xi, eta, &[s.t]]));
        }
    }
    let mut e6 = entry(6, "monotonicity and subadditivity of B");
    e6.estimate = Some(slack.value);
    let tol6 = 1e-12 * (1.0 + math::abs(c.k));
    let margin6 = (slack.value - c.k).min(mono.value);
    e6.margin = Some(margin6);
    if mono.value < -tol6 {
        e6.status = Status::Fail;
        e6.worst_point = Some(mono.point);
        e6.note = "B increases in time at the witness (ξ, s, t)".into();
    } else if slack.value < c.k - tol6 {
        e6.status = Status::Fail;
        e6.worst_point = Some(slack.point);
        e6.note = format!("B(ξ+η) + K > B(ξ) + B(η) at the witness (ξ, η, t); sampled slack {}", slack.value);
    } else {
        e6.worst_point = Some(slack.point);
        e6.note = "estimate is the sampled slack min B(ξ)+B(η)−B(ξ+η)".into();
    }

    // Assumption 7: dominance (deterministic).
    let mut e7 = entry(7, "dominance γ + δ < μ, ν ≤ μ");
    e7.sampled = false;
    let m7 = (c.mu - c.gamma - c.delta).min(c.mu - c.nu);
    e7.margin = Some(m7);
    e7.estimate = Some(c.gamma + c.delta);
    if c.gamma + c.delta >= c.mu || c.nu > c.mu {
        e7.status = Status::Fail;
        e7.worst_point = Some(vec![c.gamma, c.delta, c.mu, c.nu]);
        e7.note = "witness is (γ, δ, μ, ν)".into();
    }

    // Assumption 8: no terminal impulse.
    let mut term = Worst::min();
    for s in &draws {
        let v = spec.terminal(&s.y) + spec.impulse_cost(&s.xi, spec.horizon) - spec.terminal(&s.x);
        term.down(v, || cat(&[&s.x, &s.xi]));
    }
    let mut e8 = entry(8, "no terminal impulse g(x) ≤ g(x+ξ) + B(ξ,T)");
    e8.estimate = Some(term.value);
    e8.margin = Some(term.value);
    e8.status = if term.value >= -1e-12 { Status::Pass } else { Status::Fail };
    e8.worst_point = Some(term.point);

    // Assumption 9: integrability of the jump measure.
    let mut e9 = entry(9, "jump measure integrability");
    if spec.jumps.is_empty() {
        e9.status = Status::Skipped;
        e9.note = "no jumps".into();
    } else {
        let mut integ = Worst::max();
        for s in &draws {
            let mut acc = small_second;
            for k in 0..spec.jumps.atoms.len() {
                let lam = spec.atom_into(k, &s.x, s.t, &mut z1);
                if !lam.is_finite() || lam < 0.0 {
                    integ.up(f64::INFINITY, || cat(&[&s.x, &[s.t]]));
                }
                let zn = math::norm(&z1);
                acc += lam * if zn < 1.0 { zn * zn } else { math::pow(zn, c.gamma + c.delta) };
            }
            integ.up(acc, || cat(&[&s.x, &[s.t]]));
        }
        e9.estimate = Some(integ.value);
        e9.margin = c.c_cap.map(|cap| cap - integ.value);
        e9.status = if integ.value <= cap { Status::Pass } else { Status::Fail };
        e9.worst_point = Some(integ.point);
        e9.note = "max of ∫_{|z|<1}|z|²π + ∫_{|z|≥1}|z|^(γ+δ)π; also fails on a negative rate".into();
    }

    // Assumption 10: order-δ small jumps.
    let mut e10 = entry(10, "order-δ nonlocal operator");
    if spec.jumps.is_empty() {
        e10.status = Status::Skipped;
        e10.note = "no jumps".into();
    } else {
        let small_delta = spec.jumps.small.as_ref().map(|sj| sj.radial_moment(c.delta, 256)).unwrap_or(0.0);
        let mut order = Worst::max();
        for s in &draws {
            let mut acc = small_delta;
            for k in 0..spec.jumps.atoms.len() {
                let lam = spec.atom_into(k, &s.x, s.t, &mut z1);
                let zn = math::norm(&z1);
                if zn < 1.0 {
                    acc += lam * math::pow(zn, c.delta);
                }
            }
            order.up(acc, || cat(&[&s.x, &[s.t]]));
        }
        let bound = spec.jumps.order_delta_bound;
        e10.estimate = Some(order.value);
        e10.margin = Some(bound - order.value);
        e10.status = if order.value <= bound { Status::Pass } else { Status::Fail };
        e10.worst_point = Some(order.point);
        e10.note = "∫_{|z|<1}|z|^δ π by graded Gauss–Legendre quadrature; compared with order_delta_bound".into();
    }

    // Assumption 11: continuity of π in weighted total variation.
    let mut e11 = entry(11, "continuity of π in weighted total variation");
    if spec.jumps.is_empty() {
        e11.status = Status::Skipped;
        e11.note = "no jumps".into();
    } else if spec.jumps.atoms.is_empty() {
        e11.estimate = Some(0.0);
        e11.margin = Some(0.0);
        e11.note = "small-jump density does not depend on (x,t)".into();
    } else {
        let weight = |z: &[f64]| {
            let r = math::norm(z);
            math::pow(r, c.gamma) + math::pow(r, c.delta)
        };
        let mut tv = Worst::max();
        let mut scale: f64 = 0.0;
        for s in &draws {
            let mut acc = 0.0;
            for k in 0..spec.jumps.atoms.len() {
                let l1 = spec.atom_into(k, &s.x, s.t, &mut z1);
                let l2 = spec.atom_into(k, &s.near, s.t, &mut z2);
                scale = scale.max(l1 * weight(&z1));
                if z1 == z2 {
                    acc += math::abs(l1 - l2) * weight(&z1);
                } else {
                    acc += l1 * weight(&z1) + l2 * weight(&z2);
                }
            }
            tv.up(acc, || cat(&[&s.x, &s.near, &[s.t]]));
        }
        let tol = 1e-2 * (1.0 + scale);
        e11.estimate = Some(tv.value);
        e11.margin = Some(tol - tv.value);
        e11.status = if tv.value <= tol { Status::Pass } else { Status::Fail };
        e11.worst_point = Some(tv.point);
        e11.note = "weighted TV distance between π at x and at a point 1e-3 box widths away".into();
    }

    Ok(AssumptionReport { samples, seed, entries: vec![e2, e3, e4, e5, e6, e7, e8, e9, e10, e11] })
}
