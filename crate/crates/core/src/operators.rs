//! Discrete local operator `L`, nonlocal operator `I` and intervention
//! operator `M` on a tensor grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::OperatorError;
use crate::exec::{Executor, Sequential};
use crate::grid::{BoxRegion, Extension, Field, Grid, ImpulseMap};
use crate::math;
use crate::model::ProblemSpec;
use crate::sparse::Csr;

/// Default number of radial quadrature nodes for the small-jump density.
pub const DEFAULT_QUADRATURE_NODES: usize = 64;

fn coeff_err(spec: &ProblemSpec, x: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>), OperatorError> {
    let c = spec.eval_coeffs(x, t)?;
    Ok((c.b, c.a))
}

/// Assembles `L̂` for all nodes at time `t` (original time).
///
/// Interior rows: central second differences, the 7-point mixed stencil whose
/// orientation follows the sign of `a_ij`, and first differences upwinded
/// with the drift. Boundary rows reuse the stencil of the nearest interior
/// node for second derivatives and one-sided inward differences for the
/// first.
pub fn assemble_l(spec: &ProblemSpec, grid: &Grid, t: f64) -> Result<Csr, OperatorError> {
    grid.check()?;
    let n = grid.dim();
    let len = grid.len();
    let strides = grid.strides();
    let h: Vec<f64> = grid.axes.iter().map(|a| a.h()).collect();
    let mut out = Csr::with_capacity(len, len * (1 + 2 * n + 2 * n * n));
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    let mut row: Vec<(usize, f64)> = Vec::new();
    for node in 0..len {
        grid.multi_into(node, &mut idx);
        grid.coords_into(node, &mut x);
        let (b, a) = coeff_err(spec, &x, t)?;
        // stencil centre for second derivatives
        let mut centre = node;
        for i in 0..n {
            let c = idx[i].clamp(1, grid.axes[i].count - 2);
            centre = centre + c * strides[i] - idx[i] * strides[i];
        }
        row.push((node, spec.discount));
        for i in 0..n {
            let s = strides[i];
            let w = a[i * n + i] / (h[i] * h[i]);
            row.push((centre - s, -w));
            row.push((centre, 2.0 * w));
            row.push((centre + s, -w));
        }
        for i in 0..n {
            for j in i + 1..n {
                let aij = a[i * n + j];
                if aij == 0.0 {
                    continue;
                }
                // −2 a_ij D_ij u
                let w = -2.0 * aij / (2.0 * h[i] * h[j]);
                let (si, sj) = (strides[i], strides[j]);
                if aij > 0.0 {
                    row.push((centre, 2.0 * w));
                    row.push((centre + si + sj, w));
                    row.push((centre - si - sj, w));
                } else {
                    row.push((centre, -2.0 * w));
                    row.push((centre + si - sj, -w));
                    row.push((centre - si + sj, -w));
                }
                let edge = if aij > 0.0 { -w } else { w };
                for k in [centre + si, centre - si, centre + sj, centre - sj] {
                    row.push((k, edge));
                }
            }
        }
        for i in 0..n {
            let s = strides[i];
            let bi = b[i];
            let forward = if idx[i] == 0 {
                true
            } else if idx[i] + 1 == grid.axes[i].count {
                false
            } else {
                bi > 0.0
            };
            if bi == 0.0 {
                continue;
            }
            // −b_i D_i u
            if forward {
                row.push((node + s, -bi / h[i]));
                row.push((node, bi / h[i]));
            } else {
                row.push((node, -bi / h[i]));
                row.push((node - s, bi / h[i]));
            }
        }
        out.push_row(&mut row);
    }
    Ok(out)
}

/// `(L̂u)` at every node.
pub fn apply_l(u: &[f64], spec: &ProblemSpec, grid: &Grid, t: f64) -> Result<Field, OperatorError> {
    grid.check_field(u)?;
    Ok(assemble_l(spec, grid, t)?.mul(u))
}

/// Central-difference gradient of `phi` at node `flat` (one-sided on the
/// boundary ring).
pub fn gradient_at(grid: &Grid, phi: &[f64], flat: usize, out: &mut [f64]) {
    let strides_n = grid.dim();
    let mut rest = flat;
    let mut idx = [0usize; 8];
    for i in (0..strides_n).rev() {
        let c = grid.axes[i].count;
        idx[i] = rest % c;
        rest /= c;
    }
    let mut stride = 1;
    for i in (0..strides_n).rev() {
        let a = &grid.axes[i];
        let h = a.h();
        out[i] = if idx[i] == 0 {
            (phi[flat + stride] - phi[flat]) / h
        } else if idx[i] + 1 == a.count {
            (phi[flat] - phi[flat - stride]) / h
        } else {
            (phi[flat + stride] - phi[flat - stride]) / (2.0 * h)
        };
        stride *= a.count;
    }
}

/// Small-jump quadrature: jump vectors `z = s d_j` with masses `w_j ρ(s_q) ω_q`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallJumpRule {
    pub jumps: Vec<(Vec<f64>, f64)>,
}

impl SmallJumpRule {
    pub fn new(spec: &ProblemSpec, nodes: usize) -> Self {
        let mut jumps = Vec::new();
        if let Some(sj) = &spec.jumps.small {
            for (s, m) in sj.radial_masses(nodes) {
                for (d, w) in &sj.directions {
                    if m * w != 0.0 {
                        jumps.push((d.iter().map(|v| v * s).collect(), m * w));
                    }
                }
            }
        }
        SmallJumpRule { jumps }
    }

    pub fn total_mass(&self) -> f64 {
        self.jumps.iter().map(|j| j.1).sum()
    }
}

/// `(Îu)` at every node: `I¹_θ` on `gradient_source` for small jumps with
/// `|z| < θ`, everything else on `u`; the compensator uses the gradient of
/// `gradient_source` for jumps with `|z| < 1`.
pub fn apply_i(
    u: &[f64],
    spec: &ProblemSpec,
    grid: &Grid,
    t: f64,
    theta: f64,
    gradient_source: &[f64],
) -> Result<Field, OperatorError> {
    let rule = SmallJumpRule::new(spec, DEFAULT_QUADRATURE_NODES);
    apply_i_with(&Sequential, u, spec, grid, t, theta, gradient_source, &rule)
}

#[allow(clippy::too_many_arguments)]
pub fn apply_i_with<E: Executor>(
    exec: &E,
    u: &[f64],
    spec: &ProblemSpec,
    grid: &Grid,
    t: f64,
    theta: f64,
    gradient_source: &[f64],
    rule: &SmallJumpRule,
) -> Result<Field, OperatorError> {
    grid.check_field(u)?;
    grid.check_field(gradient_source)?;
    let n = grid.dim();
    if spec.jumps.is_empty() {
        return Ok(vec![0.0; u.len()]);
    }
    let ext = Extension::new(grid, spec);
    let results = exec.map(u.len(), |node| -> Result<f64, OperatorError> {
        let mut x = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut scratch = vec![0.0; n];
        let mut grad = vec![0.0; n];
        grid.coords_into(node, &mut x);
        gradient_at(grid, gradient_source, node, &mut grad);
        let ux = u[node];
        let px = gradient_source[node];
        let mut acc = 0.0;
        for k in 0..spec.jumps.atoms.len() {
            let lam = spec.atom_into(k, &x, t, &mut z);
            if !lam.is_finite() || z.iter().any(|v| !v.is_finite()) {
                return Err(OperatorError::Model(crate::error::ModelError::NonFinite {
                    what: "jump atom".into(),
                    x: x.clone(),
                    t,
                }));
            }
            if lam == 0.0 {
                continue;
            }
            for i in 0..n {
                y[i] = x[i] + z[i];
            }
            let zn = math::norm(&z);
            let mut term = ext.eval(u, &y, &mut scratch)? - ux;
            if zn < 1.0 {
                term -= math::dot(&grad, &z);
            }
            acc += lam * term;
        }
        for (zj, w) in &rule.jumps {
            for i in 0..n {
                y[i] = x[i] + zj[i];
            }
            let local = math::norm(zj) < theta;
            let (field, base) = if local { (gradient_source, px) } else { (u, ux) };
            let term = ext.eval(field, &y, &mut scratch)? - base - math::dot(&grad, zj);
            acc += w * term;
        }
        Ok(acc)
    });
    results.into_iter().collect()
}

/// `I¹_θ[φ] + I²_θ[u]` at an arbitrary point with `φ` given analytically.
#[allow(clippy::too_many_arguments)]
pub fn nonlocal_split_at(
    spec: &ProblemSpec,
    grid: &Grid,
    rule: &SmallJumpRule,
    x: &[f64],
    t: f64,
    theta: f64,
    phi: &dyn Fn(&[f64]) -> f64,
    dphi: &[f64],
    u: &[f64],
) -> Result<f64, OperatorError> {
    let n = grid.dim();
    let ext = Extension::new(grid, spec);
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let ux = ext.eval(u, x, &mut scratch)?;
    let px = phi(x);
    let mut acc = 0.0;
    let term_for = |z: &[f64], y: &[f64], scratch: &mut [f64]| -> Result<f64, OperatorError> {
        let zn = math::norm(z);
        let comp = if zn < 1.0 { math::dot(dphi, z) } else { 0.0 };
        Ok(if zn < theta { phi(y) - px - comp } else { ext.eval(u, y, scratch)? - ux - comp })
    };
    for k in 0..spec.jumps.atoms.len() {
        let lam = spec.atom_into(k, x, t, &mut z);
        for i in 0..n {
            y[i] = x[i] + z[i];
        }
        acc += lam * term_for(&z, &y, &mut scratch)?;
    }
    for (zj, w) in &rule.jumps {
        for i in 0..n {
            y[i] = x[i] + zj[i];
        }
        acc += w * term_for(zj, &y, &mut scratch)?;
    }
    Ok(acc)
}

/// Grid-aligned candidate impulses, ordered by `|ξ|` then lexicographically.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSet {
    /// Offsets in node units.
    pub offsets: Vec<Vec<isize>>,
    pub xi: Vec<Vec<f64>>,
}

impl ShiftSet {
    /// All nonzero grid shifts with `ξ` inside `search`.
    pub fn new(grid: &Grid, search: &BoxRegion) -> Self {
        let n = grid.dim();
        let ranges: Vec<(isize, isize)> = (0..n)
            .map(|i| {
                let a = &grid.axes[i];
                let h = a.h();
                let span = (a.count - 1) as isize;
                let lo = (math::ceil(search.lo[i] / h - 1e-9) as isize).max(-span);
                let hi = (math::floor(search.hi[i] / h + 1e-9) as isize).min(span);
                (lo, hi)
            })
            .collect();
        let mut offsets = Vec::new();
        if ranges.iter().any(|(lo, hi)| lo > hi) {
            return ShiftSet { offsets, xi: Vec::new() };
        }
        let mut cur: Vec<isize> = ranges.iter().map(|r| r.0).collect();
        loop {
            if cur.iter().any(|&k| k != 0) {
                offsets.push(cur.clone());
            }
            let mut i = n;
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                if cur[i] < ranges[i].1 {
                    cur[i] += 1;
                    break;
                }
                cur[i] = ranges[i].0;
                if i == 0 {
                    i = usize::MAX;
                    break;
                }
            }
            if i == usize::MAX || n == 0 {
                break;
            }
        }
        let to_xi = |o: &Vec<isize>| -> Vec<f64> {
            o.iter().enumerate().map(|(i, &k)| k as f64 * grid.axes[i].h()).collect()
        };
        let mut pairs: Vec<(Vec<isize>, Vec<f64>)> = offsets.into_iter().map(|o| (to_xi(&o), o)).map(|(x, o)| (o, x)).collect();
        pairs.sort_by(|a, b| {
            let na = math::norm(&a.1);
            let nb = math::norm(&b.1);
            na.partial_cmp(&nb)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then_with(|| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal))
        });
        let (offsets, xi) = pairs.into_iter().unzip();
        ShiftSet { offsets, xi }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// `B(ξ, t)` for every shift.
    pub fn costs(&self, spec: &ProblemSpec, t: f64) -> Result<Vec<f64>, OperatorError> {
        self.xi
            .iter()
            .map(|xi| {
                let b = spec.impulse_cost(xi, t);
                if b.is_finite() {
                    Ok(b)
                } else {
                    Err(OperatorError::Model(crate::error::ModelError::NonFinite {
                        what: "intervention_cost".into(),
                        x: xi.clone(),
                        t,
                    }))
                }
            })
            .collect()
    }
}

/// Options for the intervention-operator search.
#[derive(Debug, Clone, PartialEq)]
pub struct MSearch {
    pub search: BoxRegion,
    /// Golden-section refinement around the coarse argmin (off-grid `ξ`).
    pub refine: bool,
}

impl MSearch {
    /// Every shift that can keep some node inside the grid.
    pub fn full(grid: &Grid) -> Self {
        let w: Vec<f64> = grid.axes.iter().map(|a| a.hi - a.lo).collect();
        MSearch { search: BoxRegion::new(w.iter().map(|v| -v).collect(), w), refine: false }
    }
}

/// `(M̂u, Ξ̂)`: per node the minimum of `u(x+ξ) + B(ξ,t)` over feasible shifts.
pub fn apply_m(
    u: &[f64],
    spec: &ProblemSpec,
    grid: &Grid,
    t: f64,
    search: &MSearch,
) -> Result<(Field, ImpulseMap), OperatorError> {
    let shifts = ShiftSet::new(grid, &search.search);
    apply_m_with(&Sequential, u, spec, grid, t, search, &shifts)
}

pub fn apply_m_with<E: Executor>(
    exec: &E,
    u: &[f64],
    spec: &ProblemSpec,
    grid: &Grid,
    t: f64,
    search: &MSearch,
    shifts: &ShiftSet,
) -> Result<(Field, ImpulseMap), OperatorError> {
    grid.check_field(u)?;
    let costs = shifts.costs(spec, t)?;
    let n = grid.dim();
    let strides = grid.strides();
    let counts: Vec<isize> = grid.axes.iter().map(|a| a.count as isize).collect();
    let results = exec.map(u.len(), |node| -> Option<(f64, Vec<f64>)> {
        let mut idx = [0isize; 8];
        let mut rest = node;
        for i in (0..n).rev() {
            idx[i] = (rest % counts[i] as usize) as isize;
            rest /= counts[i] as usize;
        }
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        'shift: for (s, off) in shifts.offsets.iter().enumerate() {
            let mut dest = node as isize;
            for i in 0..n {
                let k = idx[i] + off[i];
                if k < 0 || k >= counts[i] {
                    continue 'shift;
                }
                dest += off[i] * strides[i] as isize;
            }
            let v = u[dest as usize] + costs[s];
            if v < best {
                best = v;
                arg = s;
            }
        }
        if arg == usize::MAX {
            return None;
        }
        let mut xi = shifts.xi[arg].clone();
        if search.refine {
            refine(u, spec, grid, t, node, &mut xi, &mut best);
        }
        Some((best, xi))
    });
    let mut m = Vec::with_capacity(u.len());
    let mut map = Vec::with_capacity(u.len());
    for (node, r) in results.into_iter().enumerate() {
        match r {
            Some((v, xi)) => {
                m.push(v);
                map.push(Some(xi));
            }
            None => return Err(OperatorError::EmptyShiftSet { node }),
        }
    }
    Ok((m, map))
}

/// One golden-section pass per axis on the interpolated objective.
fn refine(u: &[f64], spec: &ProblemSpec, grid: &Grid, t: f64, node: usize, xi: &mut [f64], best: &mut f64) {
    let n = grid.dim();
    let x = grid.coords(node);
    let bounds = grid.bounds();
    let mut y = vec![0.0; n];
    let mut trial = xi.to_vec();
    let ratio = 0.5 * (math::sqrt(5.0) - 1.0);
    for axis in 0..n {
        let h = grid.axes[axis].h();
        let mut lo = (xi[axis] - h).max(bounds.lo[axis] - x[axis]);
        let mut hi = (xi[axis] + h).min(bounds.hi[axis] - x[axis]);
        let mut f = |v: f64, trial: &mut Vec<f64>| {
            trial[axis] = v;
            if trial.iter().all(|c| *c == 0.0) {
                return f64::INFINITY;
            }
            for i in 0..n {
                y[i] = x[i] + trial[i];
            }
            grid.interpolate(u, &y) + spec.impulse_cost(trial, t)
        };
        for _ in 0..40 {
            let a = hi - ratio * (hi - lo);
            let b = lo + ratio * (hi - lo);
            if f(a, &mut trial) <= f(b, &mut trial) {
                hi = b;
            } else {
                lo = a;
            }
        }
        let mid = 0.5 * (lo + hi);
        let v = f(mid, &mut trial);
        if v < *best {
            *best = v;
            xi[axis] = mid;
        }
        trial[axis] = xi[axis];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SymbolSet;
    use crate::grid::Axis;
    use crate::model::{CoefficientFn, JumpAtom, SmallJumps};
    use crate::testutil::simple_spec;
    use proptest::prelude::*;

    fn grid1(lo: f64, hi: f64, count: usize) -> Grid {
        Grid::new(vec![Axis::new(lo, hi, count)], 2, 1.0).unwrap()
    }

    fn field(g: &Grid, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..g.len()).map(|i| f(&g.coords(i))).collect()
    }

    fn expr(src: &str, dim: usize) -> CoefficientFn {
        CoefficientFn::expr(src, &SymbolSet::state(dim)).unwrap()
    }

    #[test]
    fn l_reference_values() {
        let g = grid1(-2.0, 2.0, 41);
        let mut spec = simple_spec(1);
        spec.diffusion[0][0] = expr("sqrt(2)", 1);
        let lu = apply_l(&field(&g, |x| x[0] * x[0]), &spec, &g, 0.0).unwrap();
        for v in &lu {
            assert!((v + 2.0).abs() < 1e-10, "{v}");
        }

        spec.discount = 1.0;
        spec.diffusion[0][0] = CoefficientFn::Constant(1.7);
        let lu = apply_l(&vec![5.0; g.len()], &spec, &g, 0.0).unwrap();
        assert!(lu.iter().all(|v| (v - 5.0).abs() < 1e-10));

        let mut spec = simple_spec(1);
        spec.diffusion[0][0] = CoefficientFn::Constant(0.0);
        spec.drift[0] = CoefficientFn::Constant(1.0);
        let lu = apply_l(&field(&g, |x| x[0]), &spec, &g, 0.0).unwrap();
        assert!(lu.iter().all(|v| (v + 1.0).abs() < 1e-10));
    }

    #[test]
    fn l_is_exact_on_2d_quadratics_with_cross_terms() {
        for sign in [1.0, -1.0] {
            let g = Grid::new(vec![Axis::new(-1.0, 1.0, 11), Axis::new(-2.0, 1.0, 13)], 2, 1.0).unwrap();
            let mut spec = simple_spec(2);
            spec.diffusion = vec![
                vec![CoefficientFn::Constant(1.0), CoefficientFn::Constant(0.0)],
                vec![CoefficientFn::Constant(0.6 * sign), CoefficientFn::Constant(0.9)],
            ];
            spec.drift = vec![CoefficientFn::Constant(0.3), CoefficientFn::Constant(-0.7)];
            spec.discount = 0.2;
            let q = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[0] + 1.5 * x[0] * x[1] - x[1] * x[1];
            let c = spec.eval_coeffs(&[0.0, 0.0], 0.0).unwrap();
            let lu = apply_l(&field(&g, q), &spec, &g, 0.0).unwrap();
            for node in 0..g.len() {
                let x = g.coords(node);
                let hess = [1.0, 1.5, 1.5, -2.0];
                let grad = [2.0 + x[0] + 1.5 * x[1], -1.0 + 1.5 * x[0] - 2.0 * x[1]];
                let mut expect = 0.2 * q(&x) - c.b[0] * grad[0] - c.b[1] * grad[1];
                for k in 0..4 {
                    expect -= c.a[k] * hess[k];
                }
                if g.is_boundary(node) {
                    continue;
                }
                // first differences are exact only on the linear part
                // one-sided differences carry exactly h/2·∂ᵢᵢq
                let upwind: f64 = (0..2).map(|i| c.b[i] * c.b[i].signum() * g.axes[i].h() / 2.0 * hess[3 * i]).sum();
                assert!((lu[node] - expect + upwind).abs() <= 1e-10, "{} vs {}", lu[node], expect - upwind);
            }
        }
    }

    #[test]
    fn l_converges_at_second_order_on_smooth_fields() {
        let mut spec = simple_spec(1);
        spec.diffusion[0][0] = expr("1 + 0.2*x[0]^2", 1);
        let mut errs = Vec::new();
        let mut hs = Vec::new();
        for count in [21, 41, 81, 161] {
            let g = grid1(-1.0, 1.0, count);
            let u = field(&g, |x| libm::sin(x[0]));
            let lu = apply_l(&u, &spec, &g, 0.0).unwrap();
            let mut err: f64 = 0.0;
            for node in 0..g.len() {
                if g.is_boundary(node) {
                    continue;
                }
                let x = g.coords(node)[0];
                let s = 1.0 + 0.2 * x * x;
                err = err.max((lu[node] - 0.5 * s * s * libm::sin(x)).abs());
            }
            errs.push(err.ln());
            hs.push(g.axes[0].h().ln());
        }
        let mx = hs.iter().sum::<f64>() / 4.0;
        let my = errs.iter().sum::<f64>() / 4.0;
        let slope = hs.iter().zip(&errs).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
            / hs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        assert!(slope >= 1.8, "observed order {slope}");
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let g = Grid { axes: vec![Axis::new(0.0, 1.0, 2)], t_count: 2, horizon: 1.0 };
        assert!(matches!(
            apply_l(&[0.0, 0.0], &simple_spec(1), &g, 0.0),
            Err(OperatorError::GridTooCoarse { .. })
        ));
    }

    #[test]
    fn i_reference_values() {
        let g = grid1(-3.0, 3.0, 61);
        let mut spec = simple_spec(1);
        spec.terminal_cost = expr("x[0]^2", 1);
        spec.jumps.atoms.push(JumpAtom { intensity: CoefficientFn::Constant(2.0), size: vec![CoefficientFn::Constant(1.0)] });
        let u = field(&g, |x| x[0] * x[0]);
        let iu = apply_i(&u, &spec, &g, 0.0, 0.0, &u).unwrap();
        for node in 0..g.len() {
            let x = g.coords(node)[0];
            assert!((iu[node] - 2.0 * (2.0 * x + 1.0)).abs() < 1e-10, "{x}");
        }
        spec.terminal_cost = CoefficientFn::Constant(0.0);
        let c = vec![3.5; g.len()];
        assert!(apply_i(&c, &spec, &g, 0.0, 0.0, &c).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn compensated_small_jumps_vanish_on_linear_fields() {
        let g = Grid::new(vec![Axis::new(-2.0, 2.0, 21), Axis::new(-1.0, 1.0, 11)], 2, 1.0).unwrap();
        let mut spec = simple_spec(2);
        spec.terminal_cost = CoefficientFn::expr("0.3 - 1.2*x[0] + 2*x[1]", &SymbolSet::terminal(2)).unwrap();
        spec.jumps.small = Some(SmallJumps {
            density: CoefficientFn::expr("s^-1.4", &SymbolSet::radial()).unwrap(),
            cutoff: 0.8,
            directions: SmallJumps::axis_directions(2),
        });
        let u = field(&g, |x| 0.3 - 1.2 * x[0] + 2.0 * x[1]);
        for theta in [0.0, 0.3, 1.0] {
            let iu = apply_i(&u, &spec, &g, 0.0, theta, &u).unwrap();
            assert!(iu.iter().all(|v| v.abs() <= 1e-8), "{:?}", iu.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
    }

    #[test]
    fn far_atom_is_an_error() {
        let g = grid1(-1.0, 1.0, 11);
        let mut spec = simple_spec(1);
        spec.jumps.atoms.push(JumpAtom { intensity: CoefficientFn::Constant(1.0), size: vec![CoefficientFn::Constant(5.0)] });
        let u = vec![0.0; g.len()];
        assert!(matches!(apply_i(&u, &spec, &g, 0.0, 0.0, &u), Err(OperatorError::BeyondExtension { .. })));
    }

    #[test]
    fn m_reference_values() {
        let g = grid1(-2.0, 2.0, 81);
        let h = g.axes[0].h();
        let mut spec = simple_spec(1);
        spec.intervention_cost = CoefficientFn::expr("1 + xi[0]^2", &SymbolSet::impulse(1)).unwrap();
        let u = field(&g, |x| x[0] * x[0]);
        let (m, map) = apply_m(&u, &spec, &g, 0.0, &MSearch::full(&g)).unwrap();
        for node in 0..g.len() {
            let x = g.coords(node)[0];
            assert!((m[node] - (1.0 + x * x / 2.0)).abs() <= 2.0 * h * h, "{x}");
            let xi = map[node].as_ref().unwrap()[0];
            if x == 0.0 {
                // ξ = 0 is not an impulse
                assert_eq!(xi.abs(), h);
                continue;
            }
            assert!((xi + x / 2.0).abs() <= h / 2.0 + 1e-9);
        }

        let u = field(&g, |x| x[0]);
        let search = MSearch { search: BoxRegion::new(vec![-1.0], vec![1.0]), refine: false };
        let (m, map) = apply_m(&u, &spec, &g, 0.0, &search).unwrap();
        for node in 0..g.len() {
            let x = g.coords(node)[0];
            if x - 0.5 >= -2.0 {
                assert!((m[node] - (x + 0.75)).abs() < 1e-12);
                assert!((map[node].as_ref().unwrap()[0] + 0.5).abs() < 1e-12);
            }
        }

        spec.intervention_cost = CoefficientFn::expr("0.5 + abs(xi[0])", &SymbolSet::impulse(1)).unwrap();
        let (m, _) = apply_m(&vec![2.0; g.len()], &spec, &g, 0.0, &MSearch::full(&g)).unwrap();
        assert!(m.iter().all(|v| (v - 2.5 - h).abs() < 1e-12));
    }

    #[test]
    fn refinement_never_increases_m() {
        let g = grid1(-2.0, 2.0, 21);
        let mut spec = simple_spec(1);
        spec.intervention_cost = CoefficientFn::expr("1 + xi[0]^2", &SymbolSet::impulse(1)).unwrap();
        let u = field(&g, |x| x[0] * x[0]);
        let (coarse, _) = apply_m(&u, &spec, &g, 0.0, &MSearch::full(&g)).unwrap();
        let mut s = MSearch::full(&g);
        s.refine = true;
        let (fine, map) = apply_m(&u, &spec, &g, 0.0, &s).unwrap();
        for node in 0..g.len() {
            assert!(fine[node] <= coarse[node]);
            let xi = map[node].as_ref().unwrap();
            let y = g.coords(node)[0] + xi[0];
            assert!((-2.0..=2.0).contains(&y));
        }
    }

    #[test]
    fn shifts_are_ordered_for_tie_breaking() {
        let g = Grid::new(vec![Axis::new(-1.0, 1.0, 3), Axis::new(-1.0, 1.0, 3)], 2, 1.0).unwrap();
        let s = ShiftSet::new(&g, &BoxRegion::symmetric(2, 1.0));
        assert_eq!(s.len(), 8);
        assert_eq!(s.offsets[0], vec![-1, 0]);
        assert_eq!(s.offsets[1], vec![0, -1]);
        assert_eq!(s.offsets[4], vec![-1, -1]);
    }

    fn m_spec() -> ProblemSpec {
        let mut spec = simple_spec(1);
        spec.intervention_cost = CoefficientFn::expr("0.3 + abs(xi[0])^0.5 + 0.1*xi[0]", &SymbolSet::impulse(1)).unwrap();
        spec
    }

    proptest! {
        #[test]
        fn m_is_monotone_and_translation_equivariant(
            base in proptest::collection::vec(-3.0f64..3.0, 17),
            bump in proptest::collection::vec(0.0f64..1.0, 17),
            c in -5.0f64..5.0,
        ) {
            let g = grid1(-1.0, 1.0, 17);
            let spec = m_spec();
            let full = MSearch::full(&g);
            let v: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let (mu, map) = apply_m(&base, &spec, &g, 0.0, &full).unwrap();
            let (mv, _) = apply_m(&v, &spec, &g, 0.0, &full).unwrap();
            let shifted: Vec<f64> = base.iter().map(|a| a + c).collect();
            let (mc, _) = apply_m(&shifted, &spec, &g, 0.0, &full).unwrap();
            for i in 0..g.len() {
                prop_assert!(mu[i] <= mv[i]);
                prop_assert!((mc[i] - mu[i] - c).abs() <= 1e-12 * (1.0 + c.abs() + mu[i].abs()));
                // argmin self-consistency
                let xi = map[i].as_ref().unwrap();
                prop_assert!(xi[0] != 0.0);
                let dest = g.nearest(&[g.coords(i)[0] + xi[0]]);
                prop_assert!((base[dest] + spec.impulse_cost(xi, 0.0) - mu[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn diffusion_matrix_is_psd(s11 in -3.0f64..3.0, s12 in -3.0f64..3.0, s21 in -3.0f64..3.0, s22 in -3.0f64..3.0) {
            let mut spec = simple_spec(2);
            spec.diffusion = vec![
                vec![CoefficientFn::Constant(s11), CoefficientFn::Constant(s12)],
                vec![CoefficientFn::Constant(s21), CoefficientFn::Constant(s22)],
            ];
            let c = spec.eval_coeffs(&[0.1, 0.2], 0.0).unwrap();
            prop_assert_eq!(c.a[1], c.a[2]);
            prop_assert!(math::min_eigenvalue_symmetric(&c.a, 2) >= -1e-12);
        }
    }
}
