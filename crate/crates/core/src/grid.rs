//! Tensor space-time mesh, node fields and the outside-box extension rule.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::OperatorError;
use crate::model::ProblemSpec;

/// One value per spatial node, row-major with the last axis fastest.
pub type Field = Vec<f64>;

/// Per-node optional impulse `ξ`; `None` means no intervention.
pub type ImpulseMap = Vec<Option<Vec<f64>>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        BoxRegion { lo, hi }
    }

    /// `[-r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Self {
        BoxRegion { lo: vec![-r; dim], hi: vec![r; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn is_nonempty(&self) -> bool {
        self.lo.len() == self.hi.len() && !self.lo.is_empty() && self.lo.iter().zip(&self.hi).all(|(a, b)| a < b)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| *v >= *a && *v <= *b)
    }

    pub fn clamp_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = x[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Axis { lo, hi, count }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    /// Node coordinate, computed the same way everywhere so that it is
    /// reproducible from the index alone.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * (i as f64) / ((self.count - 1) as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub axes: Vec<Axis>,
    /// Number of time slices including `t = 0`.
    pub t_count: usize,
    pub horizon: f64,
}

impl Grid {
    pub fn new(axes: Vec<Axis>, t_count: usize, horizon: f64) -> Result<Self, OperatorError> {
        let g = Grid { axes, t_count, horizon };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<(), OperatorError> {
        if self.axes.is_empty() {
            return Err(OperatorError::InvalidGrid("no spatial axes".into()));
        }
        for (i, a) in self.axes.iter().enumerate() {
            if a.count < 3 {
                return Err(OperatorError::GridTooCoarse { axis: i, count: a.count });
            }
            if !(a.lo < a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                return Err(OperatorError::InvalidGrid(format!("axis {i} needs lo < hi")));
            }
        }
        if self.t_count < 2 {
            return Err(OperatorError::InvalidGrid("t_count must be at least 2".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(OperatorError::InvalidGrid("horizon must be positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Number of spatial nodes.
    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.t_count - 1) as f64
    }

    /// Inverted time of slice `k`.
    pub fn time(&self, k: usize) -> f64 {
        if k + 1 == self.t_count {
            self.horizon
        } else {
            self.horizon * k as f64 / (self.t_count - 1) as f64
        }
    }

    pub fn strides(&self) -> Vec<usize> {
        let n = self.dim();
        let mut s = vec![1; n];
        for i in (0..n.saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.axes[i + 1].count;
        }
        s
    }

    pub fn bounds(&self) -> BoxRegion {
        BoxRegion { lo: self.axes.iter().map(|a| a.lo).collect(), hi: self.axes.iter().map(|a| a.hi).collect() }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (i, a) in self.axes.iter().enumerate() {
            f = f * a.count + idx[i];
        }
        f
    }

    pub fn multi_into(&self, mut flat: usize, out: &mut [usize]) {
        for i in (0..self.dim()).rev() {
            let c = self.axes[i].count;
            out[i] = flat % c;
            flat /= c;
        }
    }

    pub fn multi(&self, flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        self.multi_into(flat, &mut out);
        out
    }

    pub fn coords_into(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for i in (0..self.dim()).rev() {
            let a = &self.axes[i];
            out[i] = a.coord(rest % a.count);
            rest /= a.count;
        }
    }

    pub fn coords(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.coords_into(flat, &mut out);
        out
    }

    pub fn is_boundary(&self, flat: usize) -> bool {
        let mut rest = flat;
        for i in (0..self.dim()).rev() {
            let c = self.axes[i].count;
            let k = rest % c;
            if k == 0 || k + 1 == c {
                return true;
            }
            rest /= c;
        }
        false
    }

    /// Whether node `flat` is at least `frac` of the box width away from every
    /// lateral face.
    pub fn is_deep_interior(&self, flat: usize, frac: f64) -> bool {
        let mut rest = flat;
        for i in (0..self.dim()).rev() {
            let a = &self.axes[i];
            let x = a.coord(rest % a.count);
            let margin = frac * (a.hi - a.lo) - 1e-12 * (a.hi - a.lo);
            if x - a.lo < margin || a.hi - x < margin {
                return false;
            }
            rest /= a.count;
        }
        true
    }

    /// Index of the nearest node to `x` (coordinates clamped into the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut f = 0;
        for (i, a) in self.axes.iter().enumerate() {
            let s = ((x[i] - a.lo) / a.h()).clamp(0.0, (a.count - 1) as f64);
            let k = crate::math::round(s) as usize;
            f = f * a.count + k.min(a.count - 1);
        }
        f
    }

    /// Multilinear interpolation of `u` at `x`, which is clamped into the box.
    pub fn interpolate(&self, u: &[f64], x: &[f64]) -> f64 {
        let n = self.dim();
        assert!(n <= 8, "interpolation supports at most 8 dimensions");
        let mut strides = [1usize; 8];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.axes[i + 1].count;
        }
        let mut base = 0;
        let mut w = [0.0f64; 8];
        let mut off = [0usize; 8];
        for i in 0..n {
            let a = &self.axes[i];
            let s = ((x[i] - a.lo) / a.h()).clamp(0.0, (a.count - 1) as f64);
            let k = (crate::math::floor(s) as usize).min(a.count - 2);
            w[i] = s - k as f64;
            off[i] = strides[i];
            base += k * strides[i];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut idx = base;
            for i in 0..n {
                if corner >> i & 1 == 1 {
                    weight *= w[i];
                    idx += off[i];
                } else {
                    weight *= 1.0 - w[i];
                }
            }
            if weight != 0.0 {
                acc += weight * u[idx];
            }
        }
        acc
    }

    pub fn check_field(&self, u: &[f64]) -> Result<(), OperatorError> {
        if u.len() != self.len() {
            return Err(OperatorError::Shape { expected: self.len(), found: u.len() });
        }
        Ok(())
    }
}

/// Evaluates a field anywhere: interpolation inside the box and g-growth
/// extension `u(p) + g(y) − g(p)` with `p` the nearest box point outside.
#[derive(Clone, Copy)]
pub struct Extension<'a> {
    pub grid: &'a Grid,
    pub spec: &'a ProblemSpec,
}

impl<'a> Extension<'a> {
    pub fn new(grid: &'a Grid, spec: &'a ProblemSpec) -> Self {
        Extension { grid, spec }
    }

    /// Whether `y` is within one box width of the box on every axis.
    pub fn within_margin(&self, y: &[f64]) -> bool {
        self.grid.axes.iter().zip(y).all(|(a, v)| {
            let w = a.hi - a.lo;
            *v >= a.lo - w && *v <= a.hi + w
        })
    }

    pub fn eval(&self, u: &[f64], y: &[f64], scratch: &mut [f64]) -> Result<f64, OperatorError> {
        let bx = self.grid.axes.iter();
        let mut inside = true;
        for ((a, v), s) in bx.zip(y).zip(scratch.iter_mut()) {
            *s = v.clamp(a.lo, a.hi);
            inside &= *s == *v;
        }
        let base = self.grid.interpolate(u, scratch);
        if inside {
            return Ok(base);
        }
        if !self.within_margin(y) {
            return Err(OperatorError::BeyondExtension { point: y.to_vec() });
        }
        Ok(base + self.spec.terminal(y) - self.spec.terminal(scratch))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::SymbolSet;
    use crate::model::CoefficientFn;
    use crate::testutil::simple_spec;

    #[test]
    fn coordinates_and_indices_round_trip() {
        let g = Grid::new(vec![Axis::new(-1.0, 1.0, 5), Axis::new(0.0, 3.0, 4)], 3, 1.0).unwrap();
        assert_eq!(g.len(), 20);
        for f in 0..g.len() {
            assert_eq!(g.flat(&g.multi(f)), f);
        }
        assert_eq!(g.coords(g.flat(&[4, 3])), vec![1.0, 3.0]);
        assert_eq!(g.coords(g.flat(&[2, 1])), vec![0.0, 1.0]);
        assert!(g.is_boundary(g.flat(&[0, 2])));
        assert!(!g.is_boundary(g.flat(&[2, 2])));
        assert_eq!(g.time(2), 1.0);
        assert!(matches!(
            Grid::new(vec![Axis::new(0.0, 1.0, 2)], 3, 1.0),
            Err(OperatorError::GridTooCoarse { axis: 0, count: 2 })
        ));
    }

    #[test]
    fn interpolation_is_exact_on_multilinear_fields() {
        let g = Grid::new(vec![Axis::new(-1.0, 1.0, 5), Axis::new(0.0, 3.0, 7)], 2, 1.0).unwrap();
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let u: Vec<f64> = (0..g.len()).map(|i| f(&g.coords(i))).collect();
        for p in [[0.13, 2.9], [-1.0, 0.0], [1.0, 3.0], [0.77, 1.234]] {
            assert!((g.interpolate(&u, &p) - f(&p)).abs() < 1e-13);
        }
    }

    #[test]
    fn extension_follows_terminal_cost_growth() {
        let mut spec = simple_spec(1);
        spec.terminal_cost = CoefficientFn::expr("x[0]^2", &SymbolSet::terminal(1)).unwrap();
        let g = Grid::new(vec![Axis::new(-2.0, 2.0, 41)], 2, 1.0).unwrap();
        let u: Vec<f64> = (0..g.len()).map(|i| g.coords(i)[0].powi(2) + 2.0).collect();
        let ext = Extension::new(&g, &spec);
        let mut s = [0.0];
        assert!((ext.eval(&u, &[3.0], &mut s).unwrap() - 11.0).abs() < 1e-12);
        assert!((ext.eval(&u, &[-2.5], &mut s).unwrap() - 8.25).abs() < 1e-12);
        assert!(ext.eval(&u, &[6.5], &mut s).is_err());
    }

    #[test]
    fn deep_interior_and_nearest() {
        let g = Grid::new(vec![Axis::new(-2.0, 2.0, 201)], 2, 1.0).unwrap();
        let deep = (0..g.len()).filter(|&i| g.is_deep_interior(i, 0.05)).count();
        // nodes with |x| ≤ 1.8
        assert_eq!(deep, 181);
        assert_eq!(g.coords(g.nearest(&[0.504])), vec![0.5]);
        assert_eq!(g.nearest(&[10.0]), 200);
    }
}
