//! Compressed sparse rows, ILU(0) and preconditioned BiCGSTAB.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::SolverError;
use crate::math;

#[derive(Debug, Clone, PartialEq)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn with_capacity(n: usize, nnz: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        Csr { n, row_ptr, cols: Vec::with_capacity(nnz), vals: Vec::with_capacity(nnz) }
    }

    /// Appends the next row. Entries may repeat and come in any order; they
    /// are merged and sorted by column.
    pub fn push_row(&mut self, entries: &mut Vec<(usize, f64)>) {
        entries.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in entries.iter() {
            if c == last {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = c;
            }
        }
        self.row_ptr.push(self.cols.len());
        entries.clear();
    }

    pub fn identity(n: usize) -> Self {
        Csr { n, row_ptr: (0..=n).collect(), cols: (0..n).collect(), vals: vec![1.0; n] }
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let (c, v) = self.row(i);
            let mut s = 0.0;
            for k in 0..c.len() {
                s += v[k] * x[c[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_into(x, &mut y);
        y
    }

    pub fn diag_index(&self, i: usize) -> Option<usize> {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].binary_search(&i).ok().map(|k| a + k)
    }

    /// `self · s + diag(d)` where the sparsity pattern already contains the diagonal.
    pub fn scaled_plus_diag(&self, s: f64, d: &[f64]) -> Csr {
        let mut out = self.clone();
        for v in out.vals.iter_mut() {
            *v *= s;
        }
        for i in 0..self.n {
            let k = out.diag_index(i).expect("diagonal entry missing");
            out.vals[k] += d[i];
        }
        out
    }
}

/// Incomplete LU with the sparsity pattern of the matrix itself.
pub struct Ilu0 {
    lu: Csr,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &Csr) -> Option<Self> {
        let mut lu = a.clone();
        let n = a.n;
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            diag.push(lu.diag_index(i)?);
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let j = lu.cols[k];
                if j >= i {
                    break;
                }
                let pivot = lu.vals[diag[j]];
                if pivot == 0.0 {
                    return None;
                }
                let l = lu.vals[k] / pivot;
                lu.vals[k] = l;
                for kk in diag[j] + 1..lu.row_ptr[j + 1] {
                    let c = lu.cols[kk];
                    let p = pos[c];
                    if p != usize::MAX {
                        lu.vals[p] -= l * lu.vals[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
            if lu.vals[diag[i]] == 0.0 {
                return None;
            }
        }
        Some(Ilu0 { lu, diag })
    }

    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let lu = &self.lu;
        let n = lu.n;
        for i in 0..n {
            let mut s = r[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in self.diag[i] + 1..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s / lu.vals[self.diag[i]];
        }
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(math::abs(*x)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    math::dot(a, b)
}

/// Solves `a x = b` starting from `x`; stops when `‖b − a x‖∞ ≤ tol·max(1, ‖b‖∞)`.
pub fn bicgstab(a: &Csr, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<usize, SolverError> {
    let n = a.n;
    let pre = Ilu0::new(a);
    let precond = |r: &[f64], z: &mut [f64]| match &pre {
        Some(p) => p.apply(r, z),
        None => z.copy_from_slice(r),
    };
    let target = tol * max_abs(b).max(1.0);
    let mut r = a.mul(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    if max_abs(&r) <= target {
        return Ok(0);
    }
    let r_hat = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut y);
        a.mul_into(&y, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 {
            break;
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if max_abs(&s) <= target {
            for i in 0..n {
                x[i] += alpha * y[i];
            }
            return Ok(it);
        }
        precond(&s, &mut z);
        a.mul_into(&z, &mut t);
        let tt = dot(&t, &t);
        omega = if tt == 0.0 { 0.0 } else { dot(&t, &s) / tt };
        for i in 0..n {
            x[i] += alpha * y[i] + omega * z[i];
            r[i] = s[i] - omega * t[i];
        }
        if max_abs(&r) <= target {
            return Ok(it);
        }
        if omega == 0.0 {
            break;
        }
    }
    let mut res = a.mul(x);
    for i in 0..n {
        res[i] = b[i] - res[i];
    }
    let residual = max_abs(&res);
    if residual <= target {
        return Ok(max_iter);
    }
    Err(SolverError::LinearSolve { residual, iterations: max_iter })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplacian_2d(m: usize, shift: f64) -> Csr {
        let n = m * m;
        let mut a = Csr::with_capacity(n, 5 * n);
        let mut row = Vec::new();
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                row.push((k, 4.0 + shift));
                if i > 0 {
                    row.push((k - m, -1.0));
                }
                if i + 1 < m {
                    row.push((k + m, -1.0));
                }
                if j > 0 {
                    row.push((k - 1, -1.0));
                }
                if j + 1 < m {
                    row.push((k + 1, -1.3));
                }
                a.push_row(&mut row);
            }
        }
        a
    }

    #[test]
    fn ilu0_is_exact_for_tridiagonal() {
        let mut a = Csr::with_capacity(4, 10);
        let mut row = Vec::new();
        for i in 0..4 {
            row.push((i, 3.0));
            if i > 0 {
                row.push((i - 1, -1.0));
            }
            if i < 3 {
                row.push((i + 1, -1.5));
            }
            a.push_row(&mut row);
        }
        let b = [1.0, 2.0, 3.0, 4.0];
        let mut x = [0.0; 4];
        Ilu0::new(&a).unwrap().apply(&b, &mut x);
        let ax = a.mul(&x);
        for i in 0..4 {
            assert!((ax[i] - b[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn bicgstab_solves_nonsymmetric_system() {
        let a = laplacian_2d(20, 0.1);
        let b: Vec<f64> = (0..400).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let mut x = vec![0.0; 400];
        bicgstab(&a, &b, &mut x, 1e-10, 500).unwrap();
        let ax = a.mul(&x);
        let err = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn duplicate_entries_are_merged() {
        let mut a = Csr::with_capacity(1, 2);
        a.push_row(&mut vec![(0, 1.0), (0, 2.0)]);
        assert_eq!(a.vals, vec![3.0]);
    }
}
