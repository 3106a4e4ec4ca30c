//! Brute-force trinomial-lattice dynamic program for the 1-D controlled
//! example: dX = dW (A = 1/2), f = x², g = 0, B(ξ) = 0.5 + 0.1|ξ|, T = 1.
//!
//! Spatial step h = 0.02 on [−4.5, 4.5] with reflection at the ends,
//! impulse destinations restricted to the grid points of [−3, 3] (the shift
//! set of the 301-node solver grid), at most one impulse per lattice step.

pub struct Lattice {
    pub h: f64,
    pub lo: f64,
    /// `values[k][i]`: value at time `k·dt_out`, node `lo + i h`.
    pub snapshots: Vec<(f64, Vec<f64>, Vec<bool>)>,
}

pub fn controlled_oracle(steps: usize, snapshot_times: &[f64]) -> Lattice {
    let h = 0.02;
    let lo = -4.5;
    let n = 451;
    let horizon = 1.0;
    let dt = horizon / steps as f64;
    let sigma2 = 1.0;
    let p = sigma2 * dt / (2.0 * h * h);
    assert!(2.0 * p <= 1.0);
    let x: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
    // destinations: nodes with |x| ≤ 3
    let dest: Vec<usize> = (0..n).filter(|&i| x[i].abs() <= 3.0 + 1e-9).collect();
    let mut v = vec![0.0; n];
    let mut snaps = Vec::new();
    let mut c = vec![0.0; n];
    for k in (0..steps).rev() {
        let t = k as f64 * dt;
        for i in 0..n {
            let up = v[if i + 1 < n { i + 1 } else { i - 1 }];
            let down = v[if i > 0 { i - 1 } else { i + 1 }];
            c[i] = x[i] * x[i] * dt + p * up + p * down + (1.0 - 2.0 * p) * v[i];
        }
        let mut act = vec![false; n];
        for i in 0..n {
            let mut best = c[i];
            for &j in &dest {
                if j == i {
                    continue;
                }
                let cand = c[j] + 0.5 + 0.1 * (x[j] - x[i]).abs();
                if cand < best {
                    best = cand;
                    act[i] = true;
                }
            }
            v[i] = best;
        }
        for &s in snapshot_times {
            if (t - s).abs() < dt / 2.0 {
                snaps.push((s, v.clone(), act.clone()));
            }
        }
    }
    Lattice { h, lo, snapshots: snaps }
}

impl Lattice {
    pub fn value(&self, x: f64, t: f64) -> f64 {
        let (_, v, _) = self.snapshots.iter().find(|s| (s.0 - t).abs() < 1e-12).expect("snapshot");
        let i = ((x - self.lo) / self.h).round() as usize;
        v[i]
    }

    pub fn action(&self, x: f64, t: f64) -> bool {
        let (_, _, a) = self.snapshots.iter().find(|s| (s.0 - t).abs() < 1e-12).expect("snapshot");
        let i = ((x - self.lo) / self.h).round() as usize;
        a[i]
    }
}
