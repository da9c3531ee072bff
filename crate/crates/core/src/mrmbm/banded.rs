//! Banded LU with partial pivoting, and the stationary solve built on it.

use std::collections::VecDeque;

use serde::Serialize;

use super::chain::{DiscretizedChain, SparseGenerator};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
const MAX_REFINEMENTS: usize = 5;

/// Square matrix with `kl` sub- and `ku` super-diagonals. Rows keep
/// `kl` extra slots on the right for pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j <= i + self.kl + self.ku);
        i * self.width + (j + self.kl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` at `(i, j)`, which must lie inside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.kl + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place factorization.
    pub fn factor(mut self) -> Result<BandLu> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut lower = vec![0.0; n * kl.max(1)];
        let scale = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > scale * f64::EPSILON * n as f64) {
                return Err(Error::Numerical(format!("singular banded system at column {k}")));
            }
            piv[k] = p;
            let right = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=right {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let s = self.slot(i, k);
                let l = self.data[s] / pivot;
                self.data[s] = 0.0;
                lower[k * kl + (i - k - 1)] = l;
                if l != 0.0 {
                    for j in k + 1..=right {
                        let t = self.get(k, j);
                        if t != 0.0 {
                            let s = self.slot(i, j);
                            self.data[s] -= l * t;
                        }
                    }
                }
            }
        }
        Ok(BandLu { u: self, lower, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    u: BandMatrix,
    lower: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, kl, ku) = (self.u.n, self.u.kl, self.u.ku);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    x[i] -= self.lower[k * kl + (i - k - 1)] * xk;
                }
            }
        }
        for k in (0..n).rev() {
            let right = (k + kl + ku).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=right {
                s -= self.u.get(k, j) * x[j];
            }
            x[k] = s / self.u.get(k, k);
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarySolution {
    pub pi: Vec<f64>,
    /// `‖π G‖∞` after normalization.
    pub residual: f64,
    pub refinements: usize,
    /// Nodes reachable from the restart atom.
    pub reachable: usize,
}

fn reach(n: usize, start: usize, adj: impl Fn(usize, &mut dyn FnMut(usize))) -> Vec<bool> {
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    while let Some(i) = queue.pop_front() {
        adj(i, &mut |k| {
            if !seen[k] {
                seen[k] = true;
                queue.push_back(k);
            }
        });
    }
    seen
}

/// Stationary law of the generator restricted to the communicating class of
/// `anchor`. The anchor's mass is pinned to 1, its balance equation dropped,
/// the remaining equations solved by banded LU with iterative refinement,
/// and the result normalized.
pub fn stationary_from(g: &SparseGenerator, anchor: usize, tol: f64) -> Result<StationarySolution> {
    let n = g.len();
    if anchor >= n {
        return Err(Error::Numerical("anchor node out of range".into()));
    }
    let forward = reach(n, anchor, |i, f| g.rows[i].iter().for_each(|e| f(e.0)));
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in g.rows.iter().enumerate() {
        for &(k, _) in row {
            incoming[k].push(i);
        }
    }
    let backward = reach(n, anchor, |i, f| incoming[i].iter().for_each(|&k| f(k)));
    if let Some(bad) = (0..n).find(|&i| forward[i] && !backward[i]) {
        return Err(Error::Numerical(format!(
            "node {bad} is reachable from the restart atom but cannot return to it"
        )));
    }

    // Unknowns: reachable nodes except the anchor, in original order.
    let mut map = vec![usize::MAX; n];
    let mut order = Vec::new();
    for i in (0..n).filter(|&i| forward[i] && i != anchor) {
        map[i] = order.len();
        order.push(i);
    }
    let m = order.len();
    let mut pi = vec![0.0; n];
    pi[anchor] = 1.0;
    let mut refinements = 0;

    if m > 0 {
        // Equation for column node c: Σ_r π_r G[r][c] = 0, i.e. A = Gᵀ restricted.
        let (mut kl, mut ku) = (0usize, 0usize);
        for &r in &order {
            for &(c, _) in &g.rows[r] {
                if map[c] != usize::MAX {
                    let (row, col) = (map[c], map[r]);
                    if row > col {
                        kl = kl.max(row - col);
                    } else {
                        ku = ku.max(col - row);
                    }
                }
            }
        }
        let mut a = BandMatrix::zeros(m, kl, ku);
        let mut rhs = vec![0.0; m];
        for (col, &r) in order.iter().enumerate() {
            a.add(col, col, g.diag[r]);
            for &(c, v) in &g.rows[r] {
                if map[c] != usize::MAX {
                    a.add(map[c], col, v);
                }
            }
        }
        for &(c, v) in &g.rows[anchor] {
            if map[c] != usize::MAX {
                rhs[map[c]] -= v;
            }
        }
        let lu = a.clone().factor()?;
        let mut x = lu.solve(&rhs);
        let rhs_scale = rhs.iter().fold(0.0_f64, |s, v| s.max(v.abs())).max(1.0);
        for _ in 0..MAX_REFINEMENTS {
            let ax = a.mul_vec(&x);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, y)| b - y).collect();
            let rmax = r.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
            if rmax <= f64::EPSILON * rhs_scale {
                break;
            }
            let dx = lu.solve(&r);
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
            refinements += 1;
        }
        for (k, &i) in order.iter().enumerate() {
            pi[i] = x[k];
        }
    }

    if let Some(i) = pi.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite stationary mass at node {i}")));
    }
    // Round-off can leave tiny negative masses; anything larger is a failure.
    let total: f64 = pi.iter().sum();
    for v in pi.iter_mut() {
        *v /= total;
        if *v < 0.0 {
            if *v < -tol {
                return Err(Error::Numerical(format!("negative stationary mass {v}")));
            }
            *v = 0.0;
        }
    }
    let residual = g.left_mul(&pi).iter().fold(0.0_f64, |s, v| s.max(v.abs()));
    if residual > tol {
        return Err(Error::Numerical(format!(
            "stationary residual {residual:e} exceeds tolerance {tol:e}"
        )));
    }
    Ok(StationarySolution {
        pi,
        residual,
        refinements,
        reachable: m + 1,
    })
}

/// Stationary distribution of the chain, anchored at the restart atom.
pub fn stationary(chain: &DiscretizedChain, tol: f64) -> Result<StationarySolution> {
    stationary_from(&chain.generator, chain.atom_u(), tol)
}
