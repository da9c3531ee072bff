//! First-passage probabilities and occupation times from the stationary law.

use serde::Serialize;

use super::banded::StationarySolution;
use super::chain::{DiscretizedChain, Location};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationaryResult {
    pub pi: Vec<f64>,
    /// `π` at the atoms `(0, j)`.
    pub p_minus: Vec<f64>,
    /// `π` at the atoms `(a, j)`.
    pub p_plus: Vec<f64>,
    /// `π` at the restart atom `(u, ∂₀)`.
    pub p0: f64,
    pub boundaries: Vec<f64>,
    /// `F_j` at every cell boundary, `[state][boundary]`.
    pub cdf: Vec<Vec<f64>>,
    pub residual: f64,
}

impl StationaryResult {
    pub fn from_solution(sol: &StationarySolution, chain: &DiscretizedChain) -> Self {
        let p = chain.states;
        let pi = sol.pi.clone();
        let mut cdf = vec![vec![0.0; chain.cells() + 1]; p];
        for (j, f) in cdf.iter_mut().enumerate() {
            for c in 0..chain.cells() {
                f[c + 1] = f[c] + pi[chain.cell(c, j)];
            }
        }
        Self {
            p_minus: (0..p).map(|j| pi[chain.atom0(j)]).collect(),
            p_plus: (0..p).map(|j| pi[chain.atom_a(j)]).collect(),
            p0: pi[chain.atom_u()],
            boundaries: chain.boundaries.clone(),
            cdf,
            residual: sol.residual,
            pi,
        }
    }

    /// `F_j(b)`, linear inside cells, constant outside `[0, a]`.
    pub fn f(&self, j: usize, b: f64) -> f64 {
        let bs = &self.boundaries;
        let f = &self.cdf[j];
        if b <= bs[0] {
            return 0.0;
        }
        let last = bs.len() - 1;
        if b >= bs[last] {
            return f[last];
        }
        let c = bs.partition_point(|&z| z <= b) - 1;
        let frac = (b - bs[c]) / (bs[c + 1] - bs[c]);
        f[c] + frac * (f[c + 1] - f[c])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageResult {
    pub m_minus: Vec<f64>,
    pub m_plus: Vec<f64>,
    pub stationary: StationaryResult,
}

impl PassageResult {
    pub fn states(&self) -> usize {
        self.m_minus.len()
    }

    /// `Ô_j(b)`: expected killed time in state `j` below level `b` before exit.
    pub fn occupation(&self, j: usize, b: f64) -> f64 {
        self.stationary.f(j, b) / self.stationary.p0
    }

    /// Expected time to exit or killing, summed over states.
    pub fn mean_exit_time(&self) -> f64 {
        let top = *self.stationary.boundaries.last().expect("nonempty grid");
        (0..self.states()).map(|j| self.occupation(j, top)).sum()
    }

    /// `Σ_j (m̂⁻ + m̂⁺)`; equals one when nothing is killed.
    pub fn total_exit_probability(&self) -> f64 {
        self.m_minus.iter().chain(&self.m_plus).sum()
    }
}

/// Reads `m̂⁻ = p₋M / p₀`, `m̂⁺ = p_M / p₀` and `F_j / p₀` off the stationary law.
pub fn extract_passage(sol: &StationarySolution, chain: &DiscretizedChain) -> Result<PassageResult> {
    debug_assert_eq!(chain.nodes[chain.atom_u()].location, Location::AtomU);
    let st = StationaryResult::from_solution(sol, chain);
    if !(st.p0 > 0.0) {
        return Err(Error::Numerical("restart atom carries no stationary mass".into()));
    }
    Ok(PassageResult {
        m_minus: st.p_minus.iter().map(|v| v / st.p0).collect(),
        m_plus: st.p_plus.iter().map(|v| v / st.p0).collect(),
        stationary: st,
    })
}
