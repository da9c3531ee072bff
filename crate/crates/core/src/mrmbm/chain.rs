//! Finite-volume CTMC for the regenerative queue `(L, Y)`.
//!
//! Every band is split into `K` cells. A regular state moves between
//! neighbouring cell centres with rates that match the drift and the
//! diffusion coefficient to second order, switches state inside its cell
//! with the band's `Q` row, and falls onto the level atoms at `0` and `a`
//! from the outermost cells. The reset state `∂₀` climbs back to `u`
//! deterministically (rate `1/distance`) and enters the restart atom.
//!
//! Nodes are ordered by level so the generator is banded.

use serde::Serialize;

use super::qrs::QrsSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Atom0,
    Cell(usize),
    AtomU,
    AtomA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Node {
    pub location: Location,
    /// Regular states `0..p`; `p` is `∂₀`.
    pub state: usize,
}

/// Central differencing produced a negative rate and the one-sided
/// scheme was used instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpwindSwitch {
    pub state: usize,
    pub band: usize,
    pub mu: f64,
    pub sigma: f64,
}

/// Row-wise sparse generator; every row lists its off-diagonal entries
/// and the diagonal is kept separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseGenerator {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub diag: Vec<f64>,
}

impl SparseGenerator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }
    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Entries in triplet form, diagonal included.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for (i, row) in self.rows.iter().enumerate() {
            out.push((i, i, self.diag[i]));
            out.extend(row.iter().map(|&(k, v)| (i, k, v)));
        }
        out
    }

    /// `π G` as a dense vector.
    pub fn left_mul(&self, pi: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = pi.iter().zip(&self.diag).map(|(p, d)| p * d).collect();
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                out[k] += pi[i] * v;
            }
        }
        out
    }

    /// Largest `|row sum|` and most negative off-diagonal.
    pub fn validity(&self) -> (f64, f64) {
        let mut worst_sum: f64 = 0.0;
        let mut min_off = f64::INFINITY;
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row.iter().map(|e| e.1).sum::<f64>() + self.diag[i];
            worst_sum = worst_sum.max(s.abs());
            for &(_, v) in row {
                min_off = min_off.min(v);
            }
        }
        (worst_sum, min_off)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscretizedChain {
    pub states: usize,
    pub cells_per_band: usize,
    pub nodes: Vec<Node>,
    pub generator: SparseGenerator,
    /// Cell centres and boundaries, `2MK` and `2MK + 1` entries.
    pub centers: Vec<f64>,
    pub boundaries: Vec<f64>,
    /// Cell width per band.
    pub widths: Vec<f64>,
    pub upwind: Vec<UpwindSwitch>,
    atom0: usize,
    atom_a: usize,
    atom_u: usize,
    first_cell: usize,
}

impl DiscretizedChain {
    pub fn cells(&self) -> usize {
        self.centers.len()
    }

    pub fn index_of(&self, node: Node) -> Option<usize> {
        let p = self.states;
        let split = self.cells() / 2;
        match node.location {
            Location::Atom0 if node.state < p => Some(self.atom0 + node.state),
            Location::AtomA if node.state < p => Some(self.atom_a + node.state),
            Location::AtomU if node.state == p => Some(self.atom_u),
            Location::Cell(c) if c < self.cells() && node.state <= p => {
                let shift = usize::from(c >= split);
                Some(self.first_cell + c * (p + 1) + shift + node.state)
            }
            _ => None,
        }
    }

    pub fn atom_u(&self) -> usize {
        self.atom_u
    }
    pub fn atom0(&self, j: usize) -> usize {
        self.atom0 + j
    }
    pub fn atom_a(&self, j: usize) -> usize {
        self.atom_a + j
    }
    pub fn cell(&self, c: usize, state: usize) -> usize {
        self.index_of(Node {
            location: Location::Cell(c),
            state,
        })
        .expect("cell index in range")
    }
}

/// Neighbour rates on a possibly nonuniform stencil, falling
/// back to one-sided drift when a central rate would be negative.
/// Returns `(up, down, upwind_used)`.
pub fn neighbour_rates(mu: f64, sigma: f64, d_up: f64, d_down: f64) -> (f64, f64, bool) {
    let var = sigma * sigma;
    if var == 0.0 {
        return (mu.max(0.0) / d_up, (-mu).max(0.0) / d_down, false);
    }
    let span = d_up + d_down;
    // Matches mean `mu` and variance `sigma^2` of the displacement rate exactly.
    let up = (var + mu * d_down) / (d_up * span);
    let down = (var - mu * d_up) / (d_down * span);
    if up >= 0.0 && down >= 0.0 {
        (up, down, false)
    } else {
        (
            var / (d_up * span) + mu.max(0.0) / d_up,
            var / (d_down * span) + (-mu).max(0.0) / d_down,
            true,
        )
    }
}

/// Builds the chain with `k` cells per band.
pub fn discretize(qrs: &QrsSpec, k: usize) -> Result<DiscretizedChain> {
    if k == 0 {
        return Err(Error::input("cells_per_band", "must be at least 1"));
    }
    let p = qrs.states;
    let reset = p;
    let grid = &qrs.grid;
    let nb = grid.bands();
    let mm = grid.half();
    let widths: Vec<f64> = (0..nb).map(|b| grid.width(b) / k as f64).collect();
    if let Some(b) = widths.iter().position(|h| !(*h > 0.0)) {
        return Err(Error::Grid(format!("band {b} has nonpositive cell width")));
    }

    let n_cells = nb * k;
    let mut centers = Vec::with_capacity(n_cells);
    let mut boundaries = Vec::with_capacity(n_cells + 1);
    for b in 0..nb {
        let lo = grid.levels()[b];
        for c in 0..k {
            boundaries.push(lo + c as f64 * widths[b]);
            centers.push(lo + (c as f64 + 0.5) * widths[b]);
        }
    }
    boundaries.push(grid.top());
    // Keep exact grid levels on band edges.
    for b in 0..=nb {
        boundaries[b * k] = grid.levels()[b];
    }

    // Level-ordered node layout.
    let mut nodes = Vec::with_capacity(n_cells * (p + 1) + 2 * p + 1);
    let atom0 = 0;
    nodes.extend((0..p).map(|j| Node {
        location: Location::Atom0,
        state: j,
    }));
    let first_cell = nodes.len();
    let split = mm * k;
    let mut atom_u = 0;
    for c in 0..n_cells {
        if c == split {
            atom_u = nodes.len();
            nodes.push(Node {
                location: Location::AtomU,
                state: reset,
            });
        }
        nodes.extend((0..=p).map(|s| Node {
            location: Location::Cell(c),
            state: s,
        }));
    }
    let atom_a = nodes.len();
    nodes.extend((0..p).map(|j| Node {
        location: Location::AtomA,
        state: j,
    }));

    let mut chain = DiscretizedChain {
        states: p,
        cells_per_band: k,
        generator: SparseGenerator {
            rows: vec![Vec::new(); nodes.len()],
            diag: vec![0.0; nodes.len()],
        },
        nodes,
        centers,
        boundaries,
        widths,
        upwind: Vec::new(),
        atom0,
        atom_a,
        atom_u,
        first_cell,
    };

    let top = grid.top();
    let u = qrs.start_level;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); chain.nodes.len()];
    let mut push = |from: usize, to: usize, rate: f64| {
        if rate > 0.0 {
            rows[from].push((to, rate));
        }
    };

    for c in 0..n_cells {
        let b = c / k;
        let x = chain.centers[c];
        let d_up = if c + 1 < n_cells { chain.centers[c + 1] - x } else { top - x };
        let d_down = if c > 0 { x - chain.centers[c - 1] } else { x };
        let q_row = &qrs.q_band[b];
        for i in 0..p {
            let from = chain.cell(c, i);
            let mu = qrs.r_band[b][i];
            let sigma = qrs.s_band[b][i];
            let switching: f64 = (0..p).filter(|&j| j != i).map(|j| q_row[i][j]).sum();
            if sigma == 0.0 && mu == 0.0 && qrs.kill_rate == 0.0 && switching <= 0.0 {
                return Err(Error::Trap { band: b, state: i });
            }
            let (up, down, upwind) = neighbour_rates(mu, sigma, d_up, d_down);
            if upwind && !chain.upwind.iter().any(|s| s.state == i && s.band == b) {
                log::info!("upwind scheme used for state {} in band {} (mu = {mu}, sigma = {sigma})", i + 1, b);
                chain.upwind.push(UpwindSwitch {
                    state: i,
                    band: b,
                    mu,
                    sigma,
                });
            }
            let up_to = if c + 1 < n_cells { chain.cell(c + 1, i) } else { chain.atom_a(i) };
            let down_to = if c > 0 { chain.cell(c - 1, i) } else { chain.atom0(i) };
            push(from, up_to, up);
            push(from, down_to, down);
            for j in 0..p {
                if j != i {
                    push(from, chain.cell(c, j), q_row[i][j]);
                }
            }
            push(from, chain.cell(c, reset), q_row[i][reset]);
        }

        // ∂₀ moves toward u at unit speed.
        let from = chain.cell(c, reset);
        if c + 1 == split {
            push(from, atom_u, 1.0 / (u - x));
        } else if c == split {
            push(from, atom_u, 1.0 / (x - u));
        } else if c < split {
            push(from, chain.cell(c + 1, reset), 1.0 / d_up);
        } else {
            push(from, chain.cell(c - 1, reset), 1.0 / d_down);
        }
    }

    for j in 0..p {
        push(chain.atom0(j), chain.cell(0, reset), 1.0);
        push(chain.atom_a(j), chain.cell(n_cells - 1, reset), 1.0);
    }
    let i0 = qrs.start_state;
    push(atom_u, chain.cell(split - 1, i0), 0.5);
    push(atom_u, chain.cell(split, i0), 0.5);

    for (i, mut row) in rows.into_iter().enumerate() {
        row.sort_by_key(|e| e.0);
        // Merge repeated targets.
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (t, v) in row {
            match merged.last_mut() {
                Some(last) if last.0 == t => last.1 += v,
                _ => merged.push((t, v)),
            }
        }
        chain.generator.diag[i] = -merged.iter().map(|e| e.1).sum::<f64>();
        chain.generator.rows[i] = merged;
    }
    Ok(chain)
}
