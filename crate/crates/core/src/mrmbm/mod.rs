//! First-passage quantities through the regenerative MRMBM queue.
//!
//! Pipeline: [`assemble_qrs`] builds the level-dependent blocks, [`discretize`]
//! turns them into a finite CTMC, [`stationary`] solves `π G = 0`, and
//! [`extract_passage`] reads `m̂⁻`, `m̂⁺` and `Ô` off the atoms and cells.

mod banded;
mod chain;
mod passage;
mod qrs;

pub use banded::{stationary, stationary_from, BandLu, BandMatrix, StationarySolution, DEFAULT_TOL};
pub use chain::{discretize, neighbour_rates, DiscretizedChain, Location, Node, SparseGenerator, UpwindSwitch};
pub use passage::{extract_passage, PassageResult, StationaryResult};
pub use qrs::{assemble_qrs, Matrix, QrsSpec};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gridgen::{GridApproximation, SamplingRule, SpaceGrid};
use crate::model::HybridModel;

pub const DEFAULT_CELLS_PER_BAND: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// `M`: bands on each side of `u`.
    pub m: usize,
    pub cells_per_band: usize,
    pub sampling_rule: SamplingRule,
    pub tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            m: 50,
            cells_per_band: DEFAULT_CELLS_PER_BAND,
            sampling_rule: SamplingRule::LeftEndpoint,
            tol: DEFAULT_TOL,
        }
    }
}

impl SolverConfig {
    pub fn new(m: usize, cells_per_band: usize) -> Self {
        Self {
            m,
            cells_per_band,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Solution {
    pub passage: PassageResult,
    pub approximation: GridApproximation,
    pub nodes: usize,
    pub reachable: usize,
    pub refinements: usize,
    pub upwind: Vec<UpwindSwitch>,
}

impl Solution {
    pub fn residual(&self) -> f64 {
        self.passage.stationary.residual
    }
}

/// Runs the full pipeline for the model's start level, start state and killing rate.
pub fn solve(model: &HybridModel, cfg: &SolverConfig) -> Result<Solution> {
    let grid = SpaceGrid::build(model.start_level(), model.band_high(), cfg.m)?;
    let approx = GridApproximation::build(model, &grid, cfg.sampling_rule)?;
    let (passage, chain, sol) = solve_approximation(&approx, model, cfg)?;
    Ok(Solution {
        passage,
        approximation: approx,
        nodes: chain.nodes.len(),
        reachable: sol.reachable,
        refinements: sol.refinements,
        upwind: chain.upwind,
    })
}

fn solve_approximation(
    approx: &GridApproximation,
    model: &HybridModel,
    cfg: &SolverConfig,
) -> Result<(PassageResult, DiscretizedChain, StationarySolution)> {
    let qrs = assemble_qrs(approx, model.kill_rate(), model.start_state(), model.start_level())?;
    let chain = discretize(&qrs, cfg.cells_per_band)?;
    let sol = stationary(&chain, cfg.tol)?;
    let passage = extract_passage(&sol, &chain)?;
    log::debug!(
        "solved {} nodes ({} reachable), residual {:e}, {} refinement steps",
        chain.nodes.len(),
        sol.reachable,
        sol.residual,
        sol.refinements
    );
    Ok((passage, chain, sol))
}

/// Builds the chain only, for dumps and inspection.
pub fn build_chain(model: &HybridModel, cfg: &SolverConfig) -> Result<DiscretizedChain> {
    let grid = SpaceGrid::build(model.start_level(), model.band_high(), cfg.m)?;
    let approx = GridApproximation::build(model, &grid, cfg.sampling_rule)?;
    let qrs = assemble_qrs(&approx, model.kill_rate(), model.start_state(), model.start_level())?;
    discretize(&qrs, cfg.cells_per_band)
}
