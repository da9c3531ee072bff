//! File-driven run configuration shared by the CLI and the test suites.
//!
//! ```json
//! {
//!   "model": "../models/example_5_1.json",
//!   "grid": { "m": 50, "cells_per_band": 10, "sampling_rule": "left_endpoint" },
//!   "solver": { "tol": 1e-10 },
//!   "mc": { "n_paths": 100000, "dt": 0.001, "seed": 2024 },
//!   "occupation_levels": [0.25, 0.5, 0.75, 1.0],
//!   "study": { "m_list": [5, 10, 20, 30, 40, 50] }
//! }
//! ```
//!
//! `model` is either a path (relative to the config file) or an inline model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::BoundConfig;
use crate::error::{Error, Result};
use crate::gridgen::{RateParams, SamplingRule};
use crate::model::{HybridModel, ModelFile};
use crate::montecarlo::McConfig;
use crate::mrmbm::{SolverConfig, DEFAULT_CELLS_PER_BAND, DEFAULT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(Box<ModelFile>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub m: usize,
    pub cells_per_band: usize,
    pub sampling_rule: SamplingRule,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            m: 50,
            cells_per_band: DEFAULT_CELLS_PER_BAND,
            sampling_rule: SamplingRule::LeftEndpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TolConfig {
    pub tol: f64,
}

impl Default for TolConfig {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub m_list: Vec<usize>,
    pub u_list: Vec<f64>,
    pub b_list: Vec<f64>,
    pub coupling_m_list: Vec<usize>,
    pub coupling_horizon: f64,
    pub coupling_paths: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            m_list: vec![5, 10, 20, 30, 40, 50],
            u_list: (1..=9).map(|k| k as f64 / 10.0).collect(),
            b_list: (1..=20).map(|k| k as f64 / 20.0).collect(),
            coupling_m_list: vec![5, 20, 50],
            coupling_horizon: 2.0,
            coupling_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSource,
    /// Overrides the model's killing rate.
    #[serde(default)]
    pub q: Option<f64>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: TolConfig,
    #[serde(default)]
    pub mc: McConfig,
    /// Levels `b` at which `Ô(b)` is reported.
    #[serde(default)]
    pub occupation_levels: Vec<f64>,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub bounds: BoundConfig,
    #[serde(default)]
    pub rates: RateParams,
    /// `n` used by the approximation report's rate bounds.
    #[serde(default = "default_report_n")]
    pub report_n: f64,
    /// Directory the relative model path is resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_report_n() -> f64 {
    1e6
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text)?;
        cfg.base_dir = base_dir.into();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, base)
    }

    /// The model with the configured killing-rate override applied.
    pub fn model(&self) -> Result<HybridModel> {
        let model = match &self.model {
            ModelSource::Path(p) => HybridModel::load(self.base_dir.join(p))?,
            ModelSource::Inline(file) => HybridModel::from_file(file)?,
        };
        match self.q {
            Some(q) => model.with_kill_rate(q),
            None => Ok(model),
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            m: self.grid.m,
            cells_per_band: self.grid.cells_per_band,
            sampling_rule: self.grid.sampling_rule,
            tol: self.solver.tol,
        }
    }

    /// Range checks that do not need the model.
    pub fn validate(&self) -> Result<()> {
        if self.grid.m == 0 {
            return Err(Error::input("grid.m", "must be at least 1"));
        }
        if self.grid.cells_per_band == 0 {
            return Err(Error::input("grid.cells_per_band", "must be at least 1"));
        }
        if !(self.solver.tol > 0.0) {
            return Err(Error::input("solver.tol", "must be positive"));
        }
        if let Some(q) = self.q {
            if !(q.is_finite() && q >= 0.0) {
                return Err(Error::input("q", "must be finite and nonnegative"));
            }
        }
        if self.mc.n_paths == 0 {
            return Err(Error::input("mc.n_paths", "must be at least 1"));
        }
        if !(self.mc.dt > 0.0 && self.mc.dt.is_finite()) {
            return Err(Error::input("mc.dt", "must be positive"));
        }
        if !(self.report_n >= 2.0) {
            return Err(Error::input("report_n", "must be at least 2"));
        }
        Ok(())
    }
}
