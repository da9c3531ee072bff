//! Hybrid SDEs with state-dependent switching.
//!
//! * [`model`]: polynomial coefficients, the generator field `Λ(x)`, validation.
//! * [`gridgen`]: space grids through the start level and piecewise-constant approximations.
//! * [`simulate`]: uniformization paths and the coupled exact/approximate construction.
//! * [`mrmbm`]: first-passage probabilities and occupation times via the regenerative queue.
//! * [`montecarlo`]: path estimators, jump-law tests and decoupling studies.
//! * [`analysis`]: error-bound formulas and convergence studies.
//! * [`config`] and [`output`]: run configuration files and CSV/JSON output.

pub mod analysis;
pub mod config;
pub mod error;
pub mod gridgen;
pub mod model;
pub mod montecarlo;
pub mod mrmbm;
pub mod output;
pub mod rng;
pub mod simulate;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use gridgen::{GridApproximation, SamplingRule, SpaceGrid};
pub use model::{Dynamics, HybridModel, ModelFile, PolyExpr};
pub use mrmbm::{PassageResult, SolverConfig, StationaryResult};
pub use rng::RngStream;
pub use montecarlo::{McConfig, McEstimate};
pub use simulate::{CoupledSample, PathSample};
