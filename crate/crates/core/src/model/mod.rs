//! Hybrid SDE models: per-state polynomial drift and diffusion plus a
//! level-dependent generator `Λ(x)` on the band `[0, a]`.
//!
//! States are 0-based in the library API. Model files, CSV output and the
//! CLI use 1-based state labels.

mod poly;

pub use poly::PolyExpr;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for generator sign and row-sum checks.
pub const GENERATOR_TOL: f64 = 1e-12;
/// Default number of sample points used for suprema and checks on `[0, a]`.
pub const DENSE_SAMPLES: usize = 10_000;
/// Multiplicative slack on the sampled supremum of `|Λ_ii|`.
pub const GAMMA_SAFETY: f64 = 1.0 + 1e-9;
/// Floor on the uniformization rate so the Poisson clock is well-defined.
pub const GAMMA_FLOOR: f64 = 1e-9;

/// On-disk model description (JSON).
///
/// ```json
/// {
///   "states": 1,
///   "mu": [[0.5]], "sigma": [[1.0]], "lambda": [[[0.0]]],
///   "a": 1.0, "u": 0.5, "i0": 1, "q": 0.0
/// }
/// ```
///
/// `i0` is 1-based. `gamma` and `lipschitz_k` are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub states: usize,
    pub mu: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<Vec<f64>>>,
    pub a: f64,
    pub u: f64,
    pub i0: usize,
    #[serde(default)]
    pub q: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_k: Option<f64>,
}

/// Coefficients and intensities as seen by the path simulator.
///
/// Implementations must return a valid generator row for every `x`; the
/// exact model does this by evaluating outside `[0, a]` at the clamped level.
pub trait Dynamics: Sync {
    fn states(&self) -> usize;
    fn drift(&self, i: usize, x: f64) -> f64;
    fn diffusion(&self, i: usize, x: f64) -> f64;
    /// `Λ_ik(x)`.
    fn rate(&self, i: usize, k: usize, x: f64) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel {
    mu: Vec<PolyExpr>,
    sigma: Vec<PolyExpr>,
    lambda: Vec<Vec<PolyExpr>>,
    a: f64,
    u: f64,
    start_state: usize,
    kill_rate: f64,
    gamma: f64,
    gamma_user: bool,
    lipschitz_k: Option<f64>,
}

impl HybridModel {
    /// Builds a model. `start_state` is 0-based. When `gamma` is `None` the
    /// uniformization rate is computed from `Λ`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mu: Vec<PolyExpr>,
        sigma: Vec<PolyExpr>,
        lambda: Vec<Vec<PolyExpr>>,
        a: f64,
        u: f64,
        start_state: usize,
        kill_rate: f64,
        gamma: Option<f64>,
    ) -> Result<Self> {
        let p = mu.len();
        if p == 0 {
            return Err(Error::input("states", "model needs at least one state"));
        }
        if sigma.len() != p {
            return Err(Error::input("sigma", format!("expected {p} entries, got {}", sigma.len())));
        }
        if lambda.len() != p {
            return Err(Error::input("lambda", format!("expected {p} rows, got {}", lambda.len())));
        }
        for (r, row) in lambda.iter().enumerate() {
            if row.len() != p {
                return Err(Error::input(
                    format!("lambda[{r}]"),
                    format!("expected {p} entries, got {}", row.len()),
                ));
            }
        }
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::input("a", "band height must be finite and positive"));
        }
        if !(u > 0.0 && u < a) {
            return Err(Error::input("u", format!("start level must lie in (0, {a}), got {u}")));
        }
        if start_state >= p {
            return Err(Error::input("i0", format!("start state must be in 1..={p}")));
        }
        if !(kill_rate.is_finite() && kill_rate >= 0.0) {
            return Err(Error::input("q", "killing rate must be finite and nonnegative"));
        }
        if let Some(g) = gamma {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::input("gamma", "uniformization rate must be finite and positive"));
            }
        }
        let mut model = Self {
            mu,
            sigma,
            lambda,
            a,
            u,
            start_state,
            kill_rate,
            gamma: gamma.unwrap_or(0.0),
            gamma_user: gamma.is_some(),
            lipschitz_k: None,
        };
        if gamma.is_none() {
            model.gamma = model.compute_uniformization_rate();
        }
        Ok(model)
    }

    pub fn from_file(file: &ModelFile) -> Result<Self> {
        if file.states == 0 {
            return Err(Error::input("states", "must be at least 1"));
        }
        let p = file.states;
        let polys = |field: &str, rows: &[Vec<f64>]| -> Result<Vec<PolyExpr>> {
            if rows.len() != p {
                return Err(Error::input(field, format!("expected {p} entries, got {}", rows.len())));
            }
            rows.iter()
                .enumerate()
                .map(|(k, c)| {
                    PolyExpr::new(c.clone()).ok_or_else(|| {
                        Error::input(format!("{field}[{k}]"), "coefficients must be nonempty and finite")
                    })
                })
                .collect()
        };
        let mu = polys("mu", &file.mu)?;
        let sigma = polys("sigma", &file.sigma)?;
        if file.lambda.len() != p {
            return Err(Error::input("lambda", format!("expected {p} rows, got {}", file.lambda.len())));
        }
        let lambda = file
            .lambda
            .iter()
            .enumerate()
            .map(|(r, row)| polys(&format!("lambda[{r}]"), row))
            .collect::<Result<Vec<_>>>()?;
        if file.i0 == 0 || file.i0 > p {
            return Err(Error::input("i0", format!("must be in 1..={p}, got {}", file.i0)));
        }
        if let Some(k) = file.lipschitz_k {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::input("lipschitz_k", "must be finite and positive"));
            }
        }
        let mut model = Self::new(mu, sigma, lambda, file.a, file.u, file.i0 - 1, file.q, file.gamma)?;
        model.lipschitz_k = file.lipschitz_k;
        Ok(model)
    }

    pub fn to_file(&self) -> ModelFile {
        let c = |v: &[PolyExpr]| v.iter().map(|q| q.coeffs().to_vec()).collect::<Vec<_>>();
        ModelFile {
            states: self.states(),
            mu: c(&self.mu),
            sigma: c(&self.sigma),
            lambda: self.lambda.iter().map(|row| c(row)).collect(),
            a: self.a,
            u: self.u,
            i0: self.start_state + 1,
            q: self.kill_rate,
            gamma: self.gamma_user.then_some(self.gamma),
            lipschitz_k: self.lipschitz_k,
        }
    }

    /// Parses a model from JSON text. Syntax errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        Self::from_file(&file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn states(&self) -> usize {
        self.mu.len()
    }
    pub fn band_high(&self) -> f64 {
        self.a
    }
    pub fn start_level(&self) -> f64 {
        self.u
    }
    pub fn start_state(&self) -> usize {
        self.start_state
    }
    pub fn kill_rate(&self) -> f64 {
        self.kill_rate
    }
    pub fn uniformization_rate(&self) -> f64 {
        self.gamma
    }
    pub fn lipschitz_k(&self) -> Option<f64> {
        self.lipschitz_k
    }
    pub fn mu_poly(&self, i: usize) -> &PolyExpr {
        &self.mu[i]
    }
    pub fn sigma_poly(&self, i: usize) -> &PolyExpr {
        &self.sigma[i]
    }
    pub fn lambda_poly(&self, i: usize, k: usize) -> &PolyExpr {
        &self.lambda[i][k]
    }

    /// Same coefficients, different start configuration.
    pub fn with_start(&self, u: f64, start_state: usize) -> Result<Self> {
        if !(u > 0.0 && u < self.a) {
            return Err(Error::input("u", format!("start level must lie in (0, {}), got {u}", self.a)));
        }
        if start_state >= self.states() {
            return Err(Error::StateOutOfRange { index: start_state, states: self.states() });
        }
        Ok(Self { u, start_state, ..self.clone() })
    }

    pub fn with_kill_rate(&self, q: f64) -> Result<Self> {
        if !(q.is_finite() && q >= 0.0) {
            return Err(Error::input("q", "killing rate must be finite and nonnegative"));
        }
        Ok(Self { kill_rate: q, ..self.clone() })
    }

    /// Overrides the uniformization rate (must still dominate `|Λ_ii|`).
    pub fn with_uniformization_rate(&self, gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::input("gamma", "uniformization rate must be finite and positive"));
        }
        Ok(Self { gamma, gamma_user: true, ..self.clone() })
    }

    /// `(μ_i(x), σ_i(x))`.
    pub fn eval_coefficients(&self, i: usize, x: f64) -> Result<(f64, f64)> {
        self.check_state(i)?;
        Ok((self.mu[i].eval(x), self.sigma[i].eval(x)))
    }

    /// `Λ(x)`, checked for nonnegative off-diagonals and zero row sums.
    pub fn eval_generator(&self, x: f64) -> Result<Vec<Vec<f64>>> {
        let g = self.generator_unchecked(x);
        check_generator(&g, x)?;
        Ok(g)
    }

    pub(crate) fn generator_unchecked(&self, x: f64) -> Vec<Vec<f64>> {
        self.lambda
            .iter()
            .map(|row| row.iter().map(|q| q.eval(x)).collect())
            .collect()
    }

    /// Supremum of `max_i |Λ_ii(x)|` over `[0, a]`, sampled on a dense grid
    /// plus every critical point of each `Λ_ii`, times `1 + 1e-9` and floored
    /// at `1e-9`.
    pub fn compute_uniformization_rate(&self) -> f64 {
        (self.diag_sup(DENSE_SAMPLES) * GAMMA_SAFETY).max(GAMMA_FLOOR)
    }

    fn diag_sup(&self, samples: usize) -> f64 {
        let mut sup: f64 = 0.0;
        for i in 0..self.states() {
            let d = &self.lambda[i][i];
            for x in dense_grid(0.0, self.a, samples) {
                sup = sup.max(d.eval(x).abs());
            }
            for x in d.critical_points_in(0.0, self.a) {
                sup = sup.max(d.eval(x).abs());
            }
        }
        sup
    }

    /// Diagnostic report: generator validity, sampled Lipschitz constants,
    /// and the uniformization-rate bound.
    pub fn validate(&self) -> ValidationReport {
        let xs: Vec<f64> = dense_grid(0.0, self.a, DENSE_SAMPLES).collect();
        let mut violations = Vec::new();
        for &x in &xs {
            if let Err(Error::Generator { x, message }) = check_generator(&self.generator_unchecked(x), x) {
                violations.push(GeneratorViolation { x, message });
            }
        }
        let lipschitz = (0..self.states())
            .map(|i| LipschitzEstimate {
                state: i,
                mu: sampled_lipschitz(&self.mu[i], &xs),
                sigma: sampled_lipschitz(&self.sigma[i], &xs),
            })
            .collect();
        let sup = self.diag_sup(DENSE_SAMPLES);
        ValidationReport {
            generator_violations: violations,
            lipschitz,
            gamma: self.gamma,
            diag_sup: sup,
            gamma_dominates: self.gamma >= sup,
        }
    }

    fn check_state(&self, i: usize) -> Result<()> {
        if i >= self.states() {
            return Err(Error::StateOutOfRange { index: i, states: self.states() });
        }
        Ok(())
    }
}

impl Dynamics for HybridModel {
    fn states(&self) -> usize {
        self.mu.len()
    }
    #[inline]
    fn drift(&self, i: usize, x: f64) -> f64 {
        self.mu[i].eval(x.clamp(0.0, self.a))
    }
    #[inline]
    fn diffusion(&self, i: usize, x: f64) -> f64 {
        self.sigma[i].eval(x.clamp(0.0, self.a))
    }
    #[inline]
    fn rate(&self, i: usize, k: usize, x: f64) -> f64 {
        self.lambda[i][k].eval(x.clamp(0.0, self.a))
    }
}

pub(crate) fn check_generator(g: &[Vec<f64>], x: f64) -> Result<()> {
    for (i, row) in g.iter().enumerate() {
        for (k, &v) in row.iter().enumerate() {
            if i != k && v < -GENERATOR_TOL {
                return Err(Error::Generator {
                    x,
                    message: format!("off-diagonal entry ({}, {}) = {v} is negative", i + 1, k + 1),
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if sum.abs() > GENERATOR_TOL {
            return Err(Error::Generator {
                x,
                message: format!("row {} sums to {sum}", i + 1),
            });
        }
    }
    Ok(())
}

/// `n` equally spaced points covering `[lo, hi]` inclusive.
pub(crate) fn dense_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let n = n.max(2);
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(move |k| if k + 1 == n { hi } else { lo + k as f64 * step })
}

fn sampled_lipschitz(f: &PolyExpr, xs: &[f64]) -> f64 {
    xs.windows(2)
        .map(|w| (f.eval(w[1]) - f.eval(w[0])).abs() / (w[1] - w[0]))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorViolation {
    pub x: f64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzEstimate {
    pub state: usize,
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub generator_violations: Vec<GeneratorViolation>,
    pub lipschitz: Vec<LipschitzEstimate>,
    pub gamma: f64,
    pub diag_sup: f64,
    pub gamma_dominates: bool,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.generator_violations.is_empty() && self.gamma_dominates
    }

    /// Largest sampled Lipschitz constant over all coefficients.
    pub fn lipschitz_max(&self) -> f64 {
        self.lipschitz.iter().map(|l| l.mu.max(l.sigma)).fold(0.0, f64::max)
    }
}

/// Shipped example models.
pub mod examples {
    use super::*;

    fn c(v: &[f64]) -> PolyExpr {
        PolyExpr::new(v.to_vec()).expect("finite literal")
    }

    fn example_lambda() -> Vec<Vec<PolyExpr>> {
        // 10 * [[-x, x, 0], [1-x, -1, x], [0, 1-x, -(1-x)]]
        vec![
            vec![c(&[0.0, -10.0]), c(&[0.0, 10.0]), c(&[0.0])],
            vec![c(&[10.0, -10.0]), c(&[-10.0]), c(&[0.0, 10.0])],
            vec![c(&[0.0]), c(&[10.0, -10.0]), c(&[-10.0, 10.0])],
        ]
    }

    /// Three-state model with upward drifts on `(0, 1)`, `i0 = 2` (index 1), `u = 0.5`.
    pub fn example_5_1() -> HybridModel {
        HybridModel::new(
            vec![c(&[0.5]), c(&[0.5, -0.5]), c(&[0.5, -1.0, 0.5])],
            vec![c(&[1.0]), c(&[1.0]), c(&[1.0])],
            example_lambda(),
            1.0,
            0.5,
            1,
            0.0,
            None,
        )
        .expect("valid literal model")
    }

    /// As [`example_5_1`] but state 3 has `μ_3(x) = -0.5 x²`, `σ_3 = 0`.
    pub fn example_5_2() -> HybridModel {
        HybridModel::new(
            vec![c(&[0.5]), c(&[0.5, -0.5]), c(&[0.0, 0.0, -0.5])],
            vec![c(&[1.0]), c(&[1.0]), c(&[0.0])],
            example_lambda(),
            1.0,
            0.5,
            1,
            0.0,
            None,
        )
        .expect("valid literal model")
    }

    /// Single-state Brownian motion with constant drift `mu` and volatility `sigma`.
    pub fn brownian(mu: f64, sigma: f64, u: f64, a: f64, q: f64) -> HybridModel {
        HybridModel::new(
            vec![PolyExpr::constant(mu)],
            vec![PolyExpr::constant(sigma)],
            vec![vec![PolyExpr::zero()]],
            a,
            u,
            0,
            q,
            None,
        )
        .expect("valid brownian model")
    }
}
