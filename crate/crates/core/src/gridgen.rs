//! Space grids containing the start level and piecewise-constant
//! approximations of the model coefficients over them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_generator, dense_grid, Dynamics, HybridModel, PolyExpr};

/// Sample points per band used for the `Λ` row-sum-norm supremum.
const LAMBDA_SAMPLES_PER_BAND: usize = 65;

/// `0 = ζ_{-M} < … < ζ_0 = u < … < ζ_M = a`, stored as `levels[0..=2M]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpaceGrid {
    levels: Vec<f64>,
    half: usize,
}

impl SpaceGrid {
    /// `M` uniform sub-intervals on `[0, u]` and `M` on `[u, a]`.
    pub fn build(u: f64, a: f64, m: usize) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) || !(u > 0.0 && u < a) {
            return Err(Error::Grid(format!("start level {u} must lie in (0, {a})")));
        }
        if m == 0 {
            return Err(Error::Grid("M must be at least 1".into()));
        }
        let mut levels = Vec::with_capacity(2 * m + 1);
        let lo = u / m as f64;
        let hi = (a - u) / m as f64;
        levels.extend((0..m).map(|k| k as f64 * lo));
        levels.push(u);
        levels.extend((1..m).map(|k| u + k as f64 * hi));
        levels.push(a);
        Ok(Self { levels, half: m })
    }

    /// From explicit levels; `levels[M]` is taken as the start level.
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 3 || levels.len() % 2 == 0 {
            return Err(Error::Grid("need 2M+1 levels with M >= 1".into()));
        }
        if levels[0] != 0.0 {
            return Err(Error::Grid("lowest level must be 0".into()));
        }
        if levels.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Grid("levels must be finite and strictly increasing".into()));
        }
        let half = levels.len() / 2;
        Ok(Self { levels, half })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }
    /// `M`.
    pub fn half(&self) -> usize {
        self.half
    }
    pub fn bands(&self) -> usize {
        2 * self.half
    }
    /// `ζ_0`.
    pub fn start_level(&self) -> f64 {
        self.levels[self.half]
    }
    pub fn top(&self) -> f64 {
        self.levels[self.levels.len() - 1]
    }
    /// `(ζ_{m-1}, ζ_m)` for 0-based band `b` (label `m = b - M + 1`).
    pub fn band(&self, b: usize) -> (f64, f64) {
        (self.levels[b], self.levels[b + 1])
    }
    pub fn width(&self, b: usize) -> f64 {
        self.levels[b + 1] - self.levels[b]
    }
    /// Band label `m ∈ {-M+1, …, M}` of 0-based band `b`.
    pub fn band_label(&self, b: usize) -> i64 {
        b as i64 - self.half as i64 + 1
    }

    /// Band containing `x` under the right-continuous convention
    /// `ζ_{m-1} <= x < ζ_m`; levels outside `[0, a)` map to the end bands.
    #[inline]
    pub fn band_of(&self, x: f64) -> usize {
        let idx = self.levels.partition_point(|&z| z <= x);
        idx.saturating_sub(1).min(self.bands() - 1)
    }
}

/// Where each band's value is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingRule {
    /// `f(ζ_{m-1})`.
    #[default]
    LeftEndpoint,
    /// `f((ζ_{m-1} + ζ_m) / 2)`.
    Midpoint,
    /// Smallest `|f|` over the band, carrying the sign of the left endpoint.
    /// Intensities fall back to left endpoints under this rule.
    MinAbs,
}

impl std::str::FromStr for SamplingRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left_endpoint" => Ok(Self::LeftEndpoint),
            "midpoint" => Ok(Self::Midpoint),
            "min_abs" => Ok(Self::MinAbs),
            other => Err(Error::input("sampling_rule", format!("unknown rule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridApproximation {
    grid: SpaceGrid,
    /// `[state][band]`.
    mu_hat: Vec<Vec<f64>>,
    sigma_hat: Vec<Vec<f64>>,
    /// `[band][from][to]`.
    lambda_hat: Vec<Vec<Vec<f64>>>,
    rule: SamplingRule,
}

impl GridApproximation {
    pub fn build(model: &HybridModel, grid: &SpaceGrid, rule: SamplingRule) -> Result<Self> {
        if (grid.top() - model.band_high()).abs() > 1e-12 * model.band_high() {
            return Err(Error::Grid(format!(
                "grid top {} does not match band height {}",
                grid.top(),
                model.band_high()
            )));
        }
        let p = model.states();
        let nb = grid.bands();
        let sample = |f: &PolyExpr, b: usize| -> f64 {
            let (lo, hi) = grid.band(b);
            match rule {
                SamplingRule::LeftEndpoint => f.eval(lo),
                SamplingRule::Midpoint => f.eval(0.5 * (lo + hi)),
                SamplingRule::MinAbs => {
                    let left = f.eval(lo);
                    let sign = if left < 0.0 { -1.0 } else { 1.0 };
                    sign * f.min_abs_on(lo, hi)
                }
            }
        };
        let mu_hat = (0..p).map(|i| (0..nb).map(|b| sample(model.mu_poly(i), b)).collect()).collect();
        let sigma_hat = (0..p)
            .map(|i| (0..nb).map(|b| sample(model.sigma_poly(i), b)).collect())
            .collect();
        let lambda_at = |b: usize| -> f64 {
            let (lo, hi) = grid.band(b);
            match rule {
                SamplingRule::Midpoint => 0.5 * (lo + hi),
                _ => lo,
            }
        };
        let mut lambda_hat = Vec::with_capacity(nb);
        for b in 0..nb {
            let x = lambda_at(b);
            let g = model.eval_generator(x)?;
            lambda_hat.push(g);
        }
        Ok(Self {
            grid: grid.clone(),
            mu_hat,
            sigma_hat,
            lambda_hat,
            rule,
        })
    }

    pub fn grid(&self) -> &SpaceGrid {
        &self.grid
    }
    pub fn rule(&self) -> SamplingRule {
        self.rule
    }
    pub fn states(&self) -> usize {
        self.mu_hat.len()
    }
    pub fn mu_hat(&self, i: usize, b: usize) -> f64 {
        self.mu_hat[i][b]
    }
    pub fn sigma_hat(&self, i: usize, b: usize) -> f64 {
        self.sigma_hat[i][b]
    }
    pub fn lambda_hat(&self, b: usize) -> &[Vec<f64>] {
        &self.lambda_hat[b]
    }

    /// Checks every stored `Λ̂` band matrix.
    pub fn check_generators(&self) -> Result<()> {
        for (b, g) in self.lambda_hat.iter().enumerate() {
            check_generator(g, self.grid.band(b).0)?;
        }
        Ok(())
    }
}

impl Dynamics for GridApproximation {
    fn states(&self) -> usize {
        self.mu_hat.len()
    }
    #[inline]
    fn drift(&self, i: usize, x: f64) -> f64 {
        self.mu_hat[i][self.grid.band_of(x)]
    }
    #[inline]
    fn diffusion(&self, i: usize, x: f64) -> f64 {
        self.sigma_hat[i][self.grid.band_of(x)]
    }
    #[inline]
    fn rate(&self, i: usize, k: usize, x: f64) -> f64 {
        self.lambda_hat[self.grid.band_of(x)][i][k]
    }
}

/// User-supplied rate parameters for the approximation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateParams {
    pub beta: f64,
    pub gamma_rate: f64,
    /// Log-Hölder constant `G`.
    pub g: f64,
}

impl Default for RateParams {
    fn default() -> Self {
        Self {
            beta: 0.0,
            gamma_rate: 0.5,
            g: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproximationReport {
    pub n: f64,
    pub mu_sup_error: f64,
    pub sigma_sup_error: f64,
    /// `sup_z ||Λ̂(z) - Λ(z)||` in the max-row-sum norm.
    pub lambda_sup_error: f64,
    /// `(log n)^β n^{-γ_rate}`.
    pub coefficient_bound: f64,
    /// `G / log n`.
    pub lambda_bound: f64,
    pub coefficient_bound_holds: bool,
    pub lambda_bound_holds: bool,
    /// Bands where `|μ̂| <= |μ|` or `|σ̂| <= |σ|` fails somewhere, as `(state, band)`.
    pub magnitude_violations: Vec<(usize, usize)>,
}

/// `(log n)^β n^{-γ_rate}`.
pub fn coefficient_rate_bound(n: f64, beta: f64, gamma_rate: f64) -> f64 {
    n.ln().powf(beta) * n.powf(-gamma_rate)
}

/// Sup-errors of the approximation against the model and the rate bounds for `n`.
pub fn approximation_report(
    model: &HybridModel,
    approx: &GridApproximation,
    params: RateParams,
    n: f64,
) -> Result<ApproximationReport> {
    if !(n >= 2.0) {
        return Err(Error::input("n", "must be at least 2"));
    }
    let grid = approx.grid();
    let p = model.states();
    let mut mu_err: f64 = 0.0;
    let mut sigma_err: f64 = 0.0;
    let mut lambda_err: f64 = 0.0;
    let mut magnitude_violations = Vec::new();
    for b in 0..grid.bands() {
        let (lo, hi) = grid.band(b);
        for i in 0..p {
            let (mu, sigma) = (model.mu_poly(i), model.sigma_poly(i));
            let (mh, sh) = (approx.mu_hat(i, b), approx.sigma_hat(i, b));
            mu_err = mu_err.max(sup_abs_diff(mu, mh, lo, hi));
            sigma_err = sigma_err.max(sup_abs_diff(sigma, sh, lo, hi));
            let tol = 1e-12 * (1.0 + mh.abs().max(sh.abs()));
            if mh.abs() > mu.min_abs_on(lo, hi) + tol || sh.abs() > sigma.min_abs_on(lo, hi) + tol {
                magnitude_violations.push((i, b));
            }
        }
        let lh = approx.lambda_hat(b);
        for x in dense_grid(lo, hi, LAMBDA_SAMPLES_PER_BAND) {
            let g = model.generator_unchecked(x);
            let norm = g
                .iter()
                .zip(lh)
                .map(|(row, hrow)| row.iter().zip(hrow).map(|(a, b)| (a - b).abs()).sum::<f64>())
                .fold(0.0, f64::max);
            lambda_err = lambda_err.max(norm);
        }
    }
    let coefficient_bound = coefficient_rate_bound(n, params.beta, params.gamma_rate);
    let lambda_bound = params.g / n.ln();
    Ok(ApproximationReport {
        n,
        mu_sup_error: mu_err,
        sigma_sup_error: sigma_err,
        lambda_sup_error: lambda_err,
        coefficient_bound,
        lambda_bound,
        coefficient_bound_holds: mu_err.max(sigma_err) <= coefficient_bound,
        lambda_bound_holds: lambda_err <= lambda_bound,
        magnitude_violations,
    })
}

/// Exact `sup_{x∈[lo,hi]} |f(x) - c|` from endpoint and critical-point values.
fn sup_abs_diff(f: &PolyExpr, c: f64, lo: f64, hi: f64) -> f64 {
    let mut pts = vec![lo, hi];
    pts.extend(f.critical_points_in(lo, hi));
    pts.into_iter().map(|x| (f.eval(x) - c).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::examples::{brownian, example_5_1, example_5_2};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn uniform_split() {
        let g = SpaceGrid::build(0.5, 1.0, 2).unwrap();
        assert_eq!(g.levels(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn example_run_grid() {
        let g = SpaceGrid::build(0.5, 1.0, 50).unwrap();
        assert_eq!(g.levels().len(), 101);
        assert_eq!(g.start_level(), 0.5);
        assert_eq!(g.top(), 1.0);
        for b in 0..g.bands() {
            assert!(close(g.width(b), 0.01, 1e-15));
        }
    }

    #[test]
    fn unequal_halves() {
        let g = SpaceGrid::build(0.2, 1.0, 2).unwrap();
        let want = [0.0, 0.1, 0.2, 0.6, 1.0];
        for (a, b) in g.levels().iter().zip(want) {
            assert!(close(*a, b, 1e-15));
        }
        assert_eq!(g.levels()[2], 0.2);
    }

    #[test]
    fn rejects_bad_start() {
        assert!(SpaceGrid::build(0.0, 1.0, 3).is_err());
        assert!(SpaceGrid::build(1.0, 1.0, 3).is_err());
        assert!(SpaceGrid::build(0.5, 1.0, 0).is_err());
    }

    #[test]
    fn band_lookup_is_right_continuous() {
        let g = SpaceGrid::build(0.5, 1.0, 2).unwrap();
        assert_eq!(g.band_of(0.0), 0);
        assert_eq!(g.band_of(0.25), 1);
        assert_eq!(g.band_of(0.2499), 0);
        assert_eq!(g.band_of(1.0), 3);
        assert_eq!(g.band_of(-3.0), 0);
        assert_eq!(g.band_of(7.0), 3);
        assert_eq!(g.band_label(0), -1);
        assert_eq!(g.band_label(3), 2);
    }

    #[test]
    fn left_endpoint_values() {
        let m = example_5_1();
        let g = SpaceGrid::build(0.5, 1.0, 2).unwrap();
        let ap = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
        // band (0.5, 0.75] is b = 2; μ_2(0.5) = 0.25
        assert!(close(ap.mu_hat(1, 2), 0.25, 1e-15));
    }

    #[test]
    fn stored_values_match_reevaluation() {
        let m = example_5_2();
        let g = SpaceGrid::build(0.3, 1.0, 7).unwrap();
        for rule in [SamplingRule::LeftEndpoint, SamplingRule::Midpoint] {
            let ap = GridApproximation::build(&m, &g, rule).unwrap();
            for b in 0..g.bands() {
                let (lo, hi) = g.band(b);
                let x = if rule == SamplingRule::Midpoint { 0.5 * (lo + hi) } else { lo };
                for i in 0..3 {
                    let (mu, sigma) = m.eval_coefficients(i, x).unwrap();
                    assert_eq!(ap.mu_hat(i, b), mu);
                    assert_eq!(ap.sigma_hat(i, b), sigma);
                }
                assert_eq!(ap.lambda_hat(b), m.eval_generator(x).unwrap().as_slice());
            }
            ap.check_generators().unwrap();
        }
    }

    #[test]
    fn constant_coefficients_are_fixed_points() {
        let m = brownian(0.3, 1.2, 0.4, 1.0, 0.0);
        let g = SpaceGrid::build(0.4, 1.0, 3).unwrap();
        for rule in [SamplingRule::LeftEndpoint, SamplingRule::Midpoint, SamplingRule::MinAbs] {
            let ap = GridApproximation::build(&m, &g, rule).unwrap();
            for b in 0..g.bands() {
                assert_eq!(ap.mu_hat(0, b), 0.3);
                assert_eq!(ap.sigma_hat(0, b), 1.2);
            }
            let r = approximation_report(&m, &ap, RateParams::default(), 100.0).unwrap();
            assert_eq!(r.mu_sup_error, 0.0);
            assert_eq!(r.sigma_sup_error, 0.0);
            assert_eq!(r.lambda_sup_error, 0.0);
            assert!(r.coefficient_bound_holds && r.lambda_bound_holds);
        }
    }

    /// Dense-sampling oracle for `sup_x |μ_i(x) - μ̂_i(x)|`.
    fn sampled_mu_error(m: &HybridModel, ap: &GridApproximation, per_band: usize) -> f64 {
        let g = ap.grid();
        let mut e: f64 = 0.0;
        for b in 0..g.bands() {
            let (lo, hi) = g.band(b);
            for k in 0..=per_band {
                let x = lo + (hi - lo) * k as f64 / per_band as f64;
                for i in 0..m.states() {
                    e = e.max((m.mu_poly(i).eval(x) - ap.mu_hat(i, b)).abs());
                }
            }
        }
        e
    }

    #[test]
    fn example_sup_errors_m50() {
        let m = example_5_1();
        let g = SpaceGrid::build(0.5, 1.0, 50).unwrap();
        let ap = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
        // max slope (|μ_2'| = |μ_3'(0)| = 1 for μ_3, 0.5 for μ_2) times band width; μ_3 dominates near 0.
        let oracle = sampled_mu_error(&m, &ap, 200);
        let r = approximation_report(&m, &ap, RateParams::default(), 1e6).unwrap();
        assert!(close(r.mu_sup_error, oracle, 1e-12), "{} vs {}", r.mu_sup_error, oracle);
        assert!(close(r.lambda_sup_error, 0.2, 1e-12), "{}", r.lambda_sup_error);
        assert_eq!(r.sigma_sup_error, 0.0);
    }

    #[test]
    fn mu_2_sup_error_is_slope_times_width() {
        let m = example_5_1();
        let g = SpaceGrid::build(0.5, 1.0, 50).unwrap();
        let ap = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
        let mut e: f64 = 0.0;
        for b in 0..g.bands() {
            let (lo, hi) = g.band(b);
            e = e.max(sup_abs_diff(m.mu_poly(1), ap.mu_hat(1, b), lo, hi));
        }
        assert!(close(e, 0.005, 1e-15), "{e}");
    }

    #[test]
    fn refinement_never_increases_error() {
        let m = example_5_1();
        let mut prev = f64::INFINITY;
        for mm in [2, 4, 8, 16, 32, 64] {
            let g = SpaceGrid::build(0.5, 1.0, mm).unwrap();
            let ap = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
            let e = sampled_mu_error(&m, &ap, 50);
            assert!(e <= prev + 1e-15, "M={mm}: {e} > {prev}");
            prev = e;
        }
    }

    #[test]
    fn min_abs_respects_magnitude() {
        // μ(x) = x - 0.3 crosses zero inside a band; σ(x) = 1 + x.
        let m = HybridModel::new(
            vec![PolyExpr::new(vec![-0.3, 1.0]).unwrap()],
            vec![PolyExpr::new(vec![1.0, 1.0]).unwrap()],
            vec![vec![PolyExpr::zero()]],
            1.0,
            0.5,
            0,
            0.0,
            None,
        )
        .unwrap();
        let g = SpaceGrid::build(0.5, 1.0, 2).unwrap();
        let ap = GridApproximation::build(&m, &g, SamplingRule::MinAbs).unwrap();
        for b in 0..g.bands() {
            let (lo, hi) = g.band(b);
            let ends = m.mu_poly(0).eval(lo).abs().min(m.mu_poly(0).eval(hi).abs());
            assert!(ap.mu_hat(0, b).abs() <= ends);
            let dense_min = dense_grid(lo, hi, 1000)
                .map(|x| m.mu_poly(0).eval(x).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(ap.mu_hat(0, b).abs() <= dense_min + 1e-15);
        }
        // band (0.25, 0.5) contains the root 0.3
        assert_eq!(ap.mu_hat(0, 1), 0.0);
        let r = approximation_report(&m, &ap, RateParams::default(), 10.0).unwrap();
        assert!(r.magnitude_violations.is_empty());

        let left = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
        let r = approximation_report(&m, &left, RateParams::default(), 10.0).unwrap();
        assert!(!r.magnitude_violations.is_empty());
    }

    #[test]
    fn bound_substitution() {
        assert!(close(coefficient_rate_bound(1e6, 0.0, 0.5), 0.001, 1e-15));
    }

    #[test]
    fn report_rejects_small_n() {
        let m = example_5_1();
        let g = SpaceGrid::build(0.5, 1.0, 2).unwrap();
        let ap = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
        assert!(approximation_report(&m, &ap, RateParams::default(), 1.5).is_err());
    }
}
