//! Monte Carlo estimators of exit probabilities and occupation times, tests
//! of the jump law, and paired-seed decoupling studies.
//!
//! Path `k` always uses stream `k` of the run seed and results are reduced
//! in path order, so estimates do not depend on the worker count.

mod ks;

pub use ks::{kolmogorov_q, ks_test, KsResult};

use std::hash::{DefaultHasher, Hash, Hasher};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridgen::GridApproximation;
use crate::model::{Dynamics, HybridModel};
use crate::rng::RngStream;
use crate::simulate::{
    select_next_state, simulate_coupled, simulate_hybrid, simulate_hybrid_with, CoupledConfig, CrossingRule,
    Exit, Problem, SimConfig, DEFAULT_DT,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    /// `None` uses [`crate::simulate::default_horizon`].
    pub horizon: Option<f64>,
    pub crossing: CrossingRule,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            dt: DEFAULT_DT,
            seed: 0,
            horizon: None,
            crossing: CrossingRule::default(),
        }
    }
}

impl McConfig {
    pub fn new(n_paths: usize, dt: f64, seed: u64) -> Self {
        Self {
            n_paths,
            dt,
            seed,
            ..Self::default()
        }
    }

    fn check(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::input("n_paths", "must be at least 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::input("dt", "must be positive"));
        }
        if let Some(h) = self.horizon {
            if !(h > 0.0) {
                return Err(Error::input("horizon", "must be positive"));
            }
        }
        Ok(())
    }

    fn sim(&self, horizon: f64) -> SimConfig {
        SimConfig::new(self.dt, horizon).with_crossing(self.crossing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub config_hash: u64,
}

impl McEstimate {
    /// Bernoulli proportion with `SE = √(p(1-p)/n)`.
    fn proportion(hits: usize, n: usize, hash: u64) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            value: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
            n_paths: n,
            config_hash: hash,
        }
    }

    /// Sample mean with the standard error of the mean.
    fn mean(xs: &[f64], hash: u64) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            n_paths: n,
            config_hash: hash,
        }
    }

    /// `|value - target| <= k·SE`.
    pub fn covers(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

fn config_hash(label: &str, problem: &Problem, cfg: &McConfig, horizon: f64, extra: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    label.hash(&mut h);
    for v in [problem.a, problem.u, problem.q, problem.gamma, cfg.dt, horizon]
        .iter()
        .chain(extra)
    {
        v.to_bits().hash(&mut h);
    }
    (problem.i0, cfg.n_paths, cfg.seed, cfg.crossing == CrossingRule::Discrete).hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PassageEstimates {
    pub m_minus: Vec<McEstimate>,
    pub m_plus: Vec<McEstimate>,
    pub killed: usize,
    pub censored: usize,
    pub n_paths: usize,
    pub horizon: f64,
    /// `E[τ ∧ e_q ∧ horizon]`.
    pub mean_stop_time: McEstimate,
}

impl PassageEstimates {
    pub fn killed_fraction(&self) -> f64 {
        self.killed as f64 / self.n_paths as f64
    }
    pub fn censored_fraction(&self) -> f64 {
        self.censored as f64 / self.n_paths as f64
    }
}

/// Exit-side and exit-state frequencies over `n_paths` paths of `d`.
pub fn mc_passage<D: Dynamics + ?Sized>(
    d: &D,
    problem: &Problem,
    cfg: &McConfig,
    default_horizon: f64,
) -> Result<PassageEstimates> {
    cfg.check()?;
    let horizon = cfg.horizon.unwrap_or(default_horizon);
    let sim = cfg.sim(horizon);
    let outcomes: Vec<(Exit, usize)> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let s = simulate_hybrid(d, problem, &sim, &mut RngStream::new(cfg.seed, k).rng());
            (s.exit, s.terminal_state)
        })
        .collect();

    let p = d.states();
    let n = cfg.n_paths;
    let hash = config_hash("passage", problem, cfg, horizon, &[]);
    let (mut low, mut high) = (vec![0usize; p], vec![0usize; p]);
    let (mut killed, mut censored) = (0, 0);
    let mut times = Vec::with_capacity(n);
    for &(exit, j) in &outcomes {
        match exit {
            Exit::CrossedLow { .. } => low[j] += 1,
            Exit::CrossedHigh { .. } => high[j] += 1,
            Exit::Killed { .. } => killed += 1,
            Exit::Horizon => censored += 1,
        }
        times.push(exit.time().unwrap_or(horizon));
    }
    if censored > 0 {
        log::warn!("{censored} of {n} paths reached the horizon {horizon}");
    }
    Ok(PassageEstimates {
        m_minus: low.iter().map(|&c| McEstimate::proportion(c, n, hash)).collect(),
        m_plus: high.iter().map(|&c| McEstimate::proportion(c, n, hash)).collect(),
        killed,
        censored,
        n_paths: n,
        horizon,
        mean_stop_time: McEstimate::mean(&times, hash),
    })
}

/// Expected time in each state with `0 < X <= b` before exit or killing,
/// accumulated per fine step.
pub fn mc_occupation<D: Dynamics + ?Sized>(
    d: &D,
    problem: &Problem,
    b: f64,
    cfg: &McConfig,
    default_horizon: f64,
) -> Result<Vec<McEstimate>> {
    Ok(mc_occupation_levels(d, problem, &[b], cfg, default_horizon)?.remove(0))
}

/// [`mc_occupation`] for several levels from one set of paths, `[level][state]`.
pub fn mc_occupation_levels<D: Dynamics + ?Sized>(
    d: &D,
    problem: &Problem,
    levels: &[f64],
    cfg: &McConfig,
    default_horizon: f64,
) -> Result<Vec<Vec<McEstimate>>> {
    cfg.check()?;
    let horizon = cfg.horizon.unwrap_or(default_horizon);
    let sim = cfg.sim(horizon);
    let p = d.states();
    let nl = levels.len();
    let per_path: Vec<Vec<f64>> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|k| {
            let mut occ = vec![0.0; nl * p];
            simulate_hybrid_with(d, problem, &sim, &mut RngStream::new(cfg.seed, k).rng(), |s| {
                if s.x > 0.0 {
                    for (l, &b) in levels.iter().enumerate() {
                        if s.x <= b {
                            occ[l * p + s.state] += s.dt;
                        }
                    }
                }
            });
            occ
        })
        .collect();
    Ok(levels
        .iter()
        .enumerate()
        .map(|(l, &b)| {
            let hash = config_hash("occupation", problem, cfg, horizon, &[b]);
            (0..p)
                .map(|j| {
                    let xs: Vec<f64> = per_path.iter().map(|o| o[l * p + j]).collect();
                    McEstimate::mean(&xs, hash)
                })
                .collect()
        })
        .collect())
}

/// Holds `X` at its starting level so the jump law can be isolated.
pub struct Frozen<'a, D: ?Sized>(pub &'a D);

impl<D: Dynamics + ?Sized> Dynamics for Frozen<'_, D> {
    fn states(&self) -> usize {
        self.0.states()
    }
    fn drift(&self, _: usize, _: f64) -> f64 {
        0.0
    }
    fn diffusion(&self, _: usize, _: f64) -> f64 {
        0.0
    }
    fn rate(&self, i: usize, k: usize, x: f64) -> f64 {
        self.0.rate(i, k, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SojournTest {
    pub state: usize,
    pub x: f64,
    pub gamma: f64,
    /// `|Λ_ii(x)|`.
    pub rate: f64,
    pub mean_sojourn: f64,
    pub ks: KsResult,
}

/// Sojourn lengths in state `i` at frozen level `x` under uniformization at
/// rate `gamma`, tested against `Exp(|Λ_ii(x)|)`.
pub fn sojourn_law_test<D: Dynamics + ?Sized>(
    d: &D,
    i: usize,
    x: f64,
    gamma: f64,
    n_sojourns: usize,
    seed: u64,
) -> Result<SojournTest> {
    if i >= d.states() {
        return Err(Error::StateOutOfRange {
            index: i,
            states: d.states(),
        });
    }
    if n_sojourns == 0 {
        return Err(Error::input("n_sojourns", "must be at least 1"));
    }
    let rate = -d.rate(i, i, x);
    if !(rate > 0.0) {
        return Err(Error::input("state", format!("state {} never leaves at x = {x}", i + 1)));
    }
    if rate > gamma * (1.0 + 1e-12) {
        return Err(Error::input("gamma", format!("{gamma} does not dominate the exit rate {rate}")));
    }
    let clock = Exp::new(gamma).map_err(|e| Error::input("gamma", e.to_string()))?;
    let frozen = Frozen(d);
    let sojourns: Vec<f64> = (0..n_sojourns as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let mut t = 0.0;
            loop {
                t += clock.sample(&mut rng);
                let u: f64 = rng.random();
                if select_next_state(&frozen, i, x, gamma, u) != i {
                    return t;
                }
            }
        })
        .collect();
    let ks = ks_test(&sojourns, |s| 1.0 - (-rate * s).exp());
    Ok(SojournTest {
        state: i,
        x,
        gamma,
        rate,
        mean_sojourn: sojourns.iter().sum::<f64>() / n_sojourns as f64,
        ks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelEntryCheck {
    pub to: usize,
    pub expected: f64,
    pub observed: f64,
    pub std_error: f64,
    pub pass: bool,
}

/// Empirical law of `J(θ_1)` from the simulator with `X` frozen at `x`,
/// against row `i` of `I + Λ(x)/γ`, entry by entry within `k_se` binomial SEs.
pub fn kernel_row_test<D: Dynamics + ?Sized>(
    d: &D,
    i: usize,
    x: f64,
    gamma: f64,
    n: usize,
    seed: u64,
    k_se: f64,
) -> Result<Vec<KernelEntryCheck>> {
    let p = d.states();
    if i >= p {
        return Err(Error::StateOutOfRange { index: i, states: p });
    }
    if n == 0 {
        return Err(Error::input("n", "must be at least 1"));
    }
    let frozen = Frozen(d);
    let problem = Problem {
        a: 2.0 * x.abs().max(1.0),
        u: x,
        i0: i,
        q: 0.0,
        gamma,
    };
    // Stops right after the first epoch: the horizon is the first clock tick.
    let firsts: Vec<usize> = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(seed, k).rng();
            let mut probe = rng.clone();
            let first_tick: f64 = Exp::new(gamma).expect("positive rate").sample(&mut probe);
            let sim = SimConfig::new(f64::INFINITY, first_tick * (1.0 + 1e-12)).recording();
            let s = simulate_hybrid(&frozen, &problem, &sim, &mut rng);
            s.states.get(1).copied().unwrap_or(i)
        })
        .collect();
    let mut counts = vec![0usize; p];
    for j in firsts {
        counts[j] += 1;
    }
    Ok((0..p)
        .map(|k| {
            let expected = (if k == i { 1.0 } else { 0.0 }) + d.rate(i, k, x) / gamma;
            let observed = counts[k] as f64 / n as f64;
            let std_error = (expected * (1.0 - expected) / n as f64).sqrt();
            KernelEntryCheck {
                to: k,
                expected,
                observed,
                std_error,
                pass: (observed - expected).abs() <= k_se * std_error,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecouplingRow {
    pub label: String,
    pub decoupled: usize,
    pub n_paths: usize,
    pub frequency: f64,
    pub std_error: f64,
    pub sup_distance_q25: f64,
    pub sup_distance_median: f64,
    pub sup_distance_q75: f64,
    pub sup_distance_q90: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Couples `model` with each approximation on the same streams (path `k`
/// uses stream `k` for every approximation) up to `horizon`.
pub fn mc_decoupling(
    model: &HybridModel,
    approximations: &[(String, GridApproximation)],
    horizon: f64,
    cfg: &McConfig,
) -> Result<Vec<DecouplingRow>> {
    cfg.check()?;
    let ccfg = CoupledConfig {
        u: model.start_level(),
        i0: model.start_state(),
        gamma: model.uniformization_rate(),
        dt: cfg.dt,
        horizon,
        record: false,
    };
    approximations
        .iter()
        .map(|(label, approx)| {
            let samples: Vec<(bool, f64)> = (0..cfg.n_paths as u64)
                .into_par_iter()
                .map(|k| {
                    simulate_coupled(model, approx, &ccfg, &mut RngStream::new(cfg.seed, k).rng())
                        .map(|s| (s.decoupled(), s.sup_distance))
                })
                .collect::<Result<_>>()?;
            let decoupled = samples.iter().filter(|s| s.0).count();
            let mut dist: Vec<f64> = samples.iter().map(|s| s.1).collect();
            dist.sort_by(f64::total_cmp);
            let est = McEstimate::proportion(decoupled, cfg.n_paths, 0);
            Ok(DecouplingRow {
                label: label.clone(),
                decoupled,
                n_paths: cfg.n_paths,
                frequency: est.value,
                std_error: est.std_error,
                sup_distance_q25: quantile(&dist, 0.25),
                sup_distance_median: quantile(&dist, 0.5),
                sup_distance_q75: quantile(&dist, 0.75),
                sup_distance_q90: quantile(&dist, 0.9),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridgen::{SamplingRule, SpaceGrid};
    use crate::model::examples::{brownian, example_5_1};
    use crate::model::PolyExpr;
    use crate::simulate::default_horizon;

    fn scale_oracle(mu: f64, u: f64, a: f64) -> f64 {
        (1.0 - (-2.0 * mu * u).exp()) / (1.0 - (-2.0 * mu * a).exp())
    }

    #[test]
    fn brownian_exit_side() {
        let m = brownian(0.5, 1.0, 0.5, 1.0, 0.0);
        let est = mc_passage(&m, &Problem::of(&m), &McConfig::new(20_000, 1e-3, 3), default_horizon(&m)).unwrap();
        assert!(est.m_plus[0].covers(scale_oracle(0.5, 0.5, 1.0), 3.0), "{:?}", est.m_plus[0]);
        assert_eq!(est.censored, 0);
        // Mean exit time of BM with drift, from the Dynkin formula.
        let (mu, u, a) = (0.5_f64, 0.5, 1.0);
        let exact = (a * scale_oracle(mu, u, a) - u) / mu;
        assert!(est.mean_stop_time.covers(exact, 4.0), "{:?} vs {exact}", est.mean_stop_time);
    }

    #[test]
    fn outcomes_partition_paths() {
        let m = example_5_1().with_kill_rate(2.0).unwrap();
        let mut cfg = McConfig::new(2_000, 1e-3, 9);
        cfg.horizon = Some(0.3);
        let est = mc_passage(&m, &Problem::of(&m), &cfg, 1.0).unwrap();
        let exits: f64 = est.m_minus.iter().chain(&est.m_plus).map(|e| e.value * 2_000.0).sum();
        assert_eq!(exits.round() as usize + est.killed + est.censored, 2_000);
        assert!(est.killed > 0 && est.censored > 0);
    }

    #[test]
    fn heavy_killing_leaves_little_exit_mass() {
        let m = brownian(0.0, 1.0, 0.5, 1.0, 1e3);
        let est = mc_passage(&m, &Problem::of(&m), &McConfig::new(2_000, 1e-4, 1), 10.0).unwrap();
        let total: f64 = est.m_minus.iter().chain(&est.m_plus).map(|e| e.value).sum();
        assert!(total <= 0.1, "{total}");
    }

    #[test]
    fn occupation_matches_green_function() {
        let m = brownian(0.0, 1.0, 0.5, 1.0, 0.0);
        let occ = mc_occupation(&m, &Problem::of(&m), 0.5, &McConfig::new(20_000, 1e-3, 4), 10.0).unwrap();
        assert!(occ[0].covers(0.125, 3.0), "{:?}", occ[0]);
        let none = mc_occupation(&m, &Problem::of(&m), 0.0, &McConfig::new(100, 1e-3, 4), 10.0).unwrap();
        assert_eq!(none[0].value, 0.0);
        let many =
            mc_occupation_levels(&m, &Problem::of(&m), &[0.0, 0.5, 1.0], &McConfig::new(20_000, 1e-3, 4), 10.0).unwrap();
        assert_eq!(many[1][0], occ[0]);
        // Whole band: mean exit time u(a-u) = 0.25.
        assert!(many[2][0].covers(0.25, 3.0), "{:?}", many[2][0]);
    }

    #[test]
    fn estimates_independent_of_worker_count() {
        let m = example_5_1();
        let cfg = McConfig::new(500, 1e-3, 11);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_passage(&m, &Problem::of(&m), &cfg, 10.0).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn rejects_zero_paths() {
        let m = example_5_1();
        assert!(mc_passage(&m, &Problem::of(&m), &McConfig::new(0, 1e-3, 0), 1.0).is_err());
    }

    fn constant_two_state(rate: f64) -> HybridModel {
        HybridModel::new(
            vec![PolyExpr::zero(), PolyExpr::zero()],
            vec![PolyExpr::zero(), PolyExpr::zero()],
            vec![
                vec![PolyExpr::constant(-rate), PolyExpr::constant(rate)],
                vec![PolyExpr::constant(1.0), PolyExpr::constant(-1.0)],
            ],
            1.0,
            0.5,
            0,
            0.0,
            None,
        )
        .unwrap()
    }

    #[test]
    fn sojourns_are_exponential() {
        let m = constant_two_state(2.0);
        for gamma in [4.0, 2.0] {
            let r = sojourn_law_test(&m, 0, 0.5, gamma, 10_000, 17).unwrap();
            assert!(r.ks.p_value > 0.01, "gamma={gamma}: {:?}", r.ks);
            assert!((r.mean_sojourn - 0.5).abs() < 4.0 * 0.5 / 100.0);
        }
        // A too-fast clock is rejected, a wrong rate is detected.
        assert!(sojourn_law_test(&m, 0, 0.5, 1.0, 10, 0).is_err());
        let wrong = ks_test(
            &(0..2000).map(|k| -((k as f64 + 0.5) / 2000.0).ln() / 2.0).collect::<Vec<_>>(),
            |s| 1.0 - (-3.0 * s).exp(),
        );
        assert!(wrong.p_value < 0.01);
    }

    #[test]
    fn kernel_row_matches_uniformized_generator() {
        let m = example_5_1();
        for x in [0.2, 0.5, 0.9] {
            let rows = kernel_row_test(&m, 1, x, m.uniformization_rate(), 100_000, 23, 3.0).unwrap();
            for r in &rows {
                assert!(r.pass, "x={x}: {r:?}");
            }
            let total: f64 = rows.iter().map(|r| r.observed).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frozen_state_without_exit_rate_never_jumps() {
        let m = constant_two_state(0.0);
        assert!(sojourn_law_test(&m, 0, 0.5, 1.0, 10, 0).is_err());
        let rows = kernel_row_test(&m, 0, 0.5, 1.0, 1_000, 2, 3.0).unwrap();
        assert_eq!(rows[0].observed, 1.0);
    }

    #[test]
    fn decoupling_decreases_with_refinement() {
        let m = example_5_1();
        let approxes: Vec<(String, GridApproximation)> = [2usize, 50]
            .iter()
            .map(|&mm| {
                let g = SpaceGrid::build(0.5, 1.0, mm).unwrap();
                (format!("M={mm}"), GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap())
            })
            .collect();
        let rows = mc_decoupling(&m, &approxes, 1.0, &McConfig::new(1_000, 1e-3, 5)).unwrap();
        assert!(rows[1].frequency < rows[0].frequency, "{rows:?}");
        assert!(rows[1].sup_distance_median < rows[0].sup_distance_median);
    }

    #[test]
    fn exact_approximation_never_decouples() {
        let m = brownian(0.3, 1.0, 0.5, 1.0, 0.0);
        let g = SpaceGrid::build(0.5, 1.0, 4).unwrap();
        let ap = GridApproximation::build(&m, &g, SamplingRule::LeftEndpoint).unwrap();
        let rows = mc_decoupling(&m, &[("exact".into(), ap)], 1.0, &McConfig::new(200, 1e-3, 5)).unwrap();
        assert_eq!(rows[0].decoupled, 0);
        assert_eq!(rows[0].sup_distance_median, 0.0);
    }
}
