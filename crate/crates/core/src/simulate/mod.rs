//! Pathwise construction of `(J, X)` by uniformization.
//!
//! A Poisson clock of rate `γ` marks candidate jump epochs. Between epochs
//! the level follows an Euler–Maruyama discretization of the SDE in the
//! frozen state; at each epoch the next state is read off a partition of
//! `[0, 1)` built from the row `I + Λ(X(θ))/γ`.

mod coupled;

pub use coupled::{simulate_coupled, CoupledConfig, CoupledSample};

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::model::{Dynamics, HybridModel};

pub const DEFAULT_DT: f64 = 1e-3;

/// Bridge crossing probabilities below this are treated as zero (no draw).
const BRIDGE_NEGLIGIBLE: f64 = 1e-17;

/// How a band exit is detected between two fine-grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingRule {
    /// First fine-grid point strictly outside `[0, a]`.
    Discrete,
    /// Additionally tests each step for an excursion of the Brownian bridge
    /// between its endpoints (removes the `O(√dt)` monitoring bias).
    #[default]
    BrownianBridge,
}

/// Where the simulated problem lives: the band, start and killing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Problem {
    pub a: f64,
    pub u: f64,
    pub i0: usize,
    pub q: f64,
    pub gamma: f64,
}

impl Problem {
    pub fn of(model: &HybridModel) -> Self {
        Self {
            a: model.band_high(),
            u: model.start_level(),
            i0: model.start_state(),
            q: model.kill_rate(),
            gamma: model.uniformization_rate(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub crossing: CrossingRule,
    /// Keep epochs, visited states and the fine trajectory in the sample.
    pub record: bool,
}

impl SimConfig {
    pub fn new(dt: f64, horizon: f64) -> Self {
        Self {
            dt,
            horizon,
            crossing: CrossingRule::default(),
            record: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record = true;
        self
    }

    pub fn with_crossing(mut self, rule: CrossingRule) -> Self {
        self.crossing = rule;
        self
    }
}

/// `10 a² / min σ²` over the positive diffusion coefficients sampled on the band,
/// or `100 a` when no state diffuses.
pub fn default_horizon(model: &HybridModel) -> f64 {
    let a = model.band_high();
    let mut min_var = f64::INFINITY;
    for i in 0..model.states() {
        for k in 0..=100 {
            let s = model.sigma_poly(i).eval(a * k as f64 / 100.0);
            if s != 0.0 {
                min_var = min_var.min(s * s);
            }
        }
    }
    if min_var.is_finite() {
        10.0 * a * a / min_var
    } else {
        100.0 * a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Exit {
    CrossedLow { time: f64 },
    CrossedHigh { time: f64 },
    Killed { time: f64 },
    Horizon,
}

impl Exit {
    pub fn time(&self) -> Option<f64> {
        match *self {
            Exit::CrossedLow { time } | Exit::CrossedHigh { time } | Exit::Killed { time } => Some(time),
            Exit::Horizon => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathSample {
    /// `θ_0 = 0, θ_1, …` up to the stop (recorded runs only).
    pub epochs: Vec<f64>,
    /// `J(θ_ℓ)` for each recorded epoch.
    pub states: Vec<usize>,
    /// Fine `(t, x)` trajectory (recorded runs only).
    pub trajectory: Vec<(f64, f64)>,
    pub exit: Exit,
    pub terminal_state: usize,
    pub terminal_level: f64,
}

/// One fine step as seen by an observer: state and level at the start of
/// the step and its length.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    pub t: f64,
    pub state: usize,
    pub x: f64,
    pub dt: f64,
}

/// Index of the next state given `U` in `[0, 1)`: the row `I + Λ_i·(x)/γ`
/// partitions `[0, 1)` into closed-left, open-right intervals in state order.
#[inline]
pub fn select_next_state<D: Dynamics + ?Sized>(d: &D, i: usize, x: f64, gamma: f64, u: f64) -> usize {
    let p = d.states();
    let mut cum = 0.0;
    let mut last_positive = i;
    for k in 0..p {
        let w = kernel_entry(d, i, k, x, gamma);
        if w > 0.0 {
            last_positive = k;
            if u < cum + w {
                return k;
            }
        }
        cum += w;
    }
    last_positive
}

/// `δ_ik + Λ_ik(x)/γ`, clipped at zero.
#[inline]
pub(crate) fn kernel_entry<D: Dynamics + ?Sized>(d: &D, i: usize, k: usize, x: f64, gamma: f64) -> f64 {
    let delta = if i == k { 1.0 } else { 0.0 };
    (delta + d.rate(i, k, x) / gamma).max(0.0)
}

/// Euler–Maruyama trajectory of the SDE frozen in state `i`, no stopping.
/// Ends with a partial step of length `duration mod dt`.
pub fn euler_segment<D: Dynamics + ?Sized, R: Rng + ?Sized>(
    d: &D,
    i: usize,
    x0: f64,
    duration: f64,
    dt: f64,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    assert!(dt > 0.0 && duration >= 0.0, "need dt > 0 and duration >= 0");
    let mut out = vec![(0.0, x0)];
    let (mut t, mut x) = (0.0, x0);
    while t < duration {
        let h = dt.min(duration - t);
        let z: f64 = StandardNormal.sample(rng);
        x += d.drift(i, x) * h + d.diffusion(i, x) * h.sqrt() * z;
        t = if duration - t <= dt { duration } else { t + h };
        out.push((t, x));
    }
    out
}

/// Simulates `(J, X)` from `(i0, u)` until the first of band exit, killing
/// or the horizon.
pub fn simulate_hybrid<D: Dynamics + ?Sized, R: Rng + ?Sized>(
    d: &D,
    problem: &Problem,
    cfg: &SimConfig,
    rng: &mut R,
) -> PathSample {
    simulate_hybrid_with(d, problem, cfg, rng, |_| {})
}

/// [`simulate_hybrid`] with a callback invoked for every fine step.
pub fn simulate_hybrid_with<D, R, F>(d: &D, problem: &Problem, cfg: &SimConfig, rng: &mut R, mut on_step: F) -> PathSample
where
    D: Dynamics + ?Sized,
    R: Rng + ?Sized,
    F: FnMut(Step),
{
    let Problem { a, u, i0, q, gamma } = *problem;
    let dt = cfg.dt;
    assert!(dt > 0.0, "dt must be positive");
    let clock = Exp::new(gamma).expect("positive uniformization rate");

    let kill_at = if q > 0.0 {
        Exp::new(q).expect("positive killing rate").sample(rng)
    } else {
        f64::INFINITY
    };
    let stop_at = kill_at.min(cfg.horizon);

    let mut sample = PathSample {
        epochs: Vec::new(),
        states: Vec::new(),
        trajectory: Vec::new(),
        exit: Exit::Horizon,
        terminal_state: i0,
        terminal_level: u,
    };
    if cfg.record {
        sample.epochs.push(0.0);
        sample.states.push(i0);
        sample.trajectory.push((0.0, u));
    }

    let (mut t, mut x, mut state) = (0.0_f64, u, i0);
    let mut next_epoch = clock.sample(rng);
    loop {
        let target = next_epoch.min(stop_at);
        while t < target {
            let h = dt.min(target - t);
            let mu = d.drift(state, x);
            let sigma = d.diffusion(state, x);
            let z: f64 = StandardNormal.sample(rng);
            let x_new = x + mu * h + sigma * h.sqrt() * z;
            on_step(Step { t, state, x, dt: h });
            let t_new = if target - t <= dt { target } else { t + h };

            let exit = if x_new < 0.0 {
                Some((Exit::CrossedLow { time: t_new }, 0.0))
            } else if x_new > a {
                Some((Exit::CrossedHigh { time: t_new }, a))
            } else if cfg.crossing == CrossingRule::BrownianBridge && sigma != 0.0 {
                bridge_exit(x, x_new, a, sigma * sigma * h, rng).map(|low| {
                    if low {
                        (Exit::CrossedLow { time: t_new }, 0.0)
                    } else {
                        (Exit::CrossedHigh { time: t_new }, a)
                    }
                })
            } else {
                None
            };
            if let Some((exit, level)) = exit {
                if cfg.record {
                    sample.trajectory.push((t_new, x_new));
                }
                sample.exit = exit;
                sample.terminal_state = state;
                sample.terminal_level = if cfg.crossing == CrossingRule::Discrete { x_new } else { level };
                return sample;
            }
            t = t_new;
            x = x_new;
            if cfg.record {
                sample.trajectory.push((t, x));
            }
        }
        if t >= stop_at {
            sample.exit = if kill_at <= cfg.horizon {
                Exit::Killed { time: kill_at }
            } else {
                Exit::Horizon
            };
            sample.terminal_state = state;
            sample.terminal_level = x;
            return sample;
        }
        // Uniformization epoch.
        let uu: f64 = rng.random();
        state = select_next_state(d, state, x, gamma, uu);
        if cfg.record {
            sample.epochs.push(t);
            sample.states.push(state);
        }
        next_epoch = t + clock.sample(rng);
    }
}

/// Tests whether a Brownian bridge from `x0` to `x1` (both in `[0, a]`) with
/// variance `var` over the step leaves the band. `Some(true)` = low side.
#[inline]
fn bridge_exit<R: Rng + ?Sized>(x0: f64, x1: f64, a: f64, var: f64, rng: &mut R) -> Option<bool> {
    let p_low = (-2.0 * x0 * x1 / var).exp();
    let p_high = (-2.0 * (a - x0) * (a - x1) / var).exp();
    if p_low + p_high < BRIDGE_NEGLIGIBLE {
        return None;
    }
    let v: f64 = rng.random();
    if v < p_low {
        Some(true)
    } else if v < p_low + p_high {
        Some(false)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::examples::{brownian, example_5_1};
    use crate::model::PolyExpr;
    use crate::rng::RngStream;

    fn frozen_model(diag: [f64; 3], gamma: f64, x: f64) -> HybridModel {
        // Constant-Λ three-state model, X frozen (μ = σ = 0).
        let c = PolyExpr::constant;
        let lam = vec![
            vec![c(diag[0]), c(-diag[0] * 0.25), c(-diag[0] * 0.75)],
            vec![c(-diag[1]), c(diag[1]), c(0.0)],
            vec![c(0.0), c(-diag[2]), c(diag[2])],
        ];
        HybridModel::new(vec![PolyExpr::zero(); 3], vec![PolyExpr::zero(); 3], lam, 1.0, x, 0, 0.0, Some(gamma)).unwrap()
    }

    #[test]
    fn degenerate_sde_is_constant() {
        let m = brownian(0.0, 0.0, 0.3, 1.0, 0.0);
        let mut rng = RngStream::new(1, 0).rng();
        let tr = euler_segment(&m, 0, 0.3, 0.05, 0.01, &mut rng);
        assert!(tr.iter().all(|&(_, x)| x == 0.3));
        assert_eq!(tr.last().unwrap().0, 0.05);
    }

    #[test]
    fn constant_drift_is_exact() {
        let m = brownian(0.7, 0.0, 0.1, 5.0, 0.0);
        let mut rng = RngStream::new(1, 0).rng();
        let tr = euler_segment(&m, 0, 0.1, 1.0, 0.03, &mut rng);
        for &(t, x) in &tr {
            assert!((x - (0.1 + 0.7 * t)).abs() < 1e-13, "t={t} x={x}");
        }
        // 1.0 / 0.03 leaves a partial final step
        let n = tr.len();
        assert!((tr[n - 1].0 - tr[n - 2].0 - 0.01).abs() < 1e-12);
        assert_eq!(tr[n - 1].0, 1.0);
    }

    #[test]
    fn brownian_moments() {
        // Oracle: X(1) - x0 ~ N(0, 1).
        let m = brownian(0.0, 1.0, 0.5, 1.0, 0.0);
        let n = 100_000;
        let ends: Vec<f64> = (0..n)
            .map(|k| {
                let mut rng = RngStream::new(11, k).rng();
                euler_segment(&m, 0, 0.0, 1.0, 0.25, &mut rng).last().unwrap().1
            })
            .collect();
        let mean = ends.iter().sum::<f64>() / n as f64;
        let var = ends.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() <= 3.0 / (n as f64).sqrt(), "{mean}");
        assert!((var - 1.0).abs() <= 0.03, "{var}");
    }

    #[test]
    fn selection_follows_partition() {
        let m = frozen_model([-2.0, -1.0, -1.0], 4.0, 0.5);
        // row 0 of I + Λ/γ = [0.5, 0.125, 0.375]
        assert_eq!(select_next_state(&m, 0, 0.5, 4.0, 0.0), 0);
        assert_eq!(select_next_state(&m, 0, 0.5, 4.0, 0.4999), 0);
        assert_eq!(select_next_state(&m, 0, 0.5, 4.0, 0.5), 1);
        assert_eq!(select_next_state(&m, 0, 0.5, 4.0, 0.625), 2);
        assert_eq!(select_next_state(&m, 0, 0.5, 4.0, 0.9999999), 2);
    }

    #[test]
    fn recorded_path_invariants() {
        let m = example_5_1();
        let pb = Problem::of(&m);
        let cfg = SimConfig::new(1e-3, 50.0).recording().with_crossing(CrossingRule::Discrete);
        for s in 0..200 {
            let mut rng = RngStream::new(3, s).rng();
            let p = simulate_hybrid(&m, &pb, &cfg, &mut rng);
            let tr = &p.trajectory;
            for w in tr.windows(2) {
                assert!(w[1].0 - w[0].0 <= 1e-3 + 1e-12);
                assert!(w[1].0 > w[0].0);
            }
            match p.exit {
                Exit::CrossedLow { time } => {
                    assert!(tr.last().unwrap().1 < 0.0);
                    assert_eq!(tr.last().unwrap().0, time);
                    assert!(tr[..tr.len() - 1].iter().all(|&(_, x)| (0.0..=1.0).contains(&x)));
                }
                Exit::CrossedHigh { .. } => {
                    assert!(tr.last().unwrap().1 > 1.0);
                    assert!(tr[..tr.len() - 1].iter().all(|&(_, x)| (0.0..=1.0).contains(&x)));
                }
                other => panic!("unexpected exit {other:?}"),
            }
            // Epochs are fine-grid points; the level is continuous there by construction.
            for &e in &p.epochs[1..] {
                assert!(tr.iter().any(|&(t, _)| t == e), "epoch {e} not on fine grid");
            }
            assert_eq!(p.epochs.len(), p.states.len());
        }
    }

    #[test]
    fn identical_stream_identical_path() {
        let m = example_5_1();
        let pb = Problem::of(&m);
        let cfg = SimConfig::new(1e-3, 10.0).recording();
        let a = simulate_hybrid(&m, &pb, &cfg, &mut RngStream::new(9, 4).rng());
        let b = simulate_hybrid(&m, &pb, &cfg, &mut RngStream::new(9, 4).rng());
        assert_eq!(a, b);
        let c = simulate_hybrid(&m, &pb, &cfg, &mut RngStream::new(9, 5).rng());
        assert_ne!(a, c);
    }

    #[test]
    fn killing_and_horizon() {
        let m = brownian(0.0, 0.0, 0.5, 1.0, 5.0);
        let pb = Problem::of(&m);
        let cfg = SimConfig::new(1e-2, 1e6);
        let p = simulate_hybrid(&m, &pb, &cfg, &mut RngStream::new(1, 0).rng());
        assert!(matches!(p.exit, Exit::Killed { .. }));

        let m = brownian(0.0, 0.0, 0.5, 1.0, 0.0);
        let p = simulate_hybrid(&m, &Problem::of(&m), &SimConfig::new(1e-2, 0.5), &mut RngStream::new(1, 0).rng());
        assert_eq!(p.exit, Exit::Horizon);
        assert_eq!(p.terminal_level, 0.5);
    }

    #[test]
    fn steps_cover_the_path() {
        let m = example_5_1();
        let pb = Problem::of(&m);
        let cfg = SimConfig::new(1e-3, 10.0);
        let mut total = 0.0;
        let p = simulate_hybrid_with(&m, &pb, &cfg, &mut RngStream::new(2, 2).rng(), |s| total += s.dt);
        assert!((total - p.exit.time().unwrap()).abs() < 1e-9);
    }

    #[test]
    fn default_horizon_values() {
        assert_eq!(default_horizon(&example_5_1()), 10.0);
        assert_eq!(default_horizon(&brownian(0.5, 2.0, 0.5, 1.0, 0.0)), 2.5);
        assert_eq!(default_horizon(&brownian(0.5, 0.0, 0.5, 1.0, 0.0)), 100.0);
    }
}
