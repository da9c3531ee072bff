//! Joint construction of `(J, X)` and its grid approximation `(Ĵ, X̂)` on
//! shared randomness, with the decoupling tracker `Ĥ`.
//!
//! While `Ĥ = 0` both chains are in the same state. At an epoch the exact
//! chain's row `D` and the approximate row `D̂` are compared: if `U` lands in
//! `[C(k), C(k) + min(D(k), D̂(k)))` both chains move to `k`. Otherwise a
//! decoupling is declared and `Ĵ` is drawn from the residual
//! `D̂ - min(D, D̂)`. After that `Ĵ` follows its own row `D̂` with the same `U`.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::Serialize;

use super::{kernel_entry, select_next_state};
use crate::error::{Error, Result};
use crate::model::Dynamics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledConfig {
    pub u: f64,
    pub i0: usize,
    pub gamma: f64,
    pub dt: f64,
    pub horizon: f64,
    /// Keep both fine trajectories and state paths.
    pub record: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoupledSample {
    /// Uniformization epochs including `θ_0 = 0`.
    pub epochs: Vec<f64>,
    /// `J(θ_ℓ)`.
    pub j_path: Vec<usize>,
    /// `Ĵ(θ_ℓ)`.
    pub j_hat_path: Vec<usize>,
    /// `Ĥ_ℓ ∈ {0, 1, 2}`.
    pub h_seq: Vec<u8>,
    /// First epoch index with `Ĥ = 1`.
    pub decouple_epoch: Option<usize>,
    /// `sup |X - X̂|` over the shared fine grid up to the horizon.
    pub sup_distance: f64,
    /// Fine `(t, x, x̂)` triples (recorded runs only).
    pub trajectory: Vec<(f64, f64, f64)>,
}

impl CoupledSample {
    pub fn decoupled(&self) -> bool {
        self.decouple_epoch.is_some()
    }
}

/// Simulates the exact dynamics `exact` and the approximation `approx` on one
/// Poisson clock, one uniform per epoch and one Gaussian increment per fine
/// step, without band stopping.
pub fn simulate_coupled<E, A, R>(exact: &E, approx: &A, cfg: &CoupledConfig, rng: &mut R) -> Result<CoupledSample>
where
    E: Dynamics + ?Sized,
    A: Dynamics + ?Sized,
    R: Rng + ?Sized,
{
    let p = exact.states();
    if approx.states() != p {
        return Err(Error::Coupling(format!(
            "state counts differ: exact {p}, approximation {}",
            approx.states()
        )));
    }
    let gamma = cfg.gamma;
    let clock = Exp::new(gamma).map_err(|e| Error::Coupling(e.to_string()))?;

    let mut out = CoupledSample {
        epochs: vec![0.0],
        j_path: vec![cfg.i0],
        j_hat_path: vec![cfg.i0],
        h_seq: vec![0],
        decouple_epoch: None,
        sup_distance: 0.0,
        trajectory: Vec::new(),
    };
    if cfg.record {
        out.trajectory.push((0.0, cfg.u, cfg.u));
    }

    let (mut t, mut x, mut xh) = (0.0_f64, cfg.u, cfg.u);
    let (mut j, mut jh, mut h) = (cfg.i0, cfg.i0, 0u8);
    let mut d = vec![0.0; p];
    let mut dh = vec![0.0; p];
    let mut next_epoch = clock.sample(rng);
    loop {
        let target = next_epoch.min(cfg.horizon);
        while t < target {
            let step = cfg.dt.min(target - t);
            let z: f64 = StandardNormal.sample(rng);
            let sq = step.sqrt();
            let x_new = x + exact.drift(j, x) * step + exact.diffusion(j, x) * sq * z;
            let xh_new = xh + approx.drift(jh, xh) * step + approx.diffusion(jh, xh) * sq * z;
            t = if target - t <= cfg.dt { target } else { t + step };
            x = x_new;
            xh = xh_new;
            out.sup_distance = out.sup_distance.max((x - xh).abs());
            if cfg.record {
                out.trajectory.push((t, x, xh));
            }
        }
        if t >= cfg.horizon {
            return Ok(out);
        }

        let u: f64 = rng.random();
        let j_next = select_next_state(exact, j, x, gamma, u);
        let jh_next;
        if h == 0 {
            for k in 0..p {
                d[k] = kernel_entry(exact, j, k, x, gamma);
                dh[k] = kernel_entry(approx, j, k, xh, gamma);
            }
            let mut cum = 0.0;
            let mut overlap = None;
            for k in 0..p {
                let m = d[k].min(dh[k]);
                if u >= cum && u < cum + m {
                    overlap = Some(k);
                    break;
                }
                cum += d[k];
            }
            match overlap {
                Some(k) => {
                    if k != j_next {
                        return Err(Error::Coupling(format!(
                            "overlap target {k} differs from exact target {j_next}"
                        )));
                    }
                    jh_next = k;
                }
                None => {
                    let residual: Vec<f64> = (0..p).map(|k| (dh[k] - d[k].min(dh[k])).max(0.0)).collect();
                    let total: f64 = residual.iter().sum();
                    if !(total > 0.0) {
                        return Err(Error::Coupling(format!(
                            "decoupling declared with empty residual at epoch {}",
                            out.epochs.len()
                        )));
                    }
                    let v: f64 = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    let mut pick = residual.iter().rposition(|&r| r > 0.0).unwrap_or(0);
                    for (k, &r) in residual.iter().enumerate() {
                        if r > 0.0 && v < acc + r {
                            pick = k;
                            break;
                        }
                        acc += r;
                    }
                    jh_next = pick;
                    h = 1;
                    out.decouple_epoch = Some(out.epochs.len());
                }
            }
        } else {
            jh_next = select_next_state(approx, jh, xh, gamma, u);
            h = 2;
        }
        j = j_next;
        jh = jh_next;
        out.epochs.push(t);
        out.j_path.push(j);
        out.j_hat_path.push(jh);
        out.h_seq.push(h);
        next_epoch = t + clock.sample(rng);
    }
}
