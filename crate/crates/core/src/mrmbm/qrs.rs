//! Level-dependent `(Q, R, S)` blocks of the regenerative queue over the
//! state space `E ∪ {∂₀}` (the reset state is the last index, `p`).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridgen::{GridApproximation, SpaceGrid};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QrsSpec {
    /// Regular state count `p`; `∂₀` has index `p`.
    pub states: usize,
    pub grid: SpaceGrid,
    /// Inside band `b` (label `m = b - M + 1`).
    pub q_band: Vec<Matrix>,
    pub r_band: Vec<Vec<f64>>,
    pub s_band: Vec<Vec<f64>>,
    /// At grid point `g` (label `m = g - M`).
    pub q_point: Vec<Matrix>,
    pub r_point: Vec<Vec<f64>>,
    pub kill_rate: f64,
    pub start_state: usize,
    pub start_level: f64,
}

impl QrsSpec {
    pub fn reset_state(&self) -> usize {
        self.states
    }

    /// Every `Q` block has nonnegative off-diagonals and zero row sums.
    pub fn check_generators(&self, tol: f64) -> Result<()> {
        for (label, q) in self
            .q_band
            .iter()
            .map(|q| ("band", q))
            .chain(self.q_point.iter().map(|q| ("point", q)))
        {
            for (i, row) in q.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                let neg = row.iter().enumerate().any(|(k, &v)| k != i && v < -tol);
                if neg || sum.abs() > tol {
                    return Err(Error::Numerical(format!("{label} Q block row {i} is not a generator row")));
                }
            }
        }
        Ok(())
    }
}

fn block(lambda: &[Vec<f64>], q: f64) -> Matrix {
    let p = lambda.len();
    let mut m = vec![vec![0.0; p + 1]; p + 1];
    for i in 0..p {
        for k in 0..p {
            m[i][k] = lambda[i][k];
        }
        m[i][i] -= q;
        m[i][p] = q;
    }
    m
}

/// Assembles the blocks for restart state `i0` (0-based), killing rate `q`,
/// and start level `u`, which must be the grid's `ζ_0` exactly.
pub fn assemble_qrs(approx: &GridApproximation, q: f64, i0: usize, u: f64) -> Result<QrsSpec> {
    let grid = approx.grid();
    let p = approx.states();
    if grid.start_level() != u {
        return Err(Error::Grid(format!(
            "grid has ζ_0 = {} but the start level is {u}",
            grid.start_level()
        )));
    }
    if i0 >= p {
        return Err(Error::StateOutOfRange { index: i0, states: p });
    }
    if !(q.is_finite() && q >= 0.0) {
        return Err(Error::input("q", "killing rate must be finite and nonnegative"));
    }
    let mm = grid.half();
    let nb = grid.bands();

    let q_band: Vec<Matrix> = (0..nb).map(|b| block(approx.lambda_hat(b), q)).collect();
    let r_band = (0..nb)
        .map(|b| {
            let mut r: Vec<f64> = (0..p).map(|i| approx.mu_hat(i, b)).collect();
            r.push(if b < mm { 1.0 } else { -1.0 });
            r
        })
        .collect();
    let s_band = (0..nb)
        .map(|b| {
            let mut s: Vec<f64> = (0..p).map(|i| approx.sigma_hat(i, b).abs()).collect();
            s.push(0.0);
            s
        })
        .collect();

    let boundary = {
        let mut m = vec![vec![0.0; p + 1]; p + 1];
        for (i, row) in m.iter_mut().enumerate().take(p) {
            row[i] = -1.0;
            row[p] = 1.0;
        }
        m
    };
    let mut q_point = Vec::with_capacity(2 * mm + 1);
    let mut r_point = Vec::with_capacity(2 * mm + 1);
    for g in 0..=2 * mm {
        if g == 0 || g == 2 * mm {
            q_point.push(boundary.clone());
            let mut r = vec![0.0; p + 1];
            r[p] = if g == 0 { 1.0 } else { -1.0 };
            r_point.push(r);
            continue;
        }
        // Right-continuous approximations: the value at ζ_m is the band starting there.
        let mut qm = block(approx.lambda_hat(g), q);
        let mut r: Vec<f64> = (0..p).map(|i| approx.mu_hat(i, g)).collect();
        if g == mm {
            qm[p][i0] = 1.0;
            qm[p][p] = -1.0;
            r.push(0.0);
        } else {
            r.push(if g < mm { 1.0 } else { -1.0 });
        }
        q_point.push(qm);
        r_point.push(r);
    }

    Ok(QrsSpec {
        states: p,
        grid: grid.clone(),
        q_band,
        r_band,
        s_band,
        q_point,
        r_point,
        kill_rate: q,
        start_state: i0,
        start_level: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridgen::SamplingRule;
    use crate::model::examples::example_5_1;

    fn spec(m: usize, q: f64) -> (GridApproximation, QrsSpec) {
        let model = example_5_1();
        let g = SpaceGrid::build(0.5, 1.0, m).unwrap();
        let ap = GridApproximation::build(&model, &g, SamplingRule::LeftEndpoint).unwrap();
        let s = assemble_qrs(&ap, q, 1, 0.5).unwrap();
        (ap, s)
    }

    #[test]
    fn zero_killing_band_blocks() {
        let (ap, s) = spec(4, 0.0);
        for b in 0..8 {
            for i in 0..3 {
                for k in 0..3 {
                    assert_eq!(s.q_band[b][i][k], ap.lambda_hat(b)[i][k]);
                }
                assert_eq!(s.q_band[b][i][3], 0.0);
            }
            assert!(s.q_band[b][3].iter().all(|&v| v == 0.0));
        }
        s.check_generators(1e-12).unwrap();
    }

    #[test]
    fn killing_column() {
        let (ap, s) = spec(4, 0.3);
        for b in 0..8 {
            for i in 0..3 {
                assert_eq!(s.q_band[b][i][3], 0.3);
                assert!((s.q_band[b][i][i] - (ap.lambda_hat(b)[i][i] - 0.3)).abs() < 1e-15);
            }
        }
        s.check_generators(1e-12).unwrap();
    }

    #[test]
    fn boundary_point_blocks() {
        let (_, s) = spec(4, 0.3);
        for g in [0, 8] {
            let q = &s.q_point[g];
            for j in 0..3 {
                assert_eq!(q[j][j], -1.0);
                assert_eq!(q[j][3], 1.0);
                assert_eq!(q[j].iter().sum::<f64>(), 0.0);
            }
            assert!(q[3].iter().all(|&v| v == 0.0));
        }
        assert_eq!(s.r_point[0], vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(s.r_point[8], vec![0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn restart_point_and_reset_drift() {
        let (ap, s) = spec(4, 0.0);
        let q0 = &s.q_point[4];
        assert_eq!(q0[3], vec![0.0, 1.0, 0.0, -1.0]);
        assert_eq!(s.r_point[4][3], 0.0);
        for b in 0..8 {
            assert_eq!(s.r_band[b][3], if b < 4 { 1.0 } else { -1.0 });
            assert_eq!(s.s_band[b][3], 0.0);
            for i in 0..3 {
                assert_eq!(s.r_band[b][i], ap.mu_hat(i, b));
                assert_eq!(s.s_band[b][i], 1.0);
            }
        }
        for g in 1..8 {
            if g != 4 {
                assert_eq!(s.r_point[g][3], if g < 4 { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn rejects_mismatched_start() {
        let model = example_5_1();
        let g = SpaceGrid::build(0.4, 1.0, 4).unwrap();
        let ap = GridApproximation::build(&model, &g, SamplingRule::LeftEndpoint).unwrap();
        assert!(matches!(assemble_qrs(&ap, 0.0, 1, 0.5), Err(Error::Grid(_))));
        assert!(assemble_qrs(&ap, 0.0, 3, 0.4).is_err());
    }
}
