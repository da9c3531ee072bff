//! Error-bound formulas and convergence studies.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridgen::{GridApproximation, SpaceGrid};
use crate::model::HybridModel;
use crate::montecarlo::{mc_decoupling, DecouplingRow, McConfig};
use crate::mrmbm::{solve, SolverConfig};
use crate::output::{num, write_atomic, write_json, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundConfig {
    /// Lipschitz constant `K`.
    pub k: f64,
    /// Universal constant `C_*` of the moment bound.
    pub c_star: f64,
    /// Rate exponents of the coefficient approximation `(log n)^β n^{-γ}`.
    pub beta: f64,
    pub gamma_rate: f64,
    /// Log-Hölder constant of the intensities.
    pub g: f64,
    pub epsilon_1: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            k: 1.0,
            c_star: 4.0,
            beta: 0.0,
            gamma_rate: 0.5,
            g: 1.0,
            epsilon_1: 0.1,
        }
    }
}

impl BoundConfig {
    /// `β_* = 1 + 12 K²` (reported only).
    pub fn beta_star(&self) -> f64 {
        1.0 + 12.0 * self.k * self.k
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k", self.k),
            ("c_star", self.c_star),
            ("gamma_rate", self.gamma_rate),
            ("g", self.g),
            ("epsilon_1", self.epsilon_1),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::input(name, "must be positive"));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::input("beta", "must be nonnegative"));
        }
        if self.gamma_rate <= self.epsilon_1 {
            return Err(Error::input("epsilon_1", "must be smaller than gamma_rate"));
        }
        Ok(())
    }
}

/// `C(t) = (6t ∨ 3) exp(6K² (t + C_*) t)`.
pub fn error_bound_c(t: f64, cfg: &BoundConfig) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::input("t", "must be nonnegative"));
    }
    let k2 = cfg.k * cfg.k;
    Ok((6.0 * t).max(3.0) * (6.0 * k2 * (t + cfg.c_star) * t).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    /// `Δ = √(3 C(t) log n) α`.
    pub delta: f64,
    /// `1 / log n`.
    pub probability_bound: f64,
}

pub fn corollary_threshold(n: f64, t: f64, alpha: f64, cfg: &BoundConfig) -> Result<Threshold> {
    if !(n >= 2.0) {
        return Err(Error::input("n", "must be at least 2"));
    }
    let ln = n.ln();
    Ok(Threshold {
        delta: (3.0 * error_bound_c(t, cfg)? * ln).sqrt() * alpha,
        probability_bound: 1.0 / ln,
    })
}

/// One figure's worth of `(x_value, series_label, y_value)` points plus labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotData {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    #[serde(skip)]
    pub points: Vec<(f64, String, f64)>,
}

impl PlotData {
    pub fn table(&self) -> Table {
        let mut t = Table::new(&["x_value", "series_label", "y_value"]);
        for (x, s, y) in &self.points {
            t.push(vec![num(*x), s.clone(), num(*y)]);
        }
        t
    }

    /// Writes `<name>.csv` and `<name>.json` (the manifest) into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.table().write(dir.join(format!("{}.csv", self.name)))?;
        #[derive(Serialize)]
        struct Manifest<'a> {
            #[serde(flatten)]
            plot: &'a PlotData,
            data: String,
            columns: [&'static str; 3],
        }
        write_json(
            dir.join(format!("{}.json", self.name)),
            &Manifest {
                plot: self,
                data: format!("{}.csv", self.name),
                columns: ["x_value", "series_label", "y_value"],
            },
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub m: usize,
    pub state: usize,
    pub m_minus: f64,
    pub m_plus: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridStudy {
    pub rows: Vec<GridRow>,
}

impl GridStudy {
    fn at(&self, m: usize) -> Vec<&GridRow> {
        self.rows.iter().filter(|r| r.m == m).collect()
    }

    /// `max_j |m̂⁻_j(m1) - m̂⁻_j(m2)|`, or `None` if either `M` is missing.
    pub fn max_minus_difference(&self, m1: usize, m2: usize) -> Option<f64> {
        let (a, b) = (self.at(m1), self.at(m2));
        if a.is_empty() || a.len() != b.len() {
            return None;
        }
        Some(a.iter().zip(&b).map(|(x, y)| (x.m_minus - y.m_minus).abs()).fold(0.0, f64::max))
    }

    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual).fold(0.0, f64::max)
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&["M", "j", "m_minus", "m_plus", "residual"]);
        for r in &self.rows {
            t.push(vec![
                r.m.to_string(),
                (r.state + 1).to_string(),
                num(r.m_minus),
                num(r.m_plus),
                num(r.residual),
            ]);
        }
        t
    }

    pub fn plot(&self, i0: usize) -> PlotData {
        PlotData {
            name: "grid_convergence".into(),
            title: "Downcrossing probabilities against grid size".into(),
            x_label: "M".into(),
            y_label: format!("m_minus_{}j", i0 + 1),
            points: self
                .rows
                .iter()
                .map(|r| (r.m as f64, format!("j={}", r.state + 1), r.m_minus))
                .collect(),
        }
    }
}

/// Solves the model (with killing rate `q`) for every `M` in `m_list`.
pub fn study_grid_convergence(
    model: &HybridModel,
    q: f64,
    m_list: &[usize],
    solver: &SolverConfig,
) -> Result<GridStudy> {
    if m_list.is_empty() {
        return Err(Error::input("m_list", "sweep list is empty"));
    }
    let model = model.with_kill_rate(q)?;
    let per_m: Vec<Vec<GridRow>> = m_list
        .par_iter()
        .map(|&m| {
            let s = solve(&model, &SolverConfig { m, ..*solver })?;
            Ok((0..model.states())
                .map(|j| GridRow {
                    m,
                    state: j,
                    m_minus: s.passage.m_minus[j],
                    m_plus: s.passage.m_plus[j],
                    residual: s.residual(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(GridStudy {
        rows: per_m.into_iter().flatten().collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    /// `u` for start-level sweeps, `b` for occupation sweeps.
    pub x: f64,
    pub state: usize,
    pub m_minus: f64,
    pub m_plus: f64,
    pub occupation: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileStudy {
    pub i0: usize,
    pub start_sweep: Vec<ProfileRow>,
    /// Occupation `Ô(b)` at the model's own start level.
    pub level_sweep: Vec<ProfileRow>,
}

impl ProfileStudy {
    pub fn max_residual(&self) -> f64 {
        self.start_sweep
            .iter()
            .chain(&self.level_sweep)
            .map(|r| r.residual)
            .fold(0.0, f64::max)
    }

    pub fn start_table(&self) -> Table {
        let mut t = Table::new(&["u", "j", "m_minus", "m_plus"]);
        for r in &self.start_sweep {
            t.push(vec![num(r.x), (r.state + 1).to_string(), num(r.m_minus), num(r.m_plus)]);
        }
        t
    }

    pub fn level_table(&self) -> Table {
        let mut t = Table::new(&["b", "j", "O"]);
        for r in &self.level_sweep {
            t.push(vec![num(r.x), (r.state + 1).to_string(), num(r.occupation)]);
        }
        t
    }

    pub fn plots(&self) -> [PlotData; 2] {
        let i = self.i0 + 1;
        [
            PlotData {
                name: "profile_start_level".into(),
                title: "Downcrossing probabilities against the start level".into(),
                x_label: "u".into(),
                y_label: format!("m_minus_{i}j"),
                points: self
                    .start_sweep
                    .iter()
                    .map(|r| (r.x, format!("j={}", r.state + 1), r.m_minus))
                    .collect(),
            },
            PlotData {
                name: "profile_occupation".into(),
                title: "Expected occupation times below level b".into(),
                x_label: "b".into(),
                y_label: format!("O_{i}j(b)"),
                points: self
                    .level_sweep
                    .iter()
                    .map(|r| (r.x, format!("j={}", r.state + 1), r.occupation))
                    .collect(),
            },
        ]
    }
}

/// `m̂±(u)` for each start level in `u_list` (fresh grid through each `u`),
/// and `Ô(b)` for each `b` in `b_list` at the model's own start level.
pub fn study_profiles(
    model: &HybridModel,
    q: f64,
    u_list: &[f64],
    b_list: &[f64],
    solver: &SolverConfig,
) -> Result<ProfileStudy> {
    if u_list.is_empty() && b_list.is_empty() {
        return Err(Error::input("u_list", "both sweep lists are empty"));
    }
    let a = model.band_high();
    if let Some(u) = u_list.iter().find(|&&u| !(u > 0.0 && u < a)) {
        return Err(Error::input("u_list", format!("{u} is outside (0, {a})")));
    }
    if let Some(b) = b_list.iter().find(|&&b| !(b >= 0.0 && b <= a)) {
        return Err(Error::input("b_list", format!("{b} is outside [0, {a}]")));
    }
    let model = model.with_kill_rate(q)?;
    let i0 = model.start_state();
    let start_sweep: Vec<Vec<ProfileRow>> = u_list
        .par_iter()
        .map(|&u| {
            let s = solve(&model.with_start(u, i0)?, solver)?;
            Ok((0..model.states())
                .map(|j| ProfileRow {
                    x: u,
                    state: j,
                    m_minus: s.passage.m_minus[j],
                    m_plus: s.passage.m_plus[j],
                    occupation: s.passage.occupation(j, a),
                    residual: s.residual(),
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut level_sweep = Vec::new();
    if !b_list.is_empty() {
        let s = solve(&model, solver)?;
        for &b in b_list {
            for j in 0..model.states() {
                level_sweep.push(ProfileRow {
                    x: b,
                    state: j,
                    m_minus: s.passage.m_minus[j],
                    m_plus: s.passage.m_plus[j],
                    occupation: s.passage.occupation(j, b),
                    residual: s.residual(),
                });
            }
        }
    }
    Ok(ProfileStudy {
        i0,
        start_sweep: start_sweep.into_iter().flatten().collect(),
        level_sweep,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingStudy {
    pub m_list: Vec<usize>,
    pub horizon: f64,
    pub rows: Vec<DecouplingRow>,
}

impl CouplingStudy {
    /// Both the decoupling frequency and the median sup-distance fall
    /// strictly along the sweep.
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].frequency < w[0].frequency && w[1].sup_distance_median < w[0].sup_distance_median
        })
    }

    pub fn table(&self) -> Table {
        let mut t = Table::new(&[
            "M",
            "decoupling_frequency",
            "std_error",
            "sup_distance_q25",
            "sup_distance_median",
            "sup_distance_q75",
            "sup_distance_q90",
            "n_paths",
        ]);
        for (m, r) in self.m_list.iter().zip(&self.rows) {
            t.push(vec![
                m.to_string(),
                num(r.frequency),
                num(r.std_error),
                num(r.sup_distance_q25),
                num(r.sup_distance_median),
                num(r.sup_distance_q75),
                num(r.sup_distance_q90),
                r.n_paths.to_string(),
            ]);
        }
        t
    }

    pub fn plot(&self) -> PlotData {
        let mut points = Vec::new();
        for (m, r) in self.m_list.iter().zip(&self.rows) {
            points.push((*m as f64, "decoupling_frequency".into(), r.frequency));
            points.push((*m as f64, "sup_distance_median".into(), r.sup_distance_median));
        }
        PlotData {
            name: "coupling".into(),
            title: "Decoupling of the grid approximation under shared randomness".into(),
            x_label: "M".into(),
            y_label: "frequency / distance".into(),
            points,
        }
    }
}

/// Paired-seed coupling of the model with its approximations for each `M`.
pub fn study_coupling(
    model: &HybridModel,
    m_list: &[usize],
    solver: &SolverConfig,
    horizon: f64,
    mc: &McConfig,
) -> Result<CouplingStudy> {
    if m_list.is_empty() {
        return Err(Error::input("m_list", "sweep list is empty"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::input("horizon", "must be positive and finite"));
    }
    let approximations = m_list
        .iter()
        .map(|&m| {
            let g = SpaceGrid::build(model.start_level(), model.band_high(), m)?;
            Ok((format!("M={m}"), GridApproximation::build(model, &g, solver.sampling_rule)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CouplingStudy {
        m_list: m_list.to_vec(),
        horizon,
        rows: mc_decoupling(model, &approximations, horizon, mc)?,
    })
}

/// Writes a study table as CSV next to its plot data.
pub fn write_study(dir: impl AsRef<Path>, name: &str, table: &Table, plots: &[PlotData]) -> Result<()> {
    let dir = dir.as_ref();
    write_atomic(dir.join(format!("{name}.csv")), &table.to_csv()?)?;
    for p in plots {
        p.write(dir)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::examples::{brownian, example_5_1};

    #[test]
    fn bound_examples() {
        let cfg = BoundConfig::default();
        assert_eq!(error_bound_c(0.0, &cfg).unwrap(), 3.0);
        let c1 = error_bound_c(1.0, &cfg).unwrap();
        assert!((c1 / (6.0 * 30f64.exp()) - 1.0).abs() < 1e-14);
        let k0 = BoundConfig { k: 0.0, ..cfg };
        assert_eq!(error_bound_c(0.5, &k0).unwrap(), 3.0);
        assert!(error_bound_c(-1.0, &cfg).is_err());
        assert_eq!(cfg.beta_star(), 13.0);
    }

    #[test]
    fn bound_monotone() {
        let base = BoundConfig::default();
        let ts = [0.0, 0.1, 0.4, 0.5, 1.0, 2.0];
        for w in ts.windows(2) {
            assert!(error_bound_c(w[1], &base).unwrap() >= error_bound_c(w[0], &base).unwrap());
        }
        for (lo, hi) in [
            (BoundConfig { k: 0.5, ..base }, BoundConfig { k: 1.5, ..base }),
            (BoundConfig { c_star: 1.0, ..base }, BoundConfig { c_star: 8.0, ..base }),
        ] {
            for &t in &ts {
                assert!(error_bound_c(t, &hi).unwrap() >= error_bound_c(t, &lo).unwrap());
            }
        }
    }

    #[test]
    fn threshold_examples() {
        let cfg = BoundConfig::default();
        assert_eq!(corollary_threshold(10.0, 1.0, 0.0, &cfg).unwrap().delta, 0.0);
        let th = corollary_threshold(std::f64::consts::E, 0.0, 1.0, &cfg).unwrap();
        assert!((th.delta - 3.0).abs() < 1e-14);
        assert!((th.probability_bound - 1.0).abs() < 1e-15);
        // Independent re-evaluation.
        let n = 1e6_f64;
        let expected = (3.0 * 6.0 * (30.0_f64).exp() * n.ln()).sqrt() * 1e-6;
        let got = corollary_threshold(n, 1.0, 1e-6, &cfg).unwrap().delta;
        assert!((got / expected - 1.0).abs() < 1e-13);
        // Homogeneous in α.
        let d1 = corollary_threshold(50.0, 0.3, 0.7, &cfg).unwrap().delta;
        let d2 = corollary_threshold(50.0, 0.3, 1.4, &cfg).unwrap().delta;
        assert_eq!(d2, 2.0 * d1);
        assert!(corollary_threshold(1.5, 0.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn grid_study_on_oracle_is_flat() {
        let m = brownian(0.5, 1.0, 0.5, 1.0, 0.0);
        let study = study_grid_convergence(&m, 0.0, &[5, 10, 20], &SolverConfig::new(0, 20)).unwrap();
        assert_eq!(study.rows.len(), 3);
        let exact = (1.0 - (-0.5f64).exp()) / (1.0 - (-1.0f64).exp());
        assert!(study.rows.iter().all(|r| (r.m_plus - exact).abs() < 5e-3));
        let single = study_grid_convergence(&m, 0.0, &[7], &SolverConfig::default()).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert!(study_grid_convergence(&m, 0.0, &[], &SolverConfig::default()).is_err());
    }

    #[test]
    fn start_level_trend_near_zero() {
        let m = example_5_1();
        let study = study_profiles(&m, 0.0, &[0.02, 0.1, 0.3], &[0.25, 0.5, 1.0], &SolverConfig::new(10, 4)).unwrap();
        let total = |u: f64| -> f64 {
            study.start_sweep.iter().filter(|r| r.x == u).map(|r| r.m_minus).sum()
        };
        assert!(total(0.02) > total(0.1) && total(0.1) > total(0.3));
        assert!(total(0.02) > 0.9);
        for j in 0..3 {
            let occ: Vec<f64> = study.level_sweep.iter().filter(|r| r.state == j).map(|r| r.occupation).collect();
            assert!(occ.windows(2).all(|w| w[1] >= w[0]));
        }
        assert!(study_profiles(&m, 0.0, &[1.5], &[], &SolverConfig::new(4, 2)).is_err());
    }

    #[test]
    fn studies_are_deterministic() {
        let m = example_5_1();
        let a = study_grid_convergence(&m, 0.0, &[4, 8], &SolverConfig::new(0, 3)).unwrap();
        let b = study_grid_convergence(&m, 0.0, &[4, 8], &SolverConfig::new(0, 3)).unwrap();
        assert_eq!(a.table().to_csv().unwrap(), b.table().to_csv().unwrap());
    }

    #[test]
    fn plot_files() {
        let dir = tempfile::tempdir().unwrap();
        let study = study_grid_convergence(&example_5_1(), 0.0, &[3], &SolverConfig::new(0, 2)).unwrap();
        study.plot(1).write(dir.path()).unwrap();
        let manifest: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join("grid_convergence.json")).unwrap()).unwrap();
        assert_eq!(manifest["x_label"], "M");
        assert_eq!(manifest["data"], "grid_convergence.csv");
        let csv = std::fs::read_to_string(dir.path().join("grid_convergence.csv")).unwrap();
        assert!(csv.starts_with("x_value,series_label,y_value\n3,j=1,"));
    }
}
