//! CSV tables, JSON manifests and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::gridgen::GridApproximation;
use crate::montecarlo::{McEstimate, PassageEstimates};
use crate::mrmbm::PassageResult;
use crate::simulate::{CoupledSample, PathSample};

/// Rows of string cells under a header; floats use Rust's shortest
/// round-trip formatting so reruns are byte-identical.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }
}

/// Cell formatting for the tables.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Band values: `(band_index, zeta_left, zeta_right, state, mu_hat, sigma_hat)`,
/// band labels `m ∈ {-M+1, …, M}` and 1-based states.
pub fn approximation_table(ap: &GridApproximation) -> Table {
    let mut t = Table::new(&["band_index", "zeta_left", "zeta_right", "state", "mu_hat", "sigma_hat"]);
    let g = ap.grid();
    for b in 0..g.bands() {
        let (lo, hi) = g.band(b);
        for i in 0..ap.states() {
            t.push(vec![
                g.band_label(b).to_string(),
                num(lo),
                num(hi),
                (i + 1).to_string(),
                num(ap.mu_hat(i, b)),
                num(ap.sigma_hat(i, b)),
            ]);
        }
    }
    t
}

/// `Λ̂` entries: `(band_index, from, to, rate)`.
pub fn lambda_table(ap: &GridApproximation) -> Table {
    let mut t = Table::new(&["band_index", "from", "to", "rate"]);
    let g = ap.grid();
    for b in 0..g.bands() {
        for (i, row) in ap.lambda_hat(b).iter().enumerate() {
            for (k, &v) in row.iter().enumerate() {
                t.push(vec![g.band_label(b).to_string(), (i + 1).to_string(), (k + 1).to_string(), num(v)]);
            }
        }
    }
    t
}

/// `(j, m_minus, m_plus)`.
pub fn results_table(r: &PassageResult) -> Table {
    let mut t = Table::new(&["j", "m_minus", "m_plus"]);
    for j in 0..r.states() {
        t.push(vec![(j + 1).to_string(), num(r.m_minus[j]), num(r.m_plus[j])]);
    }
    t
}

/// `(b, j, O)` at the given levels.
pub fn occupation_table(r: &PassageResult, levels: &[f64]) -> Table {
    let mut t = Table::new(&["b", "j", "O"]);
    for &b in levels {
        for j in 0..r.states() {
            t.push(vec![num(b), (j + 1).to_string(), num(r.occupation(j, b))]);
        }
    }
    t
}

fn estimate_row(quantity: &str, state: usize, e: &McEstimate, seed: u64) -> Vec<String> {
    vec![
        quantity.into(),
        (state + 1).to_string(),
        num(e.value),
        num(e.std_error),
        e.n_paths.to_string(),
        seed.to_string(),
    ]
}

/// `(quantity, state, value, std_error, n_paths, seed)`.
pub fn estimates_table(est: &PassageEstimates, occupation: &[(f64, Vec<McEstimate>)], seed: u64) -> Table {
    let mut t = Table::new(&["quantity", "state", "value", "std_error", "n_paths", "seed"]);
    for (j, e) in est.m_minus.iter().enumerate() {
        t.push(estimate_row("m_minus", j, e, seed));
    }
    for (j, e) in est.m_plus.iter().enumerate() {
        t.push(estimate_row("m_plus", j, e, seed));
    }
    for (b, per_state) in occupation {
        for (j, e) in per_state.iter().enumerate() {
            t.push(estimate_row(&format!("occupation_b={b}"), j, e, seed));
        }
    }
    t
}

/// Solver against Monte Carlo, with `|solver - mc| <= k·SE` as the verdict.
pub fn compare_table(r: &PassageResult, est: &PassageEstimates, k_se: f64) -> (Table, bool) {
    let mut t = Table::new(&["quantity", "state", "solver", "mc", "std_error", "z", "pass"]);
    let mut all = true;
    for (name, solver, mc) in [("m_minus", &r.m_minus, &est.m_minus), ("m_plus", &r.m_plus, &est.m_plus)] {
        for j in 0..solver.len() {
            let e = &mc[j];
            let diff = solver[j] - e.value;
            let pass = diff.abs() <= k_se * e.std_error;
            all &= pass;
            let z = if e.std_error > 0.0 { diff / e.std_error } else { 0.0 };
            t.push(vec![
                name.into(),
                (j + 1).to_string(),
                num(solver[j]),
                num(e.value),
                num(e.std_error),
                num(z),
                pass.to_string(),
            ]);
        }
    }
    (t, all)
}

/// Fine trajectory `(t, J, X)` of a recorded path.
pub fn path_table(p: &PathSample) -> Table {
    let mut t = Table::new(&["t", "J", "X"]);
    let mut e = 0;
    for &(time, x) in &p.trajectory {
        while e + 1 < p.epochs.len() && p.epochs[e + 1] <= time {
            e += 1;
        }
        let j = p.states.get(e).copied().unwrap_or(p.terminal_state);
        t.push(vec![num(time), (j + 1).to_string(), num(x)]);
    }
    t
}

/// Fine trajectory `(t, J, X, J_hat, X_hat, H)` of a recorded coupled path.
pub fn coupled_path_table(s: &CoupledSample) -> Table {
    let mut t = Table::new(&["t", "J", "X", "J_hat", "X_hat", "H"]);
    let mut e = 0;
    for &(time, x, xh) in &s.trajectory {
        while e + 1 < s.epochs.len() && s.epochs[e + 1] <= time {
            e += 1;
        }
        t.push(vec![
            num(time),
            (s.j_path[e] + 1).to_string(),
            num(x),
            (s.j_hat_path[e] + 1).to_string(),
            num(xh),
            s.h_seq[e].to_string(),
        ]);
    }
    t
}
