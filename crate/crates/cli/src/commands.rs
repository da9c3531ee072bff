use std::path::Path;

use hybridsde::analysis::{
    corollary_threshold, error_bound_c, study_coupling, study_grid_convergence, study_profiles, write_study,
};
use hybridsde::gridgen::approximation_report;
use hybridsde::montecarlo::{mc_occupation_levels, mc_passage};
use hybridsde::mrmbm::{build_chain, solve as solve_model, Location, Solution};
use hybridsde::output::{
    approximation_table, compare_table, estimates_table, lambda_table, num, occupation_table, path_table,
    results_table, write_json, Table,
};
use hybridsde::simulate::{default_horizon, simulate_hybrid, Problem, SimConfig};
use hybridsde::{Dynamics, Error, GridApproximation, HybridModel, RngStream, RunConfig, SpaceGrid};
use log::{info, warn};
use serde::Serialize;

use crate::{StudyKind, Target};

pub enum Outcome {
    Ok,
    Failed(u8),
}

const COMPARE_SE: f64 = 3.0;

/// Refuses to run anything on a model whose generator is broken on `[0, a]`.
fn checked_model(cfg: &RunConfig) -> Result<HybridModel, Error> {
    let model = cfg.model()?;
    let report = model.validate();
    if let Some(v) = report.generator_violations.first() {
        return Err(Error::Generator {
            x: v.x,
            message: v.message.clone(),
        });
    }
    if !report.gamma_dominates {
        return Err(Error::Input {
            field: "gamma".into(),
            message: format!(
                "uniformization rate {} is below sup |Λ_ii| = {}",
                report.gamma, report.diag_sup
            ),
        });
    }
    Ok(model)
}

fn occupation_levels(cfg: &RunConfig, model: &HybridModel) -> Vec<f64> {
    if cfg.occupation_levels.is_empty() {
        let a = model.band_high();
        (1..=10).map(|k| a * k as f64 / 10.0).collect()
    } else {
        cfg.occupation_levels.clone()
    }
}

pub fn validate(cfg: &RunConfig, out: &Path) -> Result<Outcome, Error> {
    let model = cfg.model()?;
    let report = model.validate();
    let grid = SpaceGrid::build(model.start_level(), model.band_high(), cfg.grid.m)?;
    let approx = GridApproximation::build(&model, &grid, cfg.grid.sampling_rule)?;
    let approx_report = approximation_report(&model, &approx, cfg.rates, cfg.report_n)?;
    let k = model.lipschitz_k().unwrap_or_else(|| report.lipschitz_max());
    let bounds = hybridsde::analysis::BoundConfig { k, ..cfg.bounds };
    let horizon = cfg.study.coupling_horizon;

    #[derive(Serialize)]
    struct Bounds {
        k: f64,
        beta_star: f64,
        t: f64,
        c_t: f64,
        n: f64,
        delta_per_alpha: f64,
        probability_bound: f64,
    }
    let th = corollary_threshold(cfg.report_n, horizon, 1.0, &bounds)?;
    let bound_out = Bounds {
        k,
        beta_star: bounds.beta_star(),
        t: horizon,
        c_t: error_bound_c(horizon, &bounds)?,
        n: cfg.report_n,
        delta_per_alpha: th.delta,
        probability_bound: th.probability_bound,
    };

    #[derive(Serialize)]
    struct Validation<'a> {
        valid: bool,
        model: &'a hybridsde::model::ValidationReport,
        approximation: &'a hybridsde::gridgen::ApproximationReport,
        bounds: &'a Bounds,
    }
    write_json(
        out.join("validation.json"),
        &Validation {
            valid: report.is_valid(),
            model: &report,
            approximation: &approx_report,
            bounds: &bound_out,
        },
    )?;
    approximation_table(&approx).write(out.join("approximation.csv"))?;
    lambda_table(&approx).write(out.join("lambda_hat.csv"))?;
    let mut lip = Table::new(&["state", "mu_lipschitz", "sigma_lipschitz"]);
    for l in &report.lipschitz {
        lip.push(vec![(l.state + 1).to_string(), num(l.mu), num(l.sigma)]);
    }
    lip.write(out.join("lipschitz.csv"))?;

    println!("states            {}", model.states());
    println!("band              [0, {}], u = {}, i0 = {}", model.band_high(), model.start_level(), model.start_state() + 1);
    println!("gamma             {} (sup |Λ_ii| = {})", report.gamma, report.diag_sup);
    println!("generator         {}", if report.generator_violations.is_empty() { "valid".to_string() } else { format!("{} violations", report.generator_violations.len()) });
    println!("lipschitz (max)   {}", report.lipschitz_max());
    println!("sup |mu - mu_hat| {}", approx_report.mu_sup_error);
    println!("sup |s - s_hat|   {}", approx_report.sigma_sup_error);
    println!("sup |L - L_hat|   {}", approx_report.lambda_sup_error);
    println!("C(t = {horizon})         {}", bound_out.c_t);
    for v in report.generator_violations.iter().take(5) {
        println!("violation at x = {}: {}", v.x, v.message);
    }
    if report.is_valid() {
        println!("valid");
        Ok(Outcome::Ok)
    } else {
        println!("invalid");
        Ok(Outcome::Failed(2))
    }
}

fn run_log(s: &Solution, out: &Path, cfg: &RunConfig) -> Result<(), Error> {
    #[derive(Serialize)]
    struct RunLog<'a> {
        m: usize,
        cells_per_band: usize,
        sampling_rule: hybridsde::SamplingRule,
        nodes: usize,
        reachable_nodes: usize,
        residual: f64,
        refinements: usize,
        total_exit_probability: f64,
        mean_exit_time: f64,
        upwind_switches: &'a [hybridsde::mrmbm::UpwindSwitch],
    }
    for u in &s.upwind {
        info!(
            "upwind scheme in band {} for state {} (mu = {}, sigma = {})",
            s.approximation.grid().band_label(u.band),
            u.state + 1,
            u.mu,
            u.sigma
        );
    }
    write_json(
        out.join("run_log.json"),
        &RunLog {
            m: cfg.grid.m,
            cells_per_band: cfg.grid.cells_per_band,
            sampling_rule: cfg.grid.sampling_rule,
            nodes: s.nodes,
            reachable_nodes: s.reachable,
            residual: s.residual(),
            refinements: s.refinements,
            total_exit_probability: s.passage.total_exit_probability(),
            mean_exit_time: s.passage.mean_exit_time(),
            upwind_switches: &s.upwind,
        },
    )
}

pub fn solve(cfg: &RunConfig, out: &Path, dump_chain: bool) -> Result<Outcome, Error> {
    let model = checked_model(cfg)?;
    let s = solve_model(&model, &cfg.solver())?;
    info!(
        "solved {} nodes, residual {:e}, sum of exit probabilities {}",
        s.nodes,
        s.residual(),
        s.passage.total_exit_probability()
    );
    results_table(&s.passage).write(out.join("results.csv"))?;
    occupation_table(&s.passage, &occupation_levels(cfg, &model)).write(out.join("occupation.csv"))?;
    run_log(&s, out, cfg)?;
    if dump_chain {
        let chain = build_chain(&model, &cfg.solver())?;
        let mut nodes = Table::new(&["node", "location", "cell", "level", "state"]);
        for (k, n) in chain.nodes.iter().enumerate() {
            let (loc, cell, level) = match n.location {
                Location::Atom0 => ("atom_0", String::new(), 0.0),
                Location::AtomU => ("atom_u", String::new(), model.start_level()),
                Location::AtomA => ("atom_a", String::new(), model.band_high()),
                Location::Cell(c) => ("cell", c.to_string(), chain.centers[c]),
            };
            let state = if n.state == chain.states { "reset".to_string() } else { (n.state + 1).to_string() };
            nodes.push(vec![k.to_string(), loc.into(), cell, num(level), state]);
        }
        nodes.write(out.join("chain_nodes.csv"))?;
        let mut trip = Table::new(&["row", "col", "rate"]);
        for (i, k, v) in chain.generator.triplets() {
            trip.push(vec![i.to_string(), k.to_string(), num(v)]);
        }
        trip.write(out.join("chain_generator.csv"))?;
    }
    println!("j,m_minus,m_plus");
    for j in 0..s.passage.states() {
        println!("{},{},{}", j + 1, s.passage.m_minus[j], s.passage.m_plus[j]);
    }
    Ok(Outcome::Ok)
}

fn dynamics(model: &HybridModel, cfg: &RunConfig, target: Target) -> Result<Box<dyn Dynamics>, Error> {
    Ok(match target {
        Target::Model => Box::new(model.clone()),
        Target::Approximation => {
            let grid = SpaceGrid::build(model.start_level(), model.band_high(), cfg.grid.m)?;
            Box::new(GridApproximation::build(model, &grid, cfg.grid.sampling_rule)?)
        }
    })
}

pub fn mc(cfg: &RunConfig, out: &Path, target: Target, dump_paths: usize) -> Result<Outcome, Error> {
    let model = checked_model(cfg)?;
    let d = dynamics(&model, cfg, target)?;
    let problem = Problem::of(&model);
    let fallback = default_horizon(&model);
    let est = mc_passage(d.as_ref(), &problem, &cfg.mc, fallback)?;
    let levels = occupation_levels(cfg, &model);
    let occ = mc_occupation_levels(d.as_ref(), &problem, &levels, &cfg.mc, fallback)?;
    let pairs: Vec<_> = levels.iter().copied().zip(occ).collect();
    estimates_table(&est, &pairs, cfg.mc.seed).write(out.join("estimates.csv"))?;
    info!(
        "{} paths: killed {}, censored {}",
        est.n_paths, est.killed, est.censored
    );
    if est.censored_fraction() > 1e-3 {
        warn!("censored fraction {} exceeds 0.1%", est.censored_fraction());
    }
    if dump_paths > 0 {
        let sim = SimConfig::new(cfg.mc.dt, cfg.mc.horizon.unwrap_or(fallback))
            .with_crossing(cfg.mc.crossing)
            .recording();
        for k in 0..dump_paths as u64 {
            let p = simulate_hybrid(d.as_ref(), &problem, &sim, &mut RngStream::new(cfg.mc.seed, k).rng());
            path_table(&p).write(out.join(format!("path_{k}.csv")))?;
        }
    }
    println!("quantity,state,value,std_error");
    for (name, v) in [("m_minus", &est.m_minus), ("m_plus", &est.m_plus)] {
        for (j, e) in v.iter().enumerate() {
            println!("{name},{},{},{}", j + 1, e.value, e.std_error);
        }
    }
    Ok(Outcome::Ok)
}

pub fn compare(cfg: &RunConfig, out: &Path, target: Target) -> Result<Outcome, Error> {
    let model = checked_model(cfg)?;
    let s = solve_model(&model, &cfg.solver())?;
    let d = dynamics(&model, cfg, target)?;
    let est = mc_passage(d.as_ref(), &Problem::of(&model), &cfg.mc, default_horizon(&model))?;
    let (table, all) = compare_table(&s.passage, &est, COMPARE_SE);
    table.write(out.join("compare.csv"))?;
    results_table(&s.passage).write(out.join("results.csv"))?;
    estimates_table(&est, &[], cfg.mc.seed).write(out.join("estimates.csv"))?;
    print!("{}", String::from_utf8_lossy(&table.to_csv()?));
    if all {
        Ok(Outcome::Ok)
    } else {
        warn!("solver and Monte Carlo disagree beyond {COMPARE_SE} standard errors");
        Ok(Outcome::Failed(3))
    }
}

pub fn study(cfg: &RunConfig, out: &Path, kind: StudyKind) -> Result<Outcome, Error> {
    let model = checked_model(cfg)?;
    let solver = cfg.solver();
    let st = &cfg.study;
    let q = model.kill_rate();
    let all = kind == StudyKind::All;
    if all || kind == StudyKind::Grid {
        let g = study_grid_convergence(&model, q, &st.m_list, &solver)?;
        write_study(out, "grid_study", &g.table(), &[g.plot(model.start_state())])?;
        let ms = &st.m_list;
        if ms.len() >= 2 {
            let (a, b) = (ms[ms.len() - 2], ms[ms.len() - 1]);
            if let Some(d) = g.max_minus_difference(a, b) {
                println!("grid: max_j |m_minus(M={b}) - m_minus(M={a})| = {d}");
            }
        }
    }
    if all || kind == StudyKind::Profiles {
        let p = study_profiles(&model, q, &st.u_list, &st.b_list, &solver)?;
        write_study(out, "profile_start_level_table", &p.start_table(), &p.plots())?;
        p.level_table().write(out.join("profile_occupation_table.csv"))?;
        println!("profiles: {} start levels, {} occupation levels", st.u_list.len(), st.b_list.len());
    }
    if all || kind == StudyKind::Coupling {
        let mut mc = cfg.mc;
        mc.n_paths = st.coupling_paths;
        let c = study_coupling(&model, &st.coupling_m_list, &solver, st.coupling_horizon, &mc)?;
        write_study(out, "coupling_study", &c.table(), &[c.plot()])?;
        for (m, r) in c.m_list.iter().zip(&c.rows) {
            println!(
                "coupling: M={m} frequency {} median sup|X - X_hat| {}",
                r.frequency, r.sup_distance_median
            );
        }
    }
    Ok(Outcome::Ok)
}
