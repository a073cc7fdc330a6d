//! Command-line front end: one subcommand per pipeline, JSON on stdout,
//! JSON diagnostics on stderr, and exit codes
//! 0 success, 1 invalid input, 2 non-convergence, 3 property violation,
//! 4 budget exceeded.

use crate::average::{b1_certificate, discounted_value, Policy};
use crate::cell::{effective_value, geometric_schedule, solve_cell_unbounded, CellProblem, PhysicalHamiltonian};
use crate::config::{CellSetting, EffectiveKind, PolicyKind, RunConfig};
use crate::effective::{build_table, check_properties, EffectiveTable};
use crate::error::{Error, Result};
use crate::hamiltonians::{closed_to_control, ControlResolution, ControlSet, HamiltonianSpec};
use crate::homogenizer::{
    box_table, convergence_study, solve_effective_evolution, solve_effective_stationary, solve_oscillatory_evolution,
    solve_oscillatory_stationary, effective_cfl_limit, oscillatory_cfl_limit, ConvergenceSetup, EffectiveSource, OscillatoryProblem,
    ProblemKind,
};
use crate::scales::{check_condition_a, ScaleSystem};
use crate::verify::{run_suite, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "hjb-homog", version, about = "Effective Hamiltonians and homogenization of multiscale Hamilton–Jacobi–Bellman equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the non-resonance condition of the configured scales.
    Resonance {
        config: PathBuf,
        #[arg(long)]
        bound: Option<u64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Solve the discounted cell problem and report the effective value.
    Cell {
        config: PathBuf,
        #[arg(long)]
        lambda_min: Option<f64>,
        /// Cells per torus axis.
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        /// Momentum, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        p: Option<Vec<f64>>,
    },
    /// Tabulate the effective Hamiltonian and check its properties.
    Table {
        config: PathBuf,
        #[arg(long)]
        lambda_min: Option<f64>,
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Trajectory oracle: discounted control payoffs or ray averages.
    Average {
        config: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_parser = ["constant", "greedy"])]
        policy: Option<String>,
    },
    /// ε-convergence study of the oscillatory problem to the effective one.
    Homogenize {
        config: PathBuf,
        /// Strictly decreasing ε values, comma separated.
        #[arg(long, value_delimiter = ',')]
        eps_schedule: Option<Vec<f64>>,
        #[arg(long, conflicts_with = "horizon")]
        mu: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Report path (default: `<output.dir>/homogenize.json`).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Dump the finest-ε fields as CSV.
        #[arg(long)]
        fields: bool,
    },
    /// Run the acceptance suite and print a pass/fail table.
    Verify {
        /// Optional config supplying the seed.
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Criteria to run, comma separated (default: all).
        #[arg(long, value_delimiter = ',')]
        criteria: Option<Vec<u8>>,
        /// Write the JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

/// Exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidInput(_) | Error::Config { .. } | Error::Resolution { .. } | Error::Cfl { .. } | Error::Io(_) => 1,
        Error::NonConvergence { .. } | Error::OutOfValidity(_) => 2,
        Error::Property(_) => 3,
        Error::BudgetExceeded { .. } => 4,
    }
}

/// JSON diagnostic for an error.
pub fn error_json(e: &Error) -> Value {
    let kind = match e {
        Error::InvalidInput(_) => "invalid-input",
        Error::OutOfValidity(_) => "out-of-validity",
        Error::NonConvergence { .. } => "non-convergence",
        Error::Resolution { .. } => "resolution",
        Error::Cfl { .. } => "cfl",
        Error::BudgetExceeded { .. } => "budget-exceeded",
        Error::Config { .. } => "config",
        Error::Property(_) => "property-violation",
        Error::Io(_) => "io",
    };
    let mut v = json!({ "error": kind, "message": e.to_string(), "exit_code": exit_code(e) });
    match e {
        Error::Config { key, .. } => v["key"] = json!(key),
        Error::BudgetExceeded { checked, partial } => {
            v["candidates_checked"] = json!(checked);
            v["partial_report"] = serde_json::to_value(partial).unwrap_or(Value::Null);
        }
        _ => {}
    }
    v
}

/// What a successful command produced.
pub struct Outcome {
    /// Printed to stdout.
    pub stdout: String,
    /// Nonzero when the run completed but a check failed.
    pub code: i32,
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable report") + "\n"
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Resonance { config, bound, tolerance, budget } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(b) = bound {
                cfg.resonance.bound = b;
            }
            if let Some(t) = tolerance {
                cfg.resonance.tolerance = t;
            }
            if let Some(b) = budget {
                cfg.resonance.budget = b;
            }
            cfg.validate()?;
            resonance(&cfg)
        }
        Command::Cell { config, lambda_min, grid, tol, p } => {
            let mut cfg = RunConfig::load(&config)?;
            override_cell(&mut cfg, lambda_min, grid, tol);
            if p.is_some() {
                cfg.cell.p = p;
            }
            cfg.validate()?;
            cell(&cfg)
        }
        Command::Table { config, lambda_min, grid, tol } => {
            let mut cfg = RunConfig::load(&config)?;
            override_cell(&mut cfg, lambda_min, grid, tol);
            cfg.validate()?;
            table(&cfg)
        }
        Command::Average { config, lambda, horizon, dt, policy } => {
            let mut cfg = RunConfig::load(&config)?;
            let a = cfg.average.as_mut().ok_or_else(|| missing("average"))?;
            if let Some(v) = lambda {
                a.lambda = v;
            }
            if let Some(v) = horizon {
                a.horizon = v;
            }
            if let Some(v) = dt {
                a.dt = v;
            }
            if let Some(p) = policy {
                a.policy = if p == "greedy" { PolicyKind::Greedy } else { PolicyKind::Constant };
            }
            cfg.validate()?;
            average(&cfg)
        }
        Command::Homogenize { config, eps_schedule, mu, horizon, report, fields } => {
            let mut cfg = RunConfig::load(&config)?;
            let h = cfg.homogenize.as_mut().ok_or_else(|| missing("homogenize"))?;
            if let Some(e) = eps_schedule {
                h.eps = e;
            }
            if let Some(m) = mu {
                h.mu = Some(m);
                h.horizon = None;
            }
            if let Some(t) = horizon {
                h.horizon = Some(t);
                h.mu = None;
            }
            if fields {
                cfg.output.fields = true;
            }
            cfg.validate()?;
            let path = report.unwrap_or_else(|| cfg.output.dir.join("homogenize.json"));
            homogenize(&cfg, &path)
        }
        Command::Verify { config, seed, criteria, report } => {
            let cfg_seed = match &config {
                Some(p) => Some(RunConfig::load(p)?.seed),
                None => None,
            };
            let seed = seed.or(cfg_seed).unwrap_or(crate::config::DEFAULT_SEED);
            verify(seed, &criteria.unwrap_or_default(), report.as_deref())
        }
    }
}

fn missing(section: &str) -> Error {
    Error::Config { key: section.to_string(), message: format!("this command needs a [{section}] section") }
}

fn override_cell(cfg: &mut RunConfig, lambda_min: Option<f64>, grid: Option<usize>, tol: Option<f64>) {
    if let Some(l) = lambda_min {
        cfg.cell.lambda_min = l;
    }
    if let Some(g) = grid {
        cfg.cell.cells = g;
    }
    if let Some(t) = tol {
        cfg.cell.tol = t;
    }
}

fn resonance(cfg: &RunConfig) -> Result<Outcome> {
    let scales = match cfg.setting()? {
        CellSetting::Torus { scales, .. } | CellSetting::Lifted { scales, .. } => scales,
        CellSetting::Box { .. } => ScaleSystem::single(cfg.problem.dim),
    };
    let r = &cfg.resonance;
    let rep = check_condition_a(&scales, r.bound, r.tolerance, r.budget)?;
    let out = json!({
        "command": "resonance",
        "seed": cfg.seed,
        "resonant": rep.any_resonant(),
        "report": rep,
    });
    Ok(Outcome { stdout: pretty(&out), code: 0 })
}

fn torus_problem(cfg: &RunConfig, lambda: f64) -> Result<Option<(CellProblem, usize)>> {
    match cfg.setting()? {
        CellSetting::Torus { ham, scales } | CellSetting::Lifted { ham, scales, .. } => {
            let n = scales.n;
            let pr = CellProblem::new(ham, cfg.x(), cfg.p(), scales, lambda)?.with_scheme(cfg.cell.scheme());
            Ok(Some((pr, n)))
        }
        CellSetting::Box { .. } => Ok(None),
    }
}

fn physical(cfg: &RunConfig) -> Result<PhysicalHamiltonian> {
    match cfg.setting()? {
        CellSetting::Box { physical } | CellSetting::Lifted { physical, .. } => Ok(physical),
        CellSetting::Torus { .. } => Err(Error::Config { key: "problem.potential".into(), message: "box solves need a non-periodic potential".into() }),
    }
}

fn cell(cfg: &RunConfig) -> Result<Outcome> {
    let c = &cfg.cell;
    if let Some((pr, n)) = torus_problem(cfg, c.lambda_min)? {
        let torus = cfg.torus(n)?;
        let schedule = geometric_schedule(c.lambda0, c.lambda_min)?;
        let ev = effective_value(&pr, &torus, &schedule, c.tol, c.max_iter)?;
        let s = &ev.solution;
        let path = cfg.output.dir.join("cell_w.csv");
        write_grid_csv(&path, &s.dims, &s.w)?;
        let out = json!({
            "command": "cell",
            "seed": cfg.seed,
            "domain": "torus",
            "x": pr.x,
            "p": pr.p,
            "hbar": ev.hbar,
            "flatness": ev.flatness,
            "lambda_min": c.lambda_min,
            "levels": ev.levels,
            "dims": s.dims,
            "residual": s.residual,
            "iterations": s.iterations,
            "lam_w_min": s.lam_w_min,
            "lam_w_max": s.lam_w_max,
            "lam_w_mean": s.lam_w_mean,
            "w_csv": path,
        });
        return Ok(Outcome { stdout: pretty(&out), code: 0 });
    }
    let b = cfg.box_.as_ref().ok_or_else(|| missing("box"))?;
    let f = physical(cfg)?;
    let sol = solve_cell_unbounded(&f, &cfg.x(), &cfg.p(), b.lambda, &b.params(), b.tol, b.max_iter)?;
    let path = cfg.output.dir.join("cell_v.csv");
    write_grid_csv(&path, &vec![sol.cells + 1; cfg.problem.dim], &sol.v)?;
    let out = json!({
        "command": "cell",
        "seed": cfg.seed,
        "domain": "box",
        "x": cfg.x(),
        "p": cfg.p(),
        "effective_value": sol.effective_value,
        "lambda": sol.lambda,
        "radius": sol.radius,
        "h": sol.h,
        "shell_radii": sol.shell_radii,
        "shell_slopes": sol.shell_slopes,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "v_csv": path,
    });
    Ok(Outcome { stdout: pretty(&out), code: 0 })
}

/// Index columns then value, row-major.
fn write_grid_csv(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    let mut text = String::new();
    for k in 0..dims.len() {
        text.push_str(&format!("i{k},"));
    }
    text.push_str("value\n");
    let mut idx = vec![0usize; dims.len()];
    for v in values {
        for i in &idx {
            text.push_str(&format!("{i},"));
        }
        text.push_str(&format!("{v:e}\n"));
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
    write_file(path, &text)
}

fn effective_table(cfg: &RunConfig, effective: EffectiveKind) -> Result<EffectiveTable> {
    let grid = cfg.table.as_ref().ok_or_else(|| missing("table"))?.grid()?;
    let c = &cfg.cell;
    if effective == EffectiveKind::Torus {
        if let Some((pr, n)) = torus_problem(cfg, c.lambda_min)? {
            return build_table(&pr, &grid, &cfg.torus(n)?, &geometric_schedule(c.lambda0, c.lambda_min)?, c.tol, c.max_iter);
        }
    }
    let b = cfg.box_.as_ref().ok_or_else(|| missing("box"))?;
    box_table(&physical(cfg)?, &cfg.x(), &grid, &b.params(), b.lambda, b.tol, b.max_iter)
}

fn table(cfg: &RunConfig) -> Result<Outcome> {
    let kind = match cfg.setting()? {
        CellSetting::Box { .. } => EffectiveKind::Box,
        _ => EffectiveKind::Torus,
    };
    let t = effective_table(cfg, kind)?;
    let csv_path = cfg.output.dir.join("table.csv");
    let mut buf = Vec::new();
    t.write_csv(&mut buf)?;
    write_file(&csv_path, &String::from_utf8_lossy(&buf))?;
    let props = if t.is_complete() {
        let tol = cfg.table.as_ref().and_then(|s| s.property_tol).unwrap_or(2.0 * t.scheme_error);
        Some(check_properties(&t, tol)?)
    } else {
        None
    };
    let sidecar = json!({
        "x": t.x,
        "grid": t.grid,
        "scheme_error": t.scheme_error,
        "failures": t.failures,
        "provenance": t.provenance,
        "properties": props,
        "seed": cfg.seed,
    });
    let json_path = cfg.output.dir.join("table.json");
    write_file(&json_path, &pretty(&sidecar))?;
    let code = if !t.is_complete() {
        2
    } else if props.as_ref().is_some_and(|p| !p.pass) {
        3
    } else {
        0
    };
    let out = json!({
        "command": "table",
        "seed": cfg.seed,
        "entries": t.values.len(),
        "failures": t.failures,
        "scheme_error": t.scheme_error,
        "max_flatness": t.flatness.iter().copied().filter(|f| f.is_finite()).fold(0.0, f64::max),
        "properties": props,
        "csv": csv_path,
        "sidecar": json_path,
    });
    Ok(Outcome { stdout: pretty(&out), code })
}

fn average(cfg: &RunConfig) -> Result<Outcome> {
    let a = cfg.average.as_ref().ok_or_else(|| missing("average"))?;
    let d = cfg.problem.dim;
    if let Some((pr, n)) = torus_problem(cfg, a.lambda)? {
        let (ctrl, conversion_error) = match &pr.ham {
            HamiltonianSpec::Control(c) => (c.clone(), 0.0),
            HamiltonianSpec::Closed(c) => closed_to_control(c, &pr.q_box(), &ControlResolution::default())?,
        };
        let y0 = a.y0.clone().unwrap_or_else(|| vec![0.0; n * d]);
        if y0.len() != n * d {
            return Err(Error::Config { key: "average.y0".into(), message: format!("needs {} entries", n * d) });
        }
        let torus;
        let ev;
        let policy = match a.policy {
            PolicyKind::Constant => Policy::ConstantControls,
            PolicyKind::Greedy => {
                torus = cfg.torus(n)?;
                let c = &cfg.cell;
                ev = effective_value(&pr, &torus, &geometric_schedule(c.lambda0.max(a.lambda), a.lambda)?, c.tol, c.max_iter)?;
                Policy::Greedy(&ev.solution)
            }
        };
        let r = discounted_value(&ctrl, &pr.scales, &pr.x, &pr.p, &y0, a.lambda, policy, a.dt, a.horizon)?;
        let out = json!({
            "command": "average",
            "seed": cfg.seed,
            "mode": "discounted",
            "policy": a.policy,
            "lambda": a.lambda,
            "value": r.value,
            "hbar_estimate": -r.value,
            "control_conversion_error": conversion_error,
            "runs": r.runs,
            "best": r.best,
        });
        return Ok(Outcome { stdout: pretty(&out), code: 0 });
    }
    let v = match physical(cfg)? {
        PhysicalHamiltonian::Closed(c) => c.v,
        PhysicalHamiltonian::Control(c) => match c.cost.first() {
            Some(crate::hamiltonians::CostTerm::Potential(v)) => v.clone(),
            _ => return Err(Error::Config { key: "problem".into(), message: "ray averages need a potential".into() }),
        },
        PhysicalHamiltonian::Quasi(_) => unreachable!("configs do not build quasi control forms"),
    };
    let dirs = ControlSet::unit_directions(d, a.rays)?.samples;
    let y0 = a.y0.clone().unwrap_or_else(|| vec![0.0; d]);
    if y0.len() != d {
        return Err(Error::Config { key: "average.y0".into(), message: format!("needs {d} entries") });
    }
    let samples: Vec<(Vec<f64>, Vec<f64>)> = dirs.into_iter().map(|z| (y0.clone(), z)).collect();
    let horizons = [a.horizon / 4.0, a.horizon / 2.0, a.horizon];
    let rep = b1_certificate(&v, &cfg.x(), &samples, &horizons, a.dt, &cfg.p())?;
    let out = json!({
        "command": "average",
        "seed": cfg.seed,
        "mode": "ray-average",
        "report": rep,
    });
    Ok(Outcome { stdout: pretty(&out), code: 0 })
}

fn homogenize(cfg: &RunConfig, report: &Path) -> Result<Outcome> {
    let h = cfg.homogenize.as_ref().ok_or_else(|| missing("homogenize"))?;
    let grid = cfg.table.as_ref().ok_or_else(|| missing("table"))?.grid()?;
    let c = &cfg.cell;
    let (ham, scales) = match cfg.setting()? {
        CellSetting::Torus { ham, scales } | CellSetting::Lifted { ham, scales, .. } => (ham, scales),
        CellSetting::Box { physical } => (
            match physical {
                PhysicalHamiltonian::Closed(c) => HamiltonianSpec::Closed(c),
                PhysicalHamiltonian::Control(c) => HamiltonianSpec::Control(c),
                PhysicalHamiltonian::Quasi(_) => unreachable!("configs do not build quasi control forms"),
            },
            ScaleSystem::single(cfg.problem.dim),
        ),
    };
    let effective = match h.effective {
        EffectiveKind::Torus => {
            if matches!(cfg.setting()?, CellSetting::Box { .. }) {
                return Err(Error::Config { key: "homogenize.effective".into(), message: "non-periodic potentials need effective = \"box\"".into() });
            }
            EffectiveSource::Torus {
                p_grid: grid,
                torus: cfg.torus(scales.n)?,
                schedule: geometric_schedule(c.lambda0, c.lambda_min)?,
                tol: c.tol,
                max_iter: c.max_iter,
            }
        }
        EffectiveKind::Box => {
            let b = cfg.box_.as_ref().ok_or_else(|| missing("box"))?;
            EffectiveSource::Box { p_grid: grid, params: b.params(), lambda: b.lambda, tol: b.tol, max_iter: b.max_iter }
        }
    };
    let d = cfg.problem.dim;
    let mut setup = match (h.mu, h.horizon) {
        (Some(mu), _) => ConvergenceSetup::stationary(ham, scales, h.eps.clone(), mu, effective),
        (None, Some(t)) => ConvergenceSetup::evolution(
            ham,
            scales,
            h.eps.clone(),
            t,
            cfg.initial_datum()?.ok_or_else(|| missing("homogenize.u0"))?,
            h.lo.clone().unwrap_or_else(|| vec![0.0; d]),
            h.length.clone().unwrap_or_else(|| vec![1.0; d]),
            effective,
        ),
        _ => unreachable!("validated"),
    };
    setup.cells_per_eps = h.cells_per_eps;
    setup.cfl_fraction = h.cfl_fraction;
    setup.tol = h.tol;
    setup.max_iter = h.max_iter;
    setup.scheme = c.scheme();
    let rep = convergence_study(&setup)?;
    let mut fields_path = None;
    if cfg.output.fields {
        let path = cfg.output.dir.join("homogenize_fields.csv");
        dump_fields(&setup, &rep.table, &path)?;
        fields_path = Some(path);
    }
    let out = json!({
        "command": "homogenize",
        "seed": cfg.seed,
        "eps": rep.eps,
        "cells": rep.cells,
        "h": rep.h,
        "errors": rep.errors,
        "interior_errors": rep.interior_errors,
        "boundary_errors": rep.boundary_errors,
        "scheme_errors": rep.scheme_errors,
        "floor_reached": rep.floor_reached,
        "observed_orders": rep.observed_orders,
        "decreasing_until_floor": rep.decreasing_until_floor(),
        "failures": rep.failures,
        "table_scheme_error": rep.table_scheme_error,
        "table": { "grid": rep.table.grid, "values": rep.table.values, "flatness": rep.table.flatness },
        "fields_csv": fields_path,
    });
    let text = pretty(&out);
    write_file(report, &text)?;
    Ok(Outcome { stdout: text, code: if rep.failures.is_empty() { 0 } else { 2 } })
}

/// Finest-ε oscillatory and effective solutions on the finest grid.
fn dump_fields(setup: &ConvergenceSetup, table: &EffectiveTable, path: &Path) -> Result<()> {
    let eps = *setup.eps.last().expect("validated");
    let grid = setup.grid_for(eps)?;
    let prob = OscillatoryProblem::new(setup.ham.clone(), setup.scales.clone(), eps, setup.kind.clone())?.with_scheme(setup.scheme);
    let (u, ub) = match &setup.kind {
        ProblemKind::Stationary { mu } => (
            solve_oscillatory_stationary(&prob, &grid, setup.tol, setup.max_iter)?,
            solve_effective_stationary(table, *mu, &grid, setup.tol, setup.max_iter)?,
        ),
        ProblemKind::Evolution { horizon, u0 } => {
            let dt = setup.cfl_fraction * oscillatory_cfl_limit(&prob, &grid)?.min(effective_cfl_limit(table, &grid)?);
            (solve_oscillatory_evolution(&prob, &grid, dt)?, solve_effective_evolution(table, u0, *horizon, &grid, dt)?)
        }
    };
    let mut text = String::new();
    for k in 0..grid.dim() {
        text.push_str(&format!("x{k},"));
    }
    text.push_str("u_eps,u_bar\n");
    for (j, x) in grid.nodes()?.iter().enumerate() {
        for v in x {
            text.push_str(&format!("{v:e},"));
        }
        text.push_str(&format!("{:e},{:e}\n", u.u[j], ub.u[j]));
    }
    write_file(path, &text)
}

fn verify(seed: u64, ids: &[u8], report: Option<&Path>) -> Result<Outcome> {
    let ctx = Context::new(seed);
    let rep = run_suite(&ctx, ids);
    let mut table = String::new();
    for r in &rep.results {
        table.push_str(&r.line());
        table.push('\n');
    }
    table.push_str(&format!("{} passed, {} failed (seed {seed})\n", rep.passed, rep.failed));
    if let Some(p) = report {
        write_file(p, &pretty(&rep))?;
    }
    Ok(Outcome { stdout: table, code: if rep.all_pass() { 0 } else { 3 } })
}

/// Parses `args`, runs, prints, and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(o) => {
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(o.stdout.as_bytes());
            o.code
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&error_json(&e)).expect("serializable error"));
            exit_code(&e)
        }
    }
}
