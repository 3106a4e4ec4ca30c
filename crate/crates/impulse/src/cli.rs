//! `impulse solve | simulate | validate`.
//!
//! Exit status: 0 success; 1 IO, parse, solve or artifact-integrity error;
//! 2 assumption failure (solve without `--force`) or invalid settings;
//! 3 a check failed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use impulse_core::expr::{Expr, SymbolSet};
use impulse_core::sim::{self, ImpulseStrategy, PathRecord};
use impulse_core::validation::{self, CheckReport, CheckStatus};
use impulse_core::{solver, validate_assumptions, ProblemSpec, Solution};
use serde::Serialize;

use crate::artifacts::{self, blob_hash, ArtifactError, InputRecord, RunManifest, Writer};
use crate::config::{self, ConfigError, StrategyDoc};
use crate::parallel::RayonExecutor;

#[derive(Debug, Parser)]
#[command(name = "impulse", version, about = "Impulse control of jump diffusions: QVI solver, Monte Carlo and checks")]
pub struct Cli {
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the penalized QVI and write value slices, masks and impulse maps.
    Solve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        solver: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Proceed despite failed assumption checks.
        #[arg(long)]
        force: bool,
    },
    /// Estimate the cost of a strategy by Monte Carlo.
    Simulate {
        #[arg(long)]
        problem: PathBuf,
        /// none | policy:DIR | fixed:T:XI0,XI1;... | file:PATH
        #[arg(long)]
        strategy: String,
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long)]
        mc: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the first N paths as CSV.
        #[arg(long, default_value_t = 0)]
        dump_paths: usize,
    },
    /// Run checks against a solve directory.
    Validate {
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value = "dpp,bounds,obstacle,viscosity")]
        checks: String,
        #[arg(long)]
        out: PathBuf,
        /// Check settings (JSON); defaults apply when absent.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure { code, message: message.into() }
}

impl From<ArtifactError> for Failure {
    fn from(e: ArtifactError) -> Self {
        match e {
            ArtifactError::Config(c) => c.into(),
            other => fail(1, other.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        if e.is_assumption_failure() {
            fail(2, format!("assumption failure: {e}"))
        } else {
            fail(1, e.to_string())
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Runs a parsed command line and returns the exit status.
pub fn run(cli: Cli) -> Result<u8, Failure> {
    let exec = RayonExecutor::new(cli.jobs).map_err(|e| fail(1, e.to_string()))?;
    match cli.command {
        Command::Solve { problem, solver, out, force } => cmd_solve(&exec, &problem, &solver, &out, force),
        Command::Simulate { problem, strategy, x0, t0, mc, out, dump_paths } => {
            cmd_simulate(&exec, &problem, &strategy, &x0, t0, &mc, &out, dump_paths)
        }
        Command::Validate { solution, checks, out, config } => {
            cmd_validate(&exec, &solution, &checks, &out, config.as_deref())
        }
    }
}

struct Input {
    role: String,
    path: PathBuf,
    text: String,
}

fn read_input(role: &str, path: &Path) -> Result<Input, Failure> {
    let text = config::read_text(path).map_err(|e| fail(1, e.to_string()))?;
    Ok(Input { role: role.into(), path: path.to_path_buf(), text })
}

fn record(role: &str, path: &Path, bytes: &[u8]) -> InputRecord {
    InputRecord { role: role.into(), path: path.display().to_string(), blob: blob_hash(bytes) }
}

fn write_manifest(
    w: &Writer,
    command: &str,
    arguments: BTreeMap<String, String>,
    inputs: Vec<InputRecord>,
    seeds: BTreeMap<String, u64>,
    started: Instant,
) -> Result<(), Failure> {
    let m = RunManifest {
        command: command.into(),
        arguments,
        input_hash: artifacts::input_hash(&inputs),
        inputs,
        seeds,
        artifact_dir: w.root().display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    w.put("manifest.json", &artifacts::to_json(&m))?;
    Ok(())
}

fn args<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

pub fn cmd_solve(exec: &RayonExecutor, problem: &Path, solver_path: &Path, out: &Path, force: bool) -> Result<u8, Failure> {
    let started = Instant::now();
    let p = read_input("problem", problem)?;
    let s = read_input("solver", solver_path)?;
    let spec = match config::parse_problem(&p.text) {
        Ok(spec) => spec,
        Err(e) if e.is_assumption_failure() && force => {
            eprintln!("warning: {e} (continuing: --force)");
            config::parse_problem_lenient(&p.text)?
        }
        Err(e) => return Err(e.into()),
    };
    let cfg = config::parse_solver(&s.text)?;
    let grid = cfg.validate(&spec).map_err(|e| fail(2, e.to_string()))?;
    let report = validate_assumptions(&spec, &grid.bounds(), cfg.assumption_samples.max(1), cfg.seed)
        .map_err(|e| fail(2, format!("assumption failure: {e}")))?;
    if !report.passed() {
        let failed: Vec<String> = report.failures().map(|e| format!("{} ({}): {}", e.id, e.name, e.note)).collect();
        if !force {
            return Err(fail(2, format!("assumption failure: {}", failed.join("; "))));
        }
        eprintln!("warning: assumption failure: {} (continuing: --force)", failed.join("; "));
    }
    let sol = solver::solve_penalized_with(exec, &spec, &cfg).map_err(|e| fail(1, format!("solve failed: {e}")))?;
    let mut w = Writer::create(out)?;
    let summary = artifacts::write_solution(&mut w, &spec, &cfg, &sol, report, force, &p.text, &s.text)?;
    let d = &summary.diagnostics;
    println!(
        "solved {} nodes x {} slices: outer={} converged={} newton={} r1_max={:.3e} r2_max={:.3e} comp_max={:.3e} projection_max={:.3e}",
        sol.grid.len(),
        sol.grid.t_count,
        d.outer_iterations,
        d.converged,
        d.newton_iterations,
        d.qvi_residual.r1_max,
        d.qvi_residual.r2_max,
        d.qvi_residual.comp_max,
        d.projection_max
    );
    write_manifest(
        &w,
        "solve",
        args([
            ("problem", problem.display().to_string()),
            ("solver", solver_path.display().to_string()),
            ("force", force.to_string()),
        ]),
        vec![record(&p.role, &p.path, p.text.as_bytes()), record(&s.role, &s.path, s.text.as_bytes())],
        BTreeMap::from([("assumptions".to_string(), cfg.seed)]),
        started,
    )?;
    Ok(0)
}

/// Estimate document of `simulate`.
#[derive(Debug, Serialize)]
struct EstimateDoc<'a> {
    #[serde(flatten)]
    estimate: &'a sim::CostEstimate,
    strategy: String,
    x0: Vec<f64>,
    t0: f64,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gap: Option<f64>,
}

/// Core strategy for a parsed strategy document; policies borrow `sol`.
pub fn build_strategy<'a>(doc: &StrategyDoc, sol: Option<&'a Solution>, dim: usize) -> Result<ImpulseStrategy<'a>, Failure> {
    Ok(match doc {
        StrategyDoc::None => ImpulseStrategy::NoAction,
        StrategyDoc::Policy { .. } => ImpulseStrategy::Feedback(sol.expect("policy strategies load their solution")),
        StrategyDoc::Fixed { events } => ImpulseStrategy::FixedSchedule(events.iter().map(|e| (e.t, e.xi.clone())).collect()),
        StrategyDoc::Threshold { trigger, impulse } => {
            let sym = SymbolSet::state(dim);
            let parse = |s: &str| Expr::parse(s, &sym).map_err(|e| fail(1, format!("strategy expression {s:?}: {e}")));
            ImpulseStrategy::Threshold { trigger: parse(trigger)?, impulse: impulse.iter().map(|s| parse(s)).collect::<Result<_, _>>()? }
        }
    })
}

fn path_csv(rec: &PathRecord, dim: usize) -> Vec<u8> {
    let mut s = String::from("t");
    for i in 0..dim {
        s.push_str(&format!(",x{i}"));
    }
    s.push_str(",impulses\n");
    let mut next = 0;
    for (t, x) in rec.times.iter().zip(&rec.states) {
        let mut count = 0;
        while next < rec.impulses.len() && rec.impulses[next].0 == *t {
            count += 1;
            next += 1;
        }
        s.push_str(&format!("{t:?}"));
        for v in x {
            s.push_str(&format!(",{v:?}"));
        }
        s.push_str(&format!(",{count}\n"));
    }
    s.into_bytes()
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_simulate(
    exec: &RayonExecutor,
    problem: &Path,
    strategy: &str,
    x0: &str,
    t0: f64,
    mc: &Path,
    out: &Path,
    dump_paths: usize,
) -> Result<u8, Failure> {
    let started = Instant::now();
    let p = read_input("problem", problem)?;
    let m = read_input("mc", mc)?;
    let spec = config::parse_problem(&p.text)?;
    let cfg = config::parse_mc(&m.text)?;
    let x0 = config::parse_csv_list(x0).map_err(|e| fail(2, format!("--x0: {e}")))?;
    let doc = config::parse_strategy(strategy)?;
    let mut inputs = vec![record(&p.role, &p.path, p.text.as_bytes()), record(&m.role, &m.path, m.text.as_bytes())];
    if let Some(path) = strategy.strip_prefix("file:") {
        let bytes = std::fs::read(path).map_err(|e| fail(1, format!("{path}: {e}")))?;
        inputs.push(record("strategy", Path::new(path), &bytes));
    }
    let loaded = match &doc {
        StrategyDoc::Policy { solution } => {
            let l = artifacts::load_solution(solution)?;
            if l.solution.grid.dim() != spec.dim {
                return Err(fail(2, "policy dimension differs from the problem"));
            }
            inputs.push(record("solution", &solution.join("summary.json"), &l.summary_bytes));
            Some(l)
        }
        _ => None,
    };
    let sol = loaded.as_ref().map(|l| &l.solution);
    let strat = build_strategy(&doc, sol, spec.dim)?;
    cfg.validate(&spec).map_err(|e| fail(2, e.to_string()))?;
    let est = sim::estimate_cost_with(exec, &spec, &strat, &x0, t0, &cfg).map_err(|e| fail(2, e.to_string()))?;
    let value = match sol {
        Some(sol) => Some(sol.value_at(&spec, &x0, t0).map_err(|e| fail(2, format!("solution does not cover x0: {e}")))?),
        None => None,
    };
    let mut w = Writer::create(out)?;
    let doc_out = EstimateDoc {
        estimate: &est,
        strategy: strategy.into(),
        x0: x0.clone(),
        t0,
        seed: cfg.seed,
        value,
        gap: value.map(|v| est.mean - v),
    };
    w.write_json("estimate.json", &doc_out)?;
    for i in 0..dump_paths.min(cfg.n_paths) {
        let rec = sim::simulate_path(&spec, &strat, &x0, t0, &cfg, i).map_err(|e| fail(2, e.to_string()))?;
        w.write(&format!("paths/path_{i:05}.csv"), &path_csv(&rec, spec.dim))?;
    }
    print!("mean={:.6} stderr={:.3e} ci95={:.3e} n_paths={} dt={}", est.mean, est.stderr, est.ci95, est.n_paths, est.dt);
    if let Some(v) = value {
        print!(" value={v:.6} gap={:.3e}", est.mean - v);
    }
    println!("{}", if est.flags.unreliable { " UNRELIABLE" } else { "" });
    write_manifest(
        &w,
        "simulate",
        args([
            ("problem", problem.display().to_string()),
            ("strategy", strategy.into()),
            ("x0", format!("{x0:?}")),
            ("t0", format!("{t0:?}")),
            ("mc", mc.display().to_string()),
            ("dump_paths", dump_paths.to_string()),
        ]),
        inputs,
        BTreeMap::from([("paths".to_string(), cfg.seed)]),
        started,
    )?;
    Ok(0)
}

pub fn run_checks(
    exec: &RayonExecutor,
    spec: &ProblemSpec,
    sol: &Solution,
    checks: &[String],
    vc: &config::ValidateConfig,
) -> Result<Vec<CheckReport>, Failure> {
    let mut reports = Vec::new();
    for id in checks {
        let rep = match id.as_str() {
            "dpp" => {
                let d = &vc.dpp;
                let x0 = d.x0.clone().unwrap_or_else(|| {
                    sol.grid.axes.iter().map(|a| a.coord((a.count - 1) / 2)).collect()
                });
                d.mc.validate(spec).map_err(|e| fail(2, e.to_string()))?;
                validation::check_dpp_with(exec, spec, sol, &d.stop(spec.horizon), &x0, d.t0, &d.mc, d.c_disc)
                    .map_err(|e| fail(2, e.to_string()))?
            }
            "bounds" => validation::check_bounds(sol, spec, vc.bounds.pairs, vc.bounds.seed),
            "obstacle" => validation::check_obstacle_chain(sol, spec, vc.region_tol.unwrap_or(sol.region_tol)),
            "viscosity" => validation::check_viscosity_probe_with(exec, sol, spec, &vc.viscosity)
                .map_err(|e| fail(2, e.to_string()))?,
            other => return Err(fail(2, format!("unknown check {other}"))),
        };
        reports.push(rep);
    }
    Ok(reports)
}

pub fn cmd_validate(
    exec: &RayonExecutor,
    solution: &Path,
    checks: &str,
    out: &Path,
    config_path: Option<&Path>,
) -> Result<u8, Failure> {
    let started = Instant::now();
    let checks = validation::parse_check_list(checks).map_err(|e| fail(2, e.to_string()))?;
    let loaded = artifacts::load_solution(solution)?;
    let mut inputs = vec![record("solution", &solution.join("summary.json"), &loaded.summary_bytes)];
    let vc = match config_path {
        Some(path) => {
            let c = read_input("validate", path)?;
            inputs.push(record(&c.role, &c.path, c.text.as_bytes()));
            config::parse_validate(&c.text)?
        }
        None => config::ValidateConfig::default(),
    };
    let reports = run_checks(exec, &loaded.spec, &loaded.solution, &checks, &vc)?;
    let mut w = Writer::create(out)?;
    w.write_json("checks.json", &reports)?;
    let mut failed = false;
    for r in &reports {
        let status = match r.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "FAIL",
            CheckStatus::Inconclusive => "inconclusive",
        };
        failed |= r.status == CheckStatus::Fail;
        let margin = r.margin.map_or("n/a".to_string(), |m| format!("{m:.3e}"));
        println!("{:<10} {:<12} margin={margin}{}", r.id, status, if r.note.is_empty() { String::new() } else { format!(" ({})", r.note) });
    }
    let seeds = BTreeMap::from([
        ("dpp".to_string(), vc.dpp.mc.seed),
        ("bounds".to_string(), vc.bounds.seed),
        ("viscosity".to_string(), vc.viscosity.seed),
    ]);
    write_manifest(
        &w,
        "validate",
        args([
            ("solution", solution.display().to_string()),
            ("checks", checks.join(",")),
            ("config", config_path.map_or(String::new(), |p| p.display().to_string())),
        ]),
        inputs,
        seeds,
        started,
    )?;
    Ok(if failed { 3 } else { 0 })
}
