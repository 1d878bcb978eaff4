//! The `coordgame` command line.
//!
//! Exit codes: 0 success, 1 invalid input or evaluation error, 2 iteration cap
//! reached, 3 certification check failed, 4 certification budget exceeded,
//! 5 steering target unreachable.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::certify::{certify_point, grid_potential_argmax, CertifyError};
use crate::io::{
    canonical_json, contour_csv, joined_csv, resolve_scenario, steering_csv, write_atomic, write_json, write_run,
    Manifest,
};
use crate::scenarios::{max_pairwise_l1, steer_collective, Algorithm, ScenarioDef, SteeringConfig, SteeringStatus};
use crate::solvers::{SolverConfig, StepSchedule, Status, Trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_MAX_ITER: i32 = 2;
pub const EXIT_CHECK_FAILED: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;
pub const EXIT_UNREACHABLE: i32 = 5;

/// Distance below which a compared run counts as having reached the maximizer.
const COMPARE_ERROR: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "coordgame", version, about = "Equilibrium learning and certification for weighted-potential coordination games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct OutArgs {
    /// Output directory.
    #[arg(long, env = "COORDGAME_OUT_DIR", default_value = "coordgame-out")]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct SolverOverrides {
    /// Seed for randomized subgradient selection.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    /// Constant step size of gradient methods.
    #[arg(long)]
    eta: Option<f64>,
    /// Proximal weight of IMM and IMMd.
    #[arg(long)]
    prox_weight: Option<f64>,
    /// Number of averaged sample paths for sga.
    #[arg(long)]
    averaging: Option<usize>,
    /// Agent that moves first in best-response sweeps.
    #[arg(long)]
    ibr_start_agent: Option<usize>,
}

impl SolverOverrides {
    fn apply(&self, mut cfg: SolverConfig) -> SolverConfig {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.max_iter {
            cfg.max_iter = m;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(eta) = self.eta {
            cfg.step = StepSchedule::Constant { eta };
        }
        if let Some(p) = self.prox_weight {
            cfg.prox_weight = p;
        }
        if let Some(a) = self.averaging {
            cfg.averaging = a;
        }
        if let Some(i) = self.ibr_start_agent {
            cfg.ibr_start_agent = i;
        }
        cfg
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one learning algorithm and write its trajectory.
    Run {
        /// Built-in scenario name or path to a scenario file.
        scenario: String,
        #[arg(long)]
        algo: Algorithm,
        /// Initial joint strategy, comma separated.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<Point>,
        #[command(flatten)]
        solver: SolverOverrides,
        #[command(flatten)]
        out: OutArgs,
        /// Add a wall_ms column to trajectory files.
        #[arg(long)]
        timing: bool,
        /// Also sample the potential on an N×N grid over the first two coordinates.
        #[arg(long, value_name = "N")]
        emit_contours: Option<usize>,
    },
    /// Certify a point: best-response gaps, grid maximizer and regularization bound.
    Certify {
        scenario: String,
        #[arg(long, allow_hyphen_values = true)]
        point: Point,
        /// Grid points per continuous coordinate.
        #[arg(long)]
        resolution: Option<usize>,
        /// Cap on grid evaluations.
        #[arg(long)]
        budget: Option<u64>,
        /// Largest best-response gap accepted as Nash.
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run several algorithms from the same start and join their error curves.
    Compare {
        scenario: String,
        #[arg(long, value_delimiter = ',', required = true)]
        algos: Vec<Algorithm>,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<Point>,
        #[command(flatten)]
        solver: SolverOverrides,
        #[command(flatten)]
        out: OutArgs,
        #[arg(long)]
        timing: bool,
    },
    /// Steer the collective utility of an incentivized scenario to a target.
    Steer {
        scenario: String,
        #[arg(long, allow_hyphen_values = true)]
        tau: f64,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda_min: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        lambda_max: Option<f64>,
        #[arg(long)]
        max_outer: Option<usize>,
        /// Stop once |J - tau| is at most this.
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<Point>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Print a scenario as a canonical scenario file.
    Export {
        scenario: String,
        /// Write to this file instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List the built-in scenarios.
    List,
}

/// Comma-separated coordinates.
#[derive(Debug, Clone, PartialEq)]
struct Point(Vec<f64>);

impl std::str::FromStr for Point {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_vector(s).map(Point)
    }
}

fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{p}` is not a number"))
                .and_then(|v| if v.is_finite() { Ok(v) } else { Err(format!("`{p}` is not finite")) })
        })
        .collect()
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32, String> {
    match cmd {
        Command::Run {
            scenario,
            algo,
            x0,
            solver,
            out,
            timing,
            emit_contours,
        } => cmd_run(&scenario, algo, x0.map(|p| p.0), &solver, &out.out, timing, emit_contours),
        Command::Certify {
            scenario,
            point,
            resolution,
            budget,
            epsilon,
            out,
        } => cmd_certify(&scenario, &point.0, resolution, budget, epsilon, &out.out),
        Command::Compare {
            scenario,
            algos,
            x0,
            solver,
            out,
            timing,
        } => cmd_compare(&scenario, &algos, x0.map(|p| p.0), &solver, &out.out, timing),
        Command::Steer {
            scenario,
            tau,
            eta,
            delta,
            lambda_min,
            lambda_max,
            max_outer,
            tolerance,
            x0,
            out,
        } => {
            let d = SteeringConfig::default();
            let steer = SteeringConfig {
                tau,
                eta: eta.unwrap_or(d.eta),
                delta: delta.unwrap_or(d.delta),
                lambda_min: lambda_min.unwrap_or(d.lambda_min),
                lambda_max: lambda_max.unwrap_or(d.lambda_max),
                max_outer: max_outer.unwrap_or(d.max_outer),
                tolerance: tolerance.unwrap_or(d.tolerance),
                ..d
            };
            cmd_steer(&scenario, &steer, x0.map(|p| p.0), &out.out)
        }
        Command::Export { scenario, output } => {
            let def = load(&scenario)?;
            let text = canonical_json(&def);
            match output {
                Some(p) => write_atomic(&p, text.as_bytes()).map_err(|e| e.to_string())?,
                None => print!("{text}"),
            }
            Ok(EXIT_OK)
        }
        Command::List => {
            for name in crate::scenarios::BUILTIN_NAMES {
                let def = crate::scenarios::builtin(name).expect("listed builtin exists");
                println!("{name:<30} {}", def.description);
            }
            Ok(EXIT_OK)
        }
    }
}

fn load(scenario: &str) -> Result<ScenarioDef, String> {
    let def = resolve_scenario(scenario).map_err(|e| e.to_string())?;
    for w in def.game.warnings() {
        eprintln!("warning: {w}");
    }
    Ok(def)
}

fn start_point(def: &ScenarioDef, x0: Option<Vec<f64>>) -> Result<Vec<f64>, String> {
    let x0 = x0.unwrap_or_else(|| def.default_start());
    def.game.space().check_feasible(&x0).map_err(|e| format!("--x0: {e}"))?;
    Ok(x0)
}

fn status_code(status: Status) -> i32 {
    match status {
        Status::Converged => EXIT_OK,
        Status::MaxIter => EXIT_MAX_ITER,
        Status::Error => EXIT_INVALID,
    }
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn cmd_run(
    scenario: &str,
    algo: Algorithm,
    x0: Option<Vec<f64>>,
    overrides: &SolverOverrides,
    out: &Path,
    timing: bool,
    contours: Option<usize>,
) -> Result<i32, String> {
    let def = load(scenario)?;
    let x0 = start_point(&def, x0)?;
    let cfg = overrides.apply(def.config(algo));
    let traj = algo.solve(&def.game, &x0, &cfg).map_err(|e| e.to_string())?;
    let manifest = Manifest::new(&def, algo, &cfg, &x0, &traj);
    write_run(out, "", &manifest, &traj, timing).map_err(|e| e.to_string())?;
    if let Some(n) = contours {
        if def.game.dim() < 2 {
            return Err("--emit-contours needs at least two coordinates".to_string());
        }
        let csv = contour_csv(&def.game, &x0, 0, 1, n).map_err(|e| e.to_string())?;
        write_atomic(&out.join("contours.csv"), csv.as_bytes()).map_err(|e| e.to_string())?;
    }
    println!(
        "{} {algo}: {} after {} iterations at {} with potential {:.9}",
        def.name,
        traj.status.as_str(),
        traj.iterations(),
        fmt_point(traj.final_point()),
        traj.last().potential
    );
    if let Some(m) = &traj.message {
        eprintln!("error: {m}");
    }
    println!("wrote {}", out.display());
    Ok(status_code(traj.status))
}

fn cmd_certify(
    scenario: &str,
    point: &[f64],
    resolution: Option<usize>,
    budget: Option<u64>,
    epsilon: f64,
    out: &Path,
) -> Result<i32, String> {
    let def = load(scenario)?;
    let resolution = resolution.unwrap_or(def.certification.resolution);
    let budget = budget.unwrap_or(def.certification.budget);
    let report = match certify_point(&def.game, point, resolution, budget, epsilon) {
        Ok(r) => r,
        Err(e @ CertifyError::Budget { .. }) => {
            eprintln!("error: {e}");
            return Ok(EXIT_BUDGET);
        }
        Err(e) => return Err(e.to_string()),
    };
    write_json(&out.join("certification.json"), &report).map_err(|e| e.to_string())?;
    println!("{} at {}", def.name, fmt_point(point));
    println!("  epsilon = {:.3e} (gaps {:?})", report.epsilon, report.gaps);
    println!(
        "  grid maximizer {} with potential {:.9}; potential gap {:.3e}",
        fmt_point(&report.grid.point),
        report.grid.value,
        report.potential_gap
    );
    for b in &report.bounds {
        println!(
            "  [{}] {}: {:.9} {} {:.9}",
            if b.satisfied { "pass" } else { "FAIL" },
            b.name,
            b.lhs,
            b.relation,
            b.rhs
        );
    }
    Ok(if report.passed() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

#[derive(Serialize)]
struct CompareSummary {
    scenario: String,
    x0: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<Vec<f64>>,
    runs: Vec<CompareRun>,
}

#[derive(Serialize)]
struct CompareRun {
    algo: Algorithm,
    status: String,
    iterations: usize,
    final_point: Vec<f64>,
    /// First iteration within the comparison error of the reference point.
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations_to_error: Option<usize>,
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn planar_agents(def: &ScenarioDef) -> bool {
    def.game.num_agents() > 1 && def.game.space().blocks().iter().all(|b| b.dim() == 2)
}

fn cmd_compare(
    scenario: &str,
    algos: &[Algorithm],
    x0: Option<Vec<f64>>,
    overrides: &SolverOverrides,
    out: &Path,
    timing: bool,
) -> Result<i32, String> {
    let def = load(scenario)?;
    let x0 = start_point(&def, x0)?;
    let runs: Vec<(Algorithm, SolverConfig, Trajectory)> = algos
        .par_iter()
        .map(|&a| {
            let cfg = overrides.apply(def.config(a));
            a.solve(&def.game, &x0, &cfg)
                .map(|t| (a, cfg, t))
                .map_err(|e| format!("{a}: {e}"))
        })
        .collect::<Result<_, _>>()?;
    let reference = match grid_potential_argmax(&def.game, def.certification.resolution, def.certification.budget) {
        Ok(r) => Some(r.point),
        Err(CertifyError::Budget { .. }) => None,
        Err(e) => return Err(e.to_string()),
    };
    let mut columns = Vec::new();
    let mut summary = CompareSummary {
        scenario: def.name.clone(),
        x0: x0.clone(),
        reference: reference.clone(),
        runs: Vec::new(),
    };
    let mut code = EXIT_OK;
    for (algo, cfg, traj) in &runs {
        let manifest = Manifest::new(&def, *algo, cfg, &x0, traj);
        write_run(out, &format!("{algo}_"), &manifest, traj, timing).map_err(|e| e.to_string())?;
        let mut hit = None;
        if let Some(r) = &reference {
            let errors: Vec<f64> = traj.steps.iter().map(|s| euclid(&s.x, r)).collect();
            hit = errors.iter().position(|e| *e <= COMPARE_ERROR);
            columns.push((format!("{algo}_error"), errors));
        }
        if planar_agents(&def) {
            columns.push((
                format!("{algo}_max_pairwise_l1"),
                traj.steps.iter().map(|s| max_pairwise_l1(&def.game, &s.x)).collect(),
            ));
        }
        columns.push((format!("{algo}_potential"), traj.potentials()));
        code = code.max(status_code(traj.status));
        println!(
            "{algo:<5} {:<9} {:>6} iterations  final {}{}",
            traj.status.as_str(),
            traj.iterations(),
            fmt_point(traj.final_point()),
            hit.map(|h| format!("  error <= 1e-4 at iteration {h}")).unwrap_or_default()
        );
        summary.runs.push(CompareRun {
            algo: *algo,
            status: traj.status.as_str().to_string(),
            iterations: traj.iterations(),
            final_point: traj.final_point().to_vec(),
            iterations_to_error: hit,
        });
    }
    write_atomic(&out.join("compare.csv"), joined_csv(&columns).as_bytes()).map_err(|e| e.to_string())?;
    write_json(&out.join("compare.json"), &summary).map_err(|e| e.to_string())?;
    println!("wrote {}", out.display());
    Ok(code)
}

fn cmd_steer(scenario: &str, steer: &SteeringConfig, x0: Option<Vec<f64>>, out: &Path) -> Result<i32, String> {
    let def = load(scenario)?;
    let x0 = start_point(&def, x0)?;
    let cfg = def.config(Algorithm::Imm);
    let trace = steer_collective(&def, &x0, steer, &cfg).map_err(|e| e.to_string())?;
    write_atomic(&out.join("steering.csv"), steering_csv(&trace).as_bytes()).map_err(|e| e.to_string())?;
    write_json(&out.join("steering.json"), &trace).map_err(|e| e.to_string())?;
    let last = trace.last();
    println!(
        "{}: tau {} {} after {} steps; J = {:.6}, |J - tau| = {:.3e}, lambda = {}",
        def.name,
        trace.tau,
        trace.status.as_str(),
        last.k,
        last.collective,
        last.error,
        fmt_point(&last.lambdas)
    );
    if let (SteeringStatus::Unreachable, Some((lo, hi))) = (trace.status, trace.reachable) {
        eprintln!("target unreachable: equilibrium J spans [{lo:.6}, {hi:.6}] within the incentive bounds");
    }
    println!("wrote {}", out.display());
    Ok(match trace.status {
        SteeringStatus::Reached => EXIT_OK,
        SteeringStatus::MaxIter => EXIT_MAX_ITER,
        SteeringStatus::Unreachable => EXIT_UNREACHABLE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vectors_parse() {
        assert_eq!(parse_vector("2,4").unwrap(), vec![2.0, 4.0]);
        assert_eq!(parse_vector("-4, -4.5").unwrap(), vec![-4.0, -4.5]);
        assert!(parse_vector("1,x").is_err());
        assert!(parse_vector("inf").is_err());
    }

    #[test]
    fn usage_errors_are_validation_failures() {
        assert_eq!(main_with(["coordgame", "run"]), EXIT_INVALID);
        assert_eq!(main_with(["coordgame", "run", "team_nonsmooth", "--algo", "newton"]), EXIT_INVALID);
    }

    #[test]
    fn overrides_apply() {
        let o = SolverOverrides {
            seed: Some(9),
            max_iter: None,
            tol: None,
            eta: Some(0.5),
            prox_weight: None,
            averaging: None,
            ibr_start_agent: None,
        };
        let cfg = o.apply(SolverConfig::default());
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.step, StepSchedule::Constant { eta: 0.5 });
    }
}
