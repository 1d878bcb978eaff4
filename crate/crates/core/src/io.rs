//! Scenario files, run outputs and atomic persistence.
//!
//! Scenarios are JSON documents; trajectories and traces are CSV with every
//! number printed to 17 significant digits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::game::{AgentSpec, CollectiveUtility, GameError, GameParts, GameSpec, Regularizer};
use crate::pt::{OutcomeDistribution, WeightingFunction};
use crate::scenarios::{builtin, AcceptanceMeta, Algorithm, CertificationSettings, ScenarioDef, SteeringTrace};
use crate::solvers::{SolverConfig, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: line {line}, column {column}: field `{field}`: {message}")]
    Parse {
        origin: String,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: unsupported schema_version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { origin: String, found: u32 },
    #[error("{origin}: {source}")]
    Game {
        origin: String,
        #[source]
        source: GameError,
    },
    #[error("unknown scenario `{0}`: not a built-in name or readable file")]
    UnknownScenario(String),
}

impl IoError {
    /// Dotted path of the offending field, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            IoError::Parse { field, .. } => Some(field),
            IoError::Game {
                source: GameError::Invalid { path, .. },
                ..
            } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

/// On-disk form of a [`ScenarioDef`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub meta: Meta,
    pub distribution: OutcomeDistribution,
    #[serde(default)]
    pub weighting: WeightingFunction,
    pub agents: Vec<AgentSpec>,
    pub collective: CollectiveUtility,
    #[serde(default)]
    pub regularizer: Regularizer,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub initial_states: Vec<Vec<f64>>,
    #[serde(default)]
    pub solver_defaults: BTreeMap<Algorithm, SolverConfig>,
    #[serde(default)]
    pub certification: CertificationSettings,
    #[serde(default)]
    pub acceptance: AcceptanceMeta,
}

impl ScenarioFile {
    pub fn from_def(def: &ScenarioDef) -> Self {
        let parts = def.game.parts();
        Self {
            schema_version: SCHEMA_VERSION,
            meta: Meta {
                name: def.name.clone(),
                description: def.description.clone(),
            },
            distribution: parts.distribution.clone(),
            weighting: parts.weighting.clone(),
            agents: parts.agents.clone(),
            collective: parts.collective.clone(),
            regularizer: parts.regularizer.clone(),
            lambda: parts.lambda,
            initial_states: def.initial_states.clone(),
            solver_defaults: def.solver_defaults.clone(),
            certification: def.certification,
            acceptance: def.acceptance.clone(),
        }
    }

    pub fn into_def(self, origin: &str) -> Result<ScenarioDef, IoError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(IoError::SchemaVersion {
                origin: origin.to_string(),
                found: self.schema_version,
            });
        }
        let game_err = |source| IoError::Game {
            origin: origin.to_string(),
            source,
        };
        let game = GameSpec::new(GameParts {
            agents: self.agents,
            collective: self.collective,
            regularizer: self.regularizer,
            lambda: self.lambda,
            distribution: self.distribution,
            weighting: self.weighting,
        })
        .map_err(game_err)?;
        for (k, x0) in self.initial_states.iter().enumerate() {
            game.space().check_feasible(x0).map_err(|e| {
                game_err(GameError::Invalid {
                    path: format!("initial_states[{k}]"),
                    message: e.to_string(),
                })
            })?;
        }
        for (algo, cfg) in &self.solver_defaults {
            cfg.validate().map_err(|e| {
                game_err(GameError::Invalid {
                    path: format!("solver_defaults.{algo}"),
                    message: e.to_string(),
                })
            })?;
        }
        Ok(ScenarioDef {
            name: self.meta.name,
            description: self.meta.description,
            game,
            initial_states: self.initial_states,
            solver_defaults: self.solver_defaults,
            certification: self.certification,
            acceptance: self.acceptance,
        })
    }
}

/// Parse and validate a scenario document. `origin` labels diagnostics.
pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioDef, IoError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let file: ScenarioFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        IoError::Parse {
            origin: origin.to_string(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: strip_position(&inner.to_string()),
        }
    })?;
    file.into_def(origin)
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(k) => msg[..k].to_string(),
        None => msg.to_string(),
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioDef, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text, &path.display().to_string())
}

/// A built-in name, or else a path to a scenario file.
pub fn resolve_scenario(name_or_path: &str) -> Result<ScenarioDef, IoError> {
    if let Some(def) = builtin(name_or_path) {
        return Ok(def);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        load_scenario(path)
    } else {
        Err(IoError::UnknownScenario(name_or_path.to_string()))
    }
}

/// Canonical document: pretty JSON with a trailing newline.
pub fn canonical_json(def: &ScenarioDef) -> String {
    let mut s = serde_json::to_string_pretty(&ScenarioFile::from_def(def)).expect("scenario serializes");
    s.push('\n');
    s
}

/// Hex SHA-256 of the canonical document.
pub fn scenario_hash(def: &ScenarioDef) -> String {
    hex::encode(Sha256::digest(canonical_json(def).as_bytes()))
}

/// Write through a sibling temporary file and rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let err = |source| IoError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(err)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        use std::io::Write;
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(err)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// Number format shared by every CSV: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let mut first = true;
    for c in cells {
        if !first {
            out.push(',');
        }
        out.push_str(&c);
        first = false;
    }
    out.push('\n');
}

/// `iter, x1..xN, potential, displacement[, wall_ms]`, one row per step.
pub fn trajectory_csv(traj: &Trajectory, timing: bool) -> String {
    let dim = traj.steps[0].x.len();
    let mut out = String::new();
    let mut header = vec!["iter".to_string()];
    header.extend((1..=dim).map(|c| format!("x{c}")));
    header.extend(["potential".to_string(), "displacement".to_string()]);
    if timing {
        header.push("wall_ms".to_string());
    }
    push_row(&mut out, header);
    for s in &traj.steps {
        let mut row = vec![s.iter.to_string()];
        row.extend(s.x.iter().map(|v| num(*v)));
        row.push(num(s.potential));
        row.push(num(s.displacement));
        if timing {
            row.push(num(s.wall_ms));
        }
        push_row(&mut out, row);
    }
    out
}

/// `cycle, agent, w1..wd` for every coordinator relay.
pub fn relay_csv(traj: &Trajectory) -> String {
    let width = traj.relay_log.iter().map(|e| e.block.len()).max().unwrap_or(0);
    let mut out = String::new();
    let mut header = vec!["cycle".to_string(), "agent".to_string()];
    header.extend((1..=width).map(|c| format!("w{c}")));
    push_row(&mut out, header);
    for e in &traj.relay_log {
        let mut row = vec![e.cycle.to_string(), e.agent.to_string()];
        row.extend(e.block.iter().map(|v| num(*v)));
        push_row(&mut out, row);
    }
    out
}

/// `k, lambda1..lambdaN, x1..xD, J, abs_error`.
pub fn steering_csv(trace: &SteeringTrace) -> String {
    let first = &trace.steps[0];
    let mut out = String::new();
    let mut header = vec!["k".to_string()];
    header.extend((1..=first.lambdas.len()).map(|i| format!("lambda{i}")));
    header.extend((1..=first.x.len()).map(|c| format!("x{c}")));
    header.extend(["J".to_string(), "abs_error".to_string()]);
    push_row(&mut out, header);
    for s in &trace.steps {
        let mut row = vec![s.k.to_string()];
        row.extend(s.lambdas.iter().map(|v| num(*v)));
        row.extend(s.x.iter().map(|v| num(*v)));
        row.push(num(s.collective));
        row.push(num(s.error));
        push_row(&mut out, row);
    }
    out
}

/// Per-iteration table joining several runs; a run that stopped early leaves its cells empty.
pub fn joined_csv(columns: &[(String, Vec<f64>)]) -> String {
    let len = columns.iter().map(|(_, v)| v.len()).max().unwrap_or(0);
    let mut out = String::new();
    push_row(&mut out, std::iter::once("iter".to_string()).chain(columns.iter().map(|(h, _)| h.clone())));
    for n in 0..len {
        push_row(
            &mut out,
            std::iter::once(n.to_string()).chain(columns.iter().map(|(_, v)| v.get(n).map(|x| num(*x)).unwrap_or_default())),
        );
    }
    out
}

/// Potential sampled on an `n × n` grid over coordinates `a` and `b`, other coordinates fixed at `base`.
pub fn contour_csv(game: &GameSpec, base: &[f64], a: usize, b: usize, n: usize) -> Result<String, GameError> {
    let space = game.space();
    let axis = |c: usize| -> Vec<f64> {
        let (lo, hi) = (space.lo(c), space.hi(c));
        if n < 2 {
            return vec![lo];
        }
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    };
    let (xs, ys) = (axis(a), axis(b));
    let mut out = String::new();
    let _ = writeln!(out, "x{},x{},potential", a + 1, b + 1);
    let mut p = base.to_vec();
    for &x in &xs {
        for &y in &ys {
            p[a] = x;
            p[b] = y;
            push_row(&mut out, [num(x), num(y), num(game.potential(&p)?)]);
        }
    }
    Ok(out)
}

/// Provenance of one solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub scenario_hash: String,
    pub solver: Algorithm,
    pub config: SolverConfig,
    pub seed: u64,
    pub x0: Vec<f64>,
    pub status: String,
    pub iterations: usize,
    pub final_point: Vec<f64>,
    pub final_potential: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub version: String,
}

impl Manifest {
    pub fn new(def: &ScenarioDef, algo: Algorithm, cfg: &SolverConfig, x0: &[f64], traj: &Trajectory) -> Self {
        Self {
            scenario: def.name.clone(),
            scenario_hash: scenario_hash(def),
            solver: algo,
            config: cfg.clone(),
            seed: cfg.seed,
            x0: x0.to_vec(),
            status: traj.status.as_str().to_string(),
            iterations: traj.iterations(),
            final_point: traj.final_point().to_vec(),
            final_potential: traj.last().potential,
            message: traj.message.clone(),
            warnings: def.game.warnings().to_vec(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// Files of one run inside `dir`, each prefixed with `prefix`.
pub fn write_run(dir: &Path, prefix: &str, manifest: &Manifest, traj: &Trajectory, timing: bool) -> Result<Vec<PathBuf>, IoError> {
    let mut written = Vec::new();
    let manifest_path = dir.join(format!("{prefix}manifest.json"));
    write_json(&manifest_path, manifest)?;
    written.push(manifest_path);
    let csv_path = dir.join(format!("{prefix}trajectory.csv"));
    write_atomic(&csv_path, trajectory_csv(traj, timing).as_bytes())?;
    written.push(csv_path);
    if !traj.relay_log.is_empty() {
        let p = dir.join(format!("{prefix}relay.csv"));
        write_atomic(&p, relay_csv(traj).as_bytes())?;
        written.push(p);
    }
    for (k, path) in traj.paths.iter().enumerate() {
        let p = dir.join(format!("{prefix}path{k:03}.csv"));
        write_atomic(&p, trajectory_csv(path, timing).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::BUILTIN_NAMES;
    use crate::solvers::solve_imm;

    #[test]
    fn builtins_round_trip_byte_identically() {
        for name in BUILTIN_NAMES {
            let def = builtin(name).unwrap();
            let text = canonical_json(&def);
            let back = parse_scenario(&text, name).unwrap();
            assert_eq!(back, def, "{name}");
            assert_eq!(canonical_json(&back), text, "{name}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = builtin("team_nonsmooth").unwrap();
        let mut b = a.clone();
        b.description.push('!');
        assert_eq!(scenario_hash(&a), scenario_hash(&a.clone()));
        assert_ne!(scenario_hash(&a), scenario_hash(&b));
        assert_eq!(scenario_hash(&a).len(), 64);
    }

    fn team_text() -> String {
        canonical_json(&builtin("team_nonsmooth").unwrap())
    }

    #[test]
    fn bad_probabilities_name_the_field() {
        let mut v: serde_json::Value = serde_json::from_str(&team_text()).unwrap();
        v["distribution"] = serde_json::json!({"support": [1.0, 2.0], "probs": [0.5, 0.4]});
        let err = parse_scenario(&v.to_string(), "t.json").unwrap_err();
        assert_eq!(err.field(), Some("distribution.probs"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_position() {
        let text = team_text().replacen("\"lambda\"", "\"lambda_typo\": 1,\n  \"lambda\"", 1);
        let err = parse_scenario(&text, "t.json").unwrap_err();
        match err {
            IoError::Parse { line, ref message, .. } => {
                assert!(line > 1);
                assert!(message.contains("lambda_typo"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn nested_type_errors_carry_a_path() {
        let mut v: serde_json::Value = serde_json::from_str(&team_text()).unwrap();
        v["agents"][1]["weight"] = serde_json::json!("heavy");
        let err = parse_scenario(&v.to_string(), "t.json").unwrap_err();
        assert_eq!(err.field(), Some("agents[1].weight"));
    }

    #[test]
    fn wrong_schema_version() {
        let text = team_text().replacen("\"schema_version\": 1", "\"schema_version\": 7", 1);
        assert!(matches!(parse_scenario(&text, "t"), Err(IoError::SchemaVersion { found: 7, .. })));
    }

    #[test]
    fn infeasible_initial_state() {
        let mut v: serde_json::Value = serde_json::from_str(&team_text()).unwrap();
        v["initial_states"] = serde_json::json!([[500.0, 0.0]]);
        let err = parse_scenario(&v.to_string(), "t").unwrap_err();
        assert_eq!(err.field(), Some("initial_states[0]"));
    }

    #[test]
    fn trajectory_csv_has_one_row_per_step() {
        let def = builtin("team_nonsmooth").unwrap();
        let t = solve_imm(&def.game, &[2.0, 4.0], &def.config(Algorithm::Imm)).unwrap();
        let csv = trajectory_csv(&t, false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "iter,x1,x2,potential,displacement");
        assert_eq!(lines.len(), t.steps.len() + 1);
        // 17 significant digits parse back exactly
        let first: Vec<f64> = lines[2].split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert_eq!(first[0], t.steps[1].x[0]);
        assert_eq!(first[2], t.steps[1].potential);
        assert!(trajectory_csv(&t, true).lines().next().unwrap().ends_with(",wall_ms"));
    }

    #[test]
    fn joined_table_leaves_gaps() {
        let csv = joined_csv(&[("a".into(), vec![1.0, 2.0]), ("b".into(), vec![3.0])]);
        assert_eq!(csv.lines().nth(2).unwrap(), format!("1,{},", num(2.0)));
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn contour_grid_size() {
        let def = builtin("team_nonsmooth").unwrap();
        let csv = contour_csv(&def.game, &[0.0, 0.0], 0, 1, 5).unwrap();
        assert_eq!(csv.lines().count(), 26);
    }
}
