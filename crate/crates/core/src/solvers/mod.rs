//! Learning dynamics: projected (sub)gradient ascent, iterative best response and
//! proximal minorize-maximize, all producing a [`Trajectory`].

mod gradient;
mod ibr;
mod imm;
mod maximize;

pub use gradient::{solve_gradient, solve_potential_ascent};
pub use ibr::{argmax_block, solve_ibr, BlockObjective};
pub use imm::{imm_step, solve_imm, solve_immd, Coordinator, RelayEvent};
pub use maximize::{maximize_1d, OneDim};
pub(crate) use maximize::{maximize_box, BoxProblem, MaximizeError, Target};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameError, GameSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("solver config {field}: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Unsupported(String),
}

fn config_error(field: &str, message: &str) -> SolverError {
    SolverError::Config {
        field: field.to_string(),
        message: message.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { eta: f64 },
    /// `eta0 / √k`
    Diminishing { eta0: f64 },
}

impl StepSchedule {
    /// Step size at iteration `k ≥ 1`.
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSchedule::Constant { eta } => *eta,
            StepSchedule::Diminishing { eta0 } => eta0 / (k.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Stop once the ∞-norm displacement of one iteration is at most this.
    pub tol: f64,
    pub step: StepSchedule,
    /// Nesterov momentum for gradient ascent.
    pub accelerate: bool,
    /// Proximal weight `λ_prox` of the MM surrogate.
    pub prox_weight: f64,
    pub inner_tol: f64,
    pub max_inner_iter: usize,
    /// Number of seeded sample paths averaged by stochastic gradient ascent.
    pub averaging: usize,
    pub seed: u64,
    /// Agent that moves first in every best-response sweep.
    pub ibr_start_agent: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            tol: 1e-8,
            step: StepSchedule::Constant { eta: 0.1 },
            accelerate: false,
            prox_weight: 0.1,
            inner_tol: 1e-10,
            max_inner_iter: 2000,
            averaging: 1,
            seed: 0,
            ibr_start_agent: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.max_iter == 0 {
            return Err(config_error("max_iter", "must be ≥ 1"));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(config_error("tol", "must be > 0"));
        }
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) {
            return Err(config_error("inner_tol", "must be > 0"));
        }
        if self.max_inner_iter == 0 {
            return Err(config_error("max_inner_iter", "must be ≥ 1"));
        }
        if self.averaging == 0 {
            return Err(config_error("averaging", "must be ≥ 1"));
        }
        let eta = match self.step {
            StepSchedule::Constant { eta } => eta,
            StepSchedule::Diminishing { eta0 } => eta0,
        };
        if !(eta.is_finite() && eta > 0.0) {
            return Err(config_error("step", "step size must be > 0"));
        }
        Ok(())
    }

    fn validate_prox(&self) -> Result<(), SolverError> {
        if !(self.prox_weight.is_finite() && self.prox_weight > 0.0) {
            return Err(config_error("prox_weight", "λ_prox must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    Error,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub iter: usize,
    pub x: Vec<f64>,
    pub potential: f64,
    pub utilities: Vec<f64>,
    /// ∞-norm distance to the previous iterate (0 for the initial point).
    pub displacement: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Iterate at which evaluation failed, when `status` is `Error`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_point: Option<Vec<f64>>,
    /// Individual sample paths behind an averaged run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<Trajectory>,
    /// Coordinator relay trace of a distributed run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relay_log: Vec<RelayEvent>,
}

impl Trajectory {
    pub fn last(&self) -> &Step {
        self.steps.last().expect("trajectory holds at least the initial point")
    }

    pub fn final_point(&self) -> &[f64] {
        &self.last().x
    }

    /// Number of iterations performed (the initial point is iteration 0).
    pub fn iterations(&self) -> usize {
        self.last().iter
    }

    pub fn potentials(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.potential).collect()
    }

    /// Smallest `Φ(x(n+1)) − Φ(x(n))` along the trajectory.
    pub fn worst_potential_drop(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| w[1].potential - w[0].potential)
            .fold(0.0, f64::min)
    }
}

/// Accumulates trajectory steps with timings.
struct Recorder<'a> {
    game: &'a GameSpec,
    steps: Vec<Step>,
    clock: std::time::Instant,
}

impl<'a> Recorder<'a> {
    fn new(game: &'a GameSpec, x0: &[f64]) -> Result<Self, GameError> {
        let mut rec = Self {
            game,
            steps: Vec::new(),
            clock: std::time::Instant::now(),
        };
        rec.push(x0.to_vec(), 0.0)?;
        Ok(rec)
    }

    fn push(&mut self, x: Vec<f64>, displacement: f64) -> Result<(), GameError> {
        let potential = self.game.potential(&x)?;
        let utilities = self.game.utilities(&x)?;
        let wall_ms = self.clock.elapsed().as_secs_f64() * 1e3;
        self.clock = std::time::Instant::now();
        self.steps.push(Step {
            iter: self.steps.len(),
            x,
            potential,
            utilities,
            displacement,
            wall_ms,
        });
        Ok(())
    }

    fn current(&self) -> &[f64] {
        &self.steps.last().expect("recorder starts with x0").x
    }

    fn finish(self, status: Status) -> Trajectory {
        Trajectory {
            steps: self.steps,
            status,
            message: None,
            error_point: None,
            paths: Vec::new(),
            relay_log: Vec::new(),
        }
    }

    fn fail(self, err: impl std::fmt::Display, point: Vec<f64>) -> Trajectory {
        let mut t = self.finish(Status::Error);
        t.message = Some(err.to_string());
        t.error_point = Some(point);
        t
    }
}

pub(crate) fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

fn check_start(game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<(), SolverError> {
    cfg.validate()?;
    game.space().check_feasible(x0)?;
    Ok(())
}
