//! Built-in experiments and the incentive-steering loop.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certify::DEFAULT_BUDGET;
use crate::game::{
    AgentSpec, Block, CollectiveTerm, CollectiveUtility, GameError, GameParts, GameSpec, IndividualTerm, Regularizer,
    RegularizerTerm,
};
use crate::pt::{OutcomeDistribution, RewardFunction, ValueFunction, WeightingFunction};
use crate::solvers::{
    imm_step, maximize_1d, solve_gradient, solve_ibr, solve_imm, solve_immd, sup_distance, SolverConfig, SolverError,
    StepSchedule, Trajectory,
};

/// Learning dynamics selectable from the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Projected gradient ascent on each agent's utility.
    Ga,
    /// Gradient ascent with Nesterov momentum.
    Aga,
    /// Subgradient ascent with random kink multipliers, optionally path-averaged.
    Sga,
    Ibr,
    Imm,
    /// Distributed IMM relayed through a coordinator.
    Immd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Ga,
        Algorithm::Aga,
        Algorithm::Sga,
        Algorithm::Ibr,
        Algorithm::Imm,
        Algorithm::Immd,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Ga => "ga",
            Algorithm::Aga => "aga",
            Algorithm::Sga => "sga",
            Algorithm::Ibr => "ibr",
            Algorithm::Imm => "imm",
            Algorithm::Immd => "immd",
        }
    }

    /// Run from `x0`. `ga` and `aga` force the momentum flag; `sga` honours `cfg`.
    pub fn solve(self, game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
        match self {
            Algorithm::Ga if game.space().has_lattice() => Err(SolverError::Unsupported(
                "plain gradient ascent is not defined on lattice strategy spaces; use sga".to_string(),
            )),
            Algorithm::Ga => solve_gradient(game, x0, &SolverConfig { accelerate: false, ..cfg.clone() }),
            Algorithm::Aga => solve_gradient(game, x0, &SolverConfig { accelerate: true, ..cfg.clone() }),
            Algorithm::Sga => solve_gradient(game, x0, cfg),
            Algorithm::Ibr => solve_ibr(game, x0, cfg),
            Algorithm::Imm => solve_imm(game, x0, cfg),
            Algorithm::Immd => solve_immd(game, x0, cfg),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| format!("unknown algorithm `{s}` (expected one of ga, aga, sga, ibr, imm, immd)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificationSettings {
    /// Grid points per continuous coordinate.
    pub resolution: usize,
    /// Cap on grid evaluations.
    pub budget: u64,
}

impl Default for CertificationSettings {
    fn default() -> Self {
        Self {
            resolution: 201,
            budget: DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferencePoint {
    pub label: String,
    pub point: Vec<f64>,
}

/// Known answers shipped with a scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcceptanceMeta {
    pub reference_points: Vec<ReferencePoint>,
    /// Maximum of the potential, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub potential_max: Option<f64>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioDef {
    pub name: String,
    pub description: String,
    pub game: GameSpec,
    pub initial_states: Vec<Vec<f64>>,
    pub solver_defaults: BTreeMap<Algorithm, SolverConfig>,
    pub certification: CertificationSettings,
    pub acceptance: AcceptanceMeta,
}

impl ScenarioDef {
    /// Default solver configuration for `algo`.
    pub fn config(&self, algo: Algorithm) -> SolverConfig {
        self.solver_defaults.get(&algo).cloned().unwrap_or_default()
    }

    pub fn default_start(&self) -> Vec<f64> {
        self.initial_states
            .first()
            .cloned()
            .unwrap_or_else(|| (0..self.game.dim()).map(|c| self.game.space().lo(c)).collect())
    }

    pub fn reference(&self, label: &str) -> Option<&[f64]> {
        self.acceptance
            .reference_points
            .iter()
            .find(|r| r.label == label)
            .map(|r| r.point.as_slice())
    }
}

pub const BUILTIN_NAMES: [&str; 5] = [
    "smooth_two_player",
    "team_nonsmooth",
    "team_nonsmooth_unregularized",
    "energy_community",
    "grid_rendezvous",
];

pub fn builtin(name: &str) -> Option<ScenarioDef> {
    match name {
        "smooth_two_player" => Some(build_smooth_two_player(1.0, 2.0).expect("finite thresholds")),
        "team_nonsmooth" => Some(build_team_nonsmooth()),
        "team_nonsmooth_unregularized" => Some(build_team_nonsmooth_unregularized()),
        "energy_community" => Some(build_energy_community()),
        "grid_rendezvous" => Some(build_grid_rendezvous(C2Exponent::Negated)),
        _ => None,
    }
}

fn constant_step(eta: f64) -> StepSchedule {
    StepSchedule::Constant { eta }
}

/// Two players sharing `10 − (x₁+x₂−2)²` with `λ = 0.1`; thresholds `d₁`, `d₂`
/// enter the rewards `x_i·ξ − d_i`.
pub fn build_smooth_two_player(d1: f64, d2: f64) -> Result<ScenarioDef, GameError> {
    let game = GameSpec::new(GameParts {
        agents: vec![
            AgentSpec::new(1.0, Block::interval(-10.0, 10.0)).with_term(IndividualTerm::reward(
                ValueFunction::LogGainLinearLoss,
                RewardFunction::ScaleShift { d: d1 },
                0,
            )),
            AgentSpec::new(1.0, Block::interval(-10.0, 10.0)).with_term(IndividualTerm::reward(
                ValueFunction::Identity,
                RewardFunction::ScaleShift { d: d2 },
                0,
            )),
        ],
        collective: CollectiveUtility::new(vec![
            CollectiveTerm::Constant { c: 10.0 },
            CollectiveTerm::NegQuadraticToTarget {
                coef: 1.0,
                target: 2.0,
                coords: vec![0, 1],
            },
        ]),
        regularizer: Regularizer::squared_norm(2),
        lambda: 0.1,
        distribution: OutcomeDistribution::new(vec![2.0, 10.0], vec![0.8, 0.2]).expect("valid distribution"),
        weighting: WeightingFunction::Identity,
    })?;
    let base = SolverConfig {
        max_iter: 2000,
        tol: 1e-10,
        inner_tol: 1e-12,
        ..SolverConfig::default()
    };
    let solver_defaults = BTreeMap::from([
        (Algorithm::Ga, SolverConfig { step: constant_step(0.1), ..base.clone() }),
        (Algorithm::Aga, SolverConfig { step: constant_step(0.1), accelerate: true, ..base.clone() }),
        (Algorithm::Ibr, base.clone()),
        (Algorithm::Imm, SolverConfig { prox_weight: 0.1, ..base.clone() }),
        (Algorithm::Immd, SolverConfig { prox_weight: 0.1, ..base }),
    ]);
    Ok(ScenarioDef {
        name: "smooth_two_player".to_string(),
        description: format!(
            "Smooth two-player game: J = 10 - (x1 + x2 - 2)^2 - 0.1 (x1^2 + x2^2) plus PT rewards x_i xi - d_i with d = ({d1}, {d2})"
        ),
        game,
        initial_states: vec![vec![-8.0, 9.0]],
        solver_defaults,
        certification: CertificationSettings {
            resolution: 401,
            budget: DEFAULT_BUDGET,
        },
        acceptance: AcceptanceMeta {
            notes: vec!["unique Nash equilibrium, equal to the potential maximizer".to_string()],
            ..AcceptanceMeta::default()
        },
    })
}

fn team_game(lambda: f64) -> GameSpec {
    GameSpec::new(GameParts {
        agents: vec![
            AgentSpec::new(1.0, Block::interval(-100.0, 100.0)),
            AgentSpec::new(1.0, Block::interval(-100.0, 100.0)),
        ],
        collective: CollectiveUtility::new(vec![
            CollectiveTerm::Constant { c: 5.0 },
            CollectiveTerm::NegAbsSum { coords: vec![0, 1] },
        ]),
        regularizer: Regularizer::squared_norm(2),
        lambda,
        distribution: OutcomeDistribution::degenerate(1.0),
        weighting: WeightingFunction::Identity,
    })
    .expect("team game is valid")
}

fn team_defaults() -> BTreeMap<Algorithm, SolverConfig> {
    let base = SolverConfig {
        max_iter: 500,
        tol: 1e-9,
        ..SolverConfig::default()
    };
    BTreeMap::from([
        (Algorithm::Ga, SolverConfig { step: constant_step(0.1), max_iter: 2000, ..base.clone() }),
        (Algorithm::Aga, SolverConfig { step: constant_step(0.1), max_iter: 2000, accelerate: true, ..base.clone() }),
        (
            Algorithm::Sga,
            SolverConfig {
                step: constant_step(0.1),
                max_iter: 2000,
                averaging: 100,
                ..base.clone()
            },
        ),
        (Algorithm::Ibr, SolverConfig { ibr_start_agent: 1, ..base.clone() }),
        (Algorithm::Imm, SolverConfig { prox_weight: 0.1, ..base.clone() }),
        (Algorithm::Immd, SolverConfig { prox_weight: 0.1, ..base }),
    ])
}

const TEAM_STARTS: [[f64; 2]; 5] = [[2.0, 4.0], [-4.0, -4.0], [-5.0, 4.0], [10.0, 5.0], [10.0, -1.0]];

/// Two-agent team game `5 − |x₁+x₂| − 0.1(x₁²+x₂²)` on `[−100,100]²`.
pub fn build_team_nonsmooth() -> ScenarioDef {
    ScenarioDef {
        name: "team_nonsmooth".to_string(),
        description: "Nonsmooth team game: J = 5 - |x1 + x2| - 0.1 (x1^2 + x2^2)".to_string(),
        game: team_game(0.1),
        initial_states: TEAM_STARTS.iter().map(|p| p.to_vec()).collect(),
        solver_defaults: team_defaults(),
        certification: CertificationSettings::default(),
        acceptance: AcceptanceMeta {
            reference_points: vec![
                ReferencePoint {
                    label: "potential_maximizer".to_string(),
                    point: vec![0.0, 0.0],
                },
                ReferencePoint {
                    label: "ibr_trap".to_string(),
                    point: vec![4.0, -4.0],
                },
            ],
            potential_max: Some(5.0),
            notes: vec![
                "(4, -4) is a Nash equilibrium that does not maximize the potential".to_string(),
                "IBR from (4, y) with agent index 1 moving first stops at (4, -4)".to_string(),
            ],
        },
    }
}

/// The team game without regularization: every point of `x₁ + x₂ = 0` maximizes the potential.
pub fn build_team_nonsmooth_unregularized() -> ScenarioDef {
    let mut def = build_team_nonsmooth();
    def.name = "team_nonsmooth_unregularized".to_string();
    def.description = "Nonsmooth team game without regularization: J = 5 - |x1 + x2|".to_string();
    def.game = team_game(0.0);
    def.acceptance = AcceptanceMeta {
        potential_max: Some(5.0),
        notes: vec!["the potential is maximized on the whole line x1 + x2 = 0".to_string()],
        ..AcceptanceMeta::default()
    };
    def
}

pub const ENERGY_X0: [f64; 2] = [1.0, 1.0];

/// Energy community with target consumption `d = 4`, thresholds `d₁ = 1`, `d₂ = 2`
/// and zero linear incentives. Purchases live in `[0, 20]`.
pub fn build_energy_community() -> ScenarioDef {
    let game = GameSpec::new(GameParts {
        agents: vec![
            AgentSpec::new(1.0, Block::interval(0.0, 20.0)).with_term(IndividualTerm::reward(
                ValueFunction::LogGainLinearLoss,
                RewardFunction::AffineScaled { d: 1.0 },
                0,
            )),
            AgentSpec::new(1.0, Block::interval(0.0, 20.0)).with_term(IndividualTerm::reward(
                ValueFunction::Identity,
                RewardFunction::AffineScaled { d: 2.0 },
                0,
            )),
        ],
        collective: CollectiveUtility::new(vec![CollectiveTerm::NegSqDeviation {
            d: 4.0,
            coords: vec![0, 1],
        }]),
        regularizer: Regularizer::new(vec![RegularizerTerm::LinearIncentive {
            coefficients: vec![0.0, 0.0],
            coordinate: 0,
        }]),
        lambda: 1.0,
        distribution: OutcomeDistribution::new(vec![1.0, 5.0], vec![0.2, 0.8]).expect("valid distribution"),
        weighting: WeightingFunction::Identity,
    })
    .expect("energy game is valid");
    let base = SolverConfig {
        max_iter: 2000,
        tol: 1e-9,
        prox_weight: 0.1,
        ..SolverConfig::default()
    };
    ScenarioDef {
        name: "energy_community".to_string(),
        description: "Energy community: J = -sum (x_i - 4)^2, rewards (x_i - d_i) xi, linear incentives lambda_i x_i"
            .to_string(),
        game,
        initial_states: vec![ENERGY_X0.to_vec()],
        solver_defaults: BTreeMap::from([
            (Algorithm::Ga, SolverConfig { step: constant_step(0.1), ..base.clone() }),
            (Algorithm::Aga, SolverConfig { step: constant_step(0.1), accelerate: true, ..base.clone() }),
            (Algorithm::Ibr, base.clone()),
            (Algorithm::Imm, base),
        ]),
        certification: CertificationSettings {
            resolution: 401,
            budget: DEFAULT_BUDGET,
        },
        acceptance: AcceptanceMeta {
            notes: vec!["steering targets -4, -4.5 and -5 from (1, 1)".to_string()],
            ..AcceptanceMeta::default()
        },
    }
}

/// Sign of the `y₂` exponent in agent 2's cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum C2Exponent {
    /// `𝔼 exp(k₂·y₂·ξ)`: grows without bound and overflows on the lattice box.
    AsPrinted,
    /// `𝔼 exp(−k₂·y₂·ξ)`, mirroring the `x₂` term.
    Negated,
}

pub const RENDEZVOUS_X0: [f64; 6] = [10.0, 0.0, 0.0, 10.0, 10.0, 10.0];

/// Three agents on the unit lattice of `[0, 30]²` pulled together by `−Σ‖w_i − w_j‖₁`,
/// with `H = Σ‖w_i‖²`, `λ = 1` and perceived position costs.
pub fn build_grid_rendezvous(c2: C2Exponent) -> ScenarioDef {
    let (c1, c2w, c3) = (4.0, 0.4, 1.0);
    let (k1, k2, k3, k4) = (0.1, 0.3, 1.0, 1.0);
    let block = || Block::cube(2, 0.0, 30.0).with_lattice(0.0, 1.0);
    let y2_rate = match c2 {
        C2Exponent::AsPrinted => -k2,
        C2Exponent::Negated => k2,
    };
    // −C₂ = −2c₂ + c₂·𝔼e^{−k₁x₂ξ} + c₂·𝔼e^{±k₂y₂ξ}; likewise for C₃
    let agents = vec![
        AgentSpec::new(1.0, block())
            .with_term(IndividualTerm::cost(ValueFunction::Identity, RewardFunction::Linear { c: c1 }, 0))
            .with_term(IndividualTerm::cost(ValueFunction::Identity, RewardFunction::Linear { c: c1 }, 1)),
        AgentSpec::new(1.0, block())
            .with_offset(-2.0 * c2w)
            .with_term(IndividualTerm::reward(
                ValueFunction::Linear { slope: c2w },
                RewardFunction::ExpOfProduct { k: k1 },
                0,
            ))
            .with_term(IndividualTerm::reward(
                ValueFunction::Linear { slope: c2w },
                RewardFunction::ExpOfProduct { k: y2_rate },
                1,
            )),
        AgentSpec::new(1.0, block())
            .with_offset(-2.0 * c3)
            .with_term(IndividualTerm::reward(
                ValueFunction::Linear { slope: c3 },
                RewardFunction::ExpPlain { k: k3 },
                0,
            ))
            .with_term(IndividualTerm::reward(
                ValueFunction::Linear { slope: c3 },
                RewardFunction::ExpPlain { k: k4 },
                1,
            )),
    ];
    let game = GameSpec::new(GameParts {
        agents,
        collective: CollectiveUtility::new(vec![CollectiveTerm::NegPairwiseL1]),
        regularizer: Regularizer::squared_norm(6),
        lambda: 1.0,
        distribution: OutcomeDistribution::new(vec![1.0, 100.0], vec![0.9, 0.1]).expect("valid distribution"),
        weighting: WeightingFunction::Identity,
    })
    .expect("rendezvous game is valid");
    let name = match c2 {
        C2Exponent::AsPrinted => "grid_rendezvous_printed",
        C2Exponent::Negated => "grid_rendezvous",
    };
    ScenarioDef {
        name: name.to_string(),
        description: format!(
            "Rendezvous of three agents on the unit lattice of [0, 30]^2; agent 2's y-cost exponent is {}",
            match c2 {
                C2Exponent::AsPrinted => "exp(+k2 y2 xi)",
                C2Exponent::Negated => "exp(-k2 y2 xi)",
            }
        ),
        game,
        initial_states: vec![RENDEZVOUS_X0.to_vec()],
        solver_defaults: BTreeMap::from([
            (
                Algorithm::Immd,
                SolverConfig {
                    prox_weight: 0.01,
                    max_iter: 200,
                    tol: 0.5,
                    ..SolverConfig::default()
                },
            ),
            (
                Algorithm::Imm,
                SolverConfig {
                    prox_weight: 0.01,
                    max_iter: 200,
                    tol: 0.5,
                    ..SolverConfig::default()
                },
            ),
            (
                Algorithm::Sga,
                SolverConfig {
                    step: constant_step(0.1),
                    max_iter: 60,
                    tol: 0.5,
                    ..SolverConfig::default()
                },
            ),
        ]),
        certification: CertificationSettings {
            resolution: 31,
            budget: DEFAULT_BUDGET,
        },
        acceptance: AcceptanceMeta {
            notes: vec!["agents should meet within L1 distance 2 under immd and 4 under sga".to_string()],
            ..AcceptanceMeta::default()
        },
    }
}

/// Largest L1 distance between any two agents' 2-D positions.
pub fn max_pairwise_l1(game: &GameSpec, x: &[f64]) -> f64 {
    let space = game.space();
    let mut worst: f64 = 0.0;
    for i in 0..game.num_agents() {
        for j in 0..i {
            let d: f64 = x[space.range(i)]
                .iter()
                .zip(&x[space.range(j)])
                .map(|(a, b)| (a - b).abs())
                .sum();
            worst = worst.max(d);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteeringConfig {
    /// Target value of the collective utility.
    pub tau: f64,
    /// Incentive step size.
    pub eta: f64,
    /// Finite-difference increment of the sensitivity estimate.
    pub delta: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub max_outer: usize,
    /// Stop once `|𝒥(x) − τ|` is at most this.
    pub tolerance: f64,
    /// The state must also move by at most this (∞-norm) in the final step.
    pub settle_tol: f64,
    /// Consecutive steps with every incentive clamped before giving up.
    pub saturation_limit: usize,
    /// Points per incentive axis of the reachability sweep (0 disables it).
    pub range_points: usize,
}

impl Default for SteeringConfig {
    fn default() -> Self {
        Self {
            tau: -4.0,
            eta: 0.05,
            delta: 1e-3,
            lambda_min: -10.0,
            lambda_max: 10.0,
            max_outer: 2000,
            tolerance: 1e-3,
            settle_tol: 1e-6,
            saturation_limit: 50,
            range_points: 9,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteeringError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("steering config {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("steering needs a game whose regularizer is a single linear incentive")]
    NotIncentivized,
}

impl From<GameError> for SteeringError {
    fn from(e: GameError) -> Self {
        SteeringError::Solver(e.into())
    }
}

impl SteeringConfig {
    pub fn validate(&self) -> Result<(), SteeringError> {
        let bad = |field, message: &str| {
            Err(SteeringError::Config {
                field,
                message: message.to_string(),
            })
        };
        if !self.tau.is_finite() {
            return bad("tau", "must be finite");
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad("eta", "must be ≥ 0");
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            return bad("delta", "must be > 0");
        }
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite() && self.lambda_min <= self.lambda_max) {
            return bad("lambda_min", "incentive bounds must be finite with lambda_min ≤ lambda_max");
        }
        if !(self.settle_tol.is_finite() && self.settle_tol > 0.0) {
            return bad("settle_tol", "must be > 0");
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return bad("tolerance", "must be > 0");
        }
        if self.max_outer == 0 {
            return bad("max_outer", "must be ≥ 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringStep {
    pub k: usize,
    pub lambdas: Vec<f64>,
    pub x: Vec<f64>,
    pub collective: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteeringStatus {
    Reached,
    MaxIter,
    Unreachable,
}

impl SteeringStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SteeringStatus::Reached => "reached",
            SteeringStatus::MaxIter => "max_iter",
            SteeringStatus::Unreachable => "target unreachable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringTrace {
    pub tau: f64,
    pub steps: Vec<SteeringStep>,
    pub status: SteeringStatus,
    /// Equilibrium collective utilities attainable within the incentive bounds, when swept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reachable: Option<(f64, f64)>,
}

impl SteeringTrace {
    pub fn last(&self) -> &SteeringStep {
        self.steps.last().expect("trace holds the initial state")
    }
}

fn incentive_count(game: &GameSpec) -> Result<usize, SteeringError> {
    match game.regularizer().terms.as_slice() {
        [RegularizerTerm::LinearIncentive { coefficients, .. }] => Ok(coefficients.len()),
        _ => Err(SteeringError::NotIncentivized),
    }
}

fn equilibrium_collective(game: &GameSpec, lambdas: &[f64], x0: &[f64], cfg: &SolverConfig) -> Result<f64, SolverError> {
    let g = game.with_incentives(lambdas)?;
    let t = solve_imm(&g, x0, cfg)?;
    Ok(g.collective(t.final_point()))
}

/// Equilibrium collective utilities on a grid over the incentive box.
fn incentive_sweep(game: &GameSpec, x0: &[f64], steer: &SteeringConfig, cfg: &SolverConfig) -> Result<Vec<(f64, Vec<f64>)>, SolverError> {
    let n = match game.regularizer().terms.as_slice() {
        [RegularizerTerm::LinearIncentive { coefficients, .. }] => coefficients.len(),
        _ => 0,
    };
    let m = steer.range_points.max(2);
    let cell = (steer.lambda_max - steer.lambda_min) / (m - 1) as f64;
    let axis: Vec<f64> = (0..m).map(|k| steer.lambda_min + cell * k as f64).collect();
    (0..m.pow(n as u32))
        .map(|idx| {
            let mut rest = idx;
            let lambdas: Vec<f64> = (0..n)
                .map(|_| {
                    let v = axis[rest % m];
                    rest /= m;
                    v
                })
                .collect();
            Ok((equilibrium_collective(game, &lambdas, x0, cfg)?, lambdas))
        })
        .collect()
}

/// Cyclic 1-D refinement of `sign·𝒥(equilibrium(λ))` within one sweep cell of `start`.
fn refine_extreme(
    game: &GameSpec,
    x0: &[f64],
    steer: &SteeringConfig,
    cfg: &SolverConfig,
    start: (f64, Vec<f64>),
    sign: f64,
) -> Result<f64, SolverError> {
    let cell = (steer.lambda_max - steer.lambda_min) / (steer.range_points.max(2) - 1) as f64;
    let (mut value, mut lambdas) = (sign * start.0, start.1);
    for _ in 0..2 {
        for i in 0..lambdas.len() {
            let lo = (lambdas[i] - cell).max(steer.lambda_min);
            let hi = (lambdas[i] + cell).min(steer.lambda_max);
            let mut probe = lambdas.clone();
            let r = maximize_1d(
                |l| {
                    probe[i] = l;
                    equilibrium_collective(game, &probe, x0, cfg).map(|v| sign * v)
                },
                lo,
                hi,
                Some(lambdas[i]),
                &[],
            )?;
            if r.value > value {
                value = r.value;
                lambdas[i] = r.arg;
            }
        }
    }
    Ok(sign * value)
}

/// Whether `tau` lies within the attainable range of equilibrium collective utilities.
/// The sweep hull settles most targets; refinement runs only for targets outside it.
fn check_reachable(
    game: &GameSpec,
    x0: &[f64],
    steer: &SteeringConfig,
    cfg: &SolverConfig,
) -> Result<(bool, (f64, f64)), SolverError> {
    let sweep = incentive_sweep(game, x0, steer, cfg)?;
    let pick = |sign: f64| {
        sweep
            .iter()
            .max_by(|a, b| (sign * a.0).total_cmp(&(sign * b.0)))
            .cloned()
            .expect("sweep is nonempty")
    };
    let (mut lo, mut hi) = (pick(-1.0).0, pick(1.0).0);
    if steer.tau > hi + steer.tolerance {
        hi = refine_extreme(game, x0, steer, cfg, pick(1.0), 1.0)?;
    }
    if steer.tau < lo - steer.tolerance {
        lo = refine_extreme(game, x0, steer, cfg, pick(-1.0), -1.0)?;
    }
    let ok = steer.tau <= hi + steer.tolerance && steer.tau >= lo - steer.tolerance;
    Ok((ok, (lo, hi)))
}

/// Drive the collective utility to `steer.tau` by adapting linear incentives
/// while the agents take IMM steps.
///
/// Each outer iteration takes one IMM step under the current incentives, estimates
/// `∂𝒥/∂λ_i` by a forward difference through one IMM step from the same state, and
/// moves `λ_i` along `−2(𝒥 − τ)·∂𝒥/∂λ_i`, clamped to the bounds.
pub fn steer_collective(
    scenario: &ScenarioDef,
    x0: &[f64],
    steer: &SteeringConfig,
    cfg: &SolverConfig,
) -> Result<SteeringTrace, SteeringError> {
    steer.validate()?;
    cfg.validate()?;
    let base = &scenario.game;
    let n = incentive_count(base)?;
    base.space().check_feasible(x0)?;

    let mut lambdas = match base.regularizer().terms.as_slice() {
        [RegularizerTerm::LinearIncentive { coefficients, .. }] => {
            coefficients.iter().map(|l| l.clamp(steer.lambda_min, steer.lambda_max)).collect::<Vec<_>>()
        }
        _ => unreachable!("checked by incentive_count"),
    };
    let record = |k: usize, lambdas: &[f64], x: &[f64]| {
        let collective = base.collective(x);
        SteeringStep {
            k,
            lambdas: lambdas.to_vec(),
            x: x.to_vec(),
            collective,
            error: (collective - steer.tau).abs(),
        }
    };
    let mut steps = vec![record(0, &lambdas, x0)];
    let mut reachable = None;
    if steer.range_points > 0 {
        let (ok, range) = check_reachable(base, x0, steer, cfg)?;
        reachable = Some(range);
        if !ok {
            return Ok(SteeringTrace {
                tau: steer.tau,
                steps,
                status: SteeringStatus::Unreachable,
                reachable,
            });
        }
    }
    let mut x = x0.to_vec();
    let mut saturated = 0;
    let mut status = SteeringStatus::MaxIter;
    for k in 1..=steer.max_outer {
        let game = base.with_incentives(&lambdas)?;
        let next = imm_step(&game, &x, cfg)?;
        let j_next = base.collective(&next);
        let mut sens = vec![0.0; n];
        for (i, s) in sens.iter_mut().enumerate() {
            let mut bumped = lambdas.clone();
            bumped[i] += steer.delta;
            let probe = imm_step(&base.with_incentives(&bumped)?, &x, cfg)?;
            *s = (base.collective(&probe) - j_next) / steer.delta;
        }
        let residual = 2.0 * (j_next - steer.tau);
        let mut clamped = 0;
        for (l, s) in lambdas.iter_mut().zip(&sens) {
            let raw = *l - steer.eta * residual * s;
            *l = raw.clamp(steer.lambda_min, steer.lambda_max);
            if raw != *l {
                clamped += 1;
            }
        }
        let settled = sup_distance(&x, &next);
        x = next;
        steps.push(record(k, &lambdas, &x));
        if (j_next - steer.tau).abs() <= steer.tolerance && settled <= steer.settle_tol {
            status = SteeringStatus::Reached;
            break;
        }
        saturated = if clamped == n { saturated + 1 } else { 0 };
        if saturated >= steer.saturation_limit {
            status = SteeringStatus::Unreachable;
            break;
        }
    }
    Ok(SteeringTrace {
        tau: steer.tau,
        steps,
        status,
        reachable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certify::br_gap;
    use crate::game::verify_weighted_potential;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_builtin_is_a_weighted_potential_game() {
        for name in BUILTIN_NAMES {
            let def = builtin(name).unwrap();
            assert_eq!(def.name, name);
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let r = verify_weighted_potential(&def.game, 1000, &mut rng).unwrap();
            assert!(r <= 1e-9, "{name}: {r}");
            for x0 in &def.initial_states {
                def.game.space().check_feasible(x0).unwrap();
            }
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn builders_are_deterministic() {
        for name in BUILTIN_NAMES {
            assert_eq!(builtin(name), builtin(name));
        }
    }

    #[test]
    fn smooth_game_values() {
        let def = build_smooth_two_player(0.0, 0.0).unwrap();
        let g = &def.game;
        // 10 − (0 − 2)² and an identity reward of 0·ξ − 0
        assert!((g.utility(1, &[0.0, 0.0]).unwrap() - 6.0).abs() < 1e-12);
        let unreg = g.with_lambda(0.0).unwrap();
        for x in [[1.0, 2.0], [-3.0, 0.5]] {
            let diff = unreg.potential(&x).unwrap() - g.potential(&x).unwrap();
            assert!((diff - 0.1 * (x[0] * x[0] + x[1] * x[1])).abs() < 1e-12);
        }
    }

    #[test]
    fn team_game_values() {
        let def = build_team_nonsmooth();
        assert_eq!(def.game.potential(&[0.0, 0.0]).unwrap(), 5.0);
        assert!((def.game.potential(&[4.0, -4.0]).unwrap() - 1.8).abs() < 1e-12);
        let gaps = br_gap(&def.game, &[4.0, -4.0], 201).unwrap();
        assert!(gaps.iter().all(|g| *g <= 1e-6));
        assert_eq!(def.reference("ibr_trap"), Some(&[4.0, -4.0][..]));
    }

    #[test]
    fn energy_values() {
        let g = build_energy_community().game;
        assert_eq!(g.collective(&[4.0, 4.0]), 0.0);
        assert_eq!(g.collective(&[1.0, 1.0]), -18.0);
        let grad = g.utility_gradient_with(1, &[4.0, 4.0], &[]).unwrap();
        assert!((grad[0] - 4.2).abs() < 1e-12);
    }

    #[test]
    fn rendezvous_values() {
        let def = build_grid_rendezvous(C2Exponent::Negated);
        let g = &def.game;
        assert_eq!(g.collective(&[0.0; 6]), 0.0);
        assert_eq!(g.collective(&RENDEZVOUS_X0), -40.0);
        // agent 1 pays c₁(x + y)
        let c1 = -g.individual(0, &RENDEZVOUS_X0).unwrap();
        assert!((c1 - 40.0).abs() < 1e-12);
        assert_eq!(max_pairwise_l1(g, &RENDEZVOUS_X0), 20.0);
    }

    #[test]
    fn printed_rendezvous_cost_is_flagged() {
        let def = build_grid_rendezvous(C2Exponent::AsPrinted);
        assert!(!def.game.warnings().is_empty());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.as_str().parse::<Algorithm>().unwrap(), a);
        }
        assert!("bogus".parse::<Algorithm>().is_err());
        let def = build_grid_rendezvous(C2Exponent::Negated);
        assert!(matches!(
            Algorithm::Ga.solve(&def.game, &RENDEZVOUS_X0, &SolverConfig::default()),
            Err(SolverError::Unsupported(_))
        ));
    }

    fn unincentivized_equilibrium() -> (Vec<f64>, f64) {
        let def = build_energy_community();
        let t = solve_imm(&def.game, &ENERGY_X0, &def.config(Algorithm::Imm)).unwrap();
        let x = t.final_point().to_vec();
        let j = def.game.collective(&x);
        (x, j)
    }

    #[test]
    fn steering_at_the_free_equilibrium_keeps_zero_incentives() {
        let def = build_energy_community();
        let (x, j) = unincentivized_equilibrium();
        let steer = SteeringConfig {
            tau: j,
            range_points: 0,
            ..SteeringConfig::default()
        };
        let t = steer_collective(&def, &x, &steer, &def.config(Algorithm::Imm)).unwrap();
        assert_eq!(t.status, SteeringStatus::Reached);
        assert!(t.last().lambdas.iter().all(|l| l.abs() < 1e-6));
    }

    #[test]
    fn zero_step_keeps_incentives_fixed() {
        let def = build_energy_community();
        let (_, j) = unincentivized_equilibrium();
        let steer = SteeringConfig {
            tau: -100.0,
            eta: 0.0,
            max_outer: 300,
            range_points: 0,
            ..SteeringConfig::default()
        };
        let t = steer_collective(&def, &ENERGY_X0, &steer, &def.config(Algorithm::Imm)).unwrap();
        assert!(t.steps.iter().all(|s| s.lambdas == vec![0.0, 0.0]));
        assert!((t.last().collective - j).abs() < 1e-6);
    }

    #[test]
    fn steering_reaches_targets() {
        let def = build_energy_community();
        for tau in [-4.0, -4.5, -5.0] {
            let steer = SteeringConfig {
                tau,
                ..SteeringConfig::default()
            };
            let t = steer_collective(&def, &ENERGY_X0, &steer, &def.config(Algorithm::Imm)).unwrap();
            assert_eq!(t.status, SteeringStatus::Reached, "tau {tau}");
            assert!(t.last().error <= 0.05);
            assert!(t.steps.len() <= 2001);
        }
    }

    #[test]
    fn positive_target_is_unreachable() {
        let def = build_energy_community();
        let steer = SteeringConfig {
            tau: 1.0,
            ..SteeringConfig::default()
        };
        let t = steer_collective(&def, &ENERGY_X0, &steer, &def.config(Algorithm::Imm)).unwrap();
        assert_eq!(t.status, SteeringStatus::Unreachable);
    }

    #[test]
    fn steering_requires_incentives() {
        let def = build_team_nonsmooth();
        let err = steer_collective(&def, &[0.0, 0.0], &SteeringConfig::default(), &SolverConfig::default());
        assert!(matches!(err, Err(SteeringError::NotIncentivized)));
    }
}
