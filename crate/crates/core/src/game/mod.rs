//! The regularized game: agents, shared collective utility, regularizer and
//! prospect-theoretic individual rewards.
//!
//! Agent `i` receives
//!
//! ```text
//! J_i(x) = a_i·(𝒥(x) − λ·H(x)) + Σ_terms sign·𝔼_q̃[V ∘ ℛ(x_{i,c}, ξ)] + offset_i
//! ```
//!
//! and the game admits the weighted potential
//!
//! ```text
//! Φ(x) = 𝒥(x) − λ·H(x) + Σ_j (1/a_j)·(individual part of J_j)
//! ```
//!
//! so that every unilateral deviation satisfies `ΔJ_i = a_i·ΔΦ`.

mod space;
mod terms;

pub use space::{Block, JointStrategy, Lattice, StrategySpace, FEASIBILITY_TOL};
pub use terms::{CollectiveTerm, CollectiveUtility, Kink, Regularizer, RegularizerTerm};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pt::{self, OutcomeDistribution, PtError, RewardFunction, ValueFunction, WeightingFunction};

/// Midpoint-concavity slack used by the sampled concavity check.
pub const CONCAVITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("agent index {index} out of range ({agents} agents)")]
    AgentIndex { index: usize, agents: usize },
    #[error("dimension mismatch: expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("coordinate {coordinate} = {value} lies outside the strategy space")]
    Infeasible { coordinate: usize, value: f64 },
    #[error("agent {agent}, term {term}: {source}")]
    Evaluation {
        agent: usize,
        term: usize,
        #[source]
        source: PtError,
    },
}

impl GameError {
    pub(crate) fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        GameError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    fn from_pt(err: PtError, parent: &str) -> Self {
        match err.within(parent) {
            PtError::Invalid { field, message } => GameError::Invalid { path: field, message },
            other => GameError::invalid(parent, other.to_string()),
        }
    }
}

/// One `sign·𝔼_q̃[V ∘ ℛ]` summand of an agent's individual reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndividualTerm {
    /// `+1` for a reward, `−1` for a cost.
    pub sign: i8,
    pub value_fn: ValueFunction,
    pub reward_fn: RewardFunction,
    /// Coordinate inside the agent's own block.
    #[serde(default)]
    pub coordinate: usize,
}

impl IndividualTerm {
    pub fn reward(value_fn: ValueFunction, reward_fn: RewardFunction, coordinate: usize) -> Self {
        Self {
            sign: 1,
            value_fn,
            reward_fn,
            coordinate,
        }
    }

    pub fn cost(value_fn: ValueFunction, reward_fn: RewardFunction, coordinate: usize) -> Self {
        Self {
            sign: -1,
            value_fn,
            reward_fn,
            coordinate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub weight: f64,
    pub block: Block,
    /// Constant added to the individual reward.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub offset: f64,
    #[serde(default)]
    pub individual_terms: Vec<IndividualTerm>,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

impl AgentSpec {
    pub fn new(weight: f64, block: Block) -> Self {
        Self {
            weight,
            block,
            offset: 0.0,
            individual_terms: Vec::new(),
        }
    }

    pub fn with_term(mut self, term: IndividualTerm) -> Self {
        self.individual_terms.push(term);
        self
    }

    pub fn with_offset(mut self, offset: f64) -> Self {
        self.offset = offset;
        self
    }
}

/// Everything needed to assemble a [`GameSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct GameParts {
    pub agents: Vec<AgentSpec>,
    pub collective: CollectiveUtility,
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub distribution: OutcomeDistribution,
    pub weighting: WeightingFunction,
}

/// A validated game. Immutable; evaluation methods are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    parts: GameParts,
    space: StrategySpace,
    kinks: Vec<Kink>,
    warnings: Vec<String>,
}

impl GameSpec {
    pub fn new(parts: GameParts) -> Result<Self, GameError> {
        let space = StrategySpace::new(parts.agents.iter().map(|a| a.block.clone()).collect())?;
        if parts.agents.is_empty() {
            return Err(GameError::invalid("agents", "at least one agent is required"));
        }
        parts
            .distribution
            .validate()
            .map_err(|e| GameError::from_pt(e, "distribution"))?;
        parts
            .weighting
            .validate()
            .map_err(|e| GameError::from_pt(e, "weighting"))?;
        if !(parts.lambda.is_finite() && parts.lambda >= 0.0) {
            return Err(GameError::invalid("lambda", "λ must be ≥ 0"));
        }
        let mut warnings = Vec::new();
        for (i, agent) in parts.agents.iter().enumerate() {
            let path = format!("agents[{i}]");
            if !(agent.weight.is_finite() && agent.weight > 0.0) {
                return Err(GameError::invalid(format!("{path}.weight"), "weight must be > 0"));
            }
            if !agent.offset.is_finite() {
                return Err(GameError::invalid(format!("{path}.offset"), "offset is not finite"));
            }
            for (t, term) in agent.individual_terms.iter().enumerate() {
                let tpath = format!("{path}.individual_terms[{t}]");
                if term.sign != 1 && term.sign != -1 {
                    return Err(GameError::invalid(format!("{tpath}.sign"), "sign must be 1 or -1"));
                }
                if term.coordinate >= agent.block.dim() {
                    return Err(GameError::invalid(
                        format!("{tpath}.coordinate"),
                        format!("block has {} coordinates", agent.block.dim()),
                    ));
                }
                term.value_fn
                    .validate()
                    .map_err(|e| GameError::from_pt(e, &format!("{tpath}.value_fn")))?;
                term.reward_fn
                    .validate()
                    .map_err(|e| GameError::from_pt(e, &format!("{tpath}.reward_fn")))?;
            }
        }
        if parts
            .agents
            .windows(2)
            .any(|w| w[1].weight > w[0].weight)
        {
            warnings.push("agent weights are not ordered a_1 ≥ a_2 ≥ … ≥ a_N".to_string());
        }
        parts.collective.validate(&space)?;
        parts.regularizer.validate(&space)?;
        if parts.lambda > 0.0 && !parts.regularizer.is_strictly_convex() {
            warnings.push(
                "regularizer is not strictly convex; uniqueness of the potential maximizer relies on the collective utility"
                    .to_string(),
            );
        }
        let kinks = parts.collective.kinks(&space);
        let mut game = Self {
            parts,
            space,
            kinks,
            warnings,
        };
        game.check_individual_terms()?;
        Ok(game)
    }

    /// Sampled evaluability and concavity check of every individual term.
    fn check_individual_terms(&mut self) -> Result<(), GameError> {
        const SAMPLES: usize = 33;
        let mut warnings = Vec::new();
        for (i, agent) in self.parts.agents.iter().enumerate() {
            for (t, term) in agent.individual_terms.iter().enumerate() {
                let (lo, hi) = (agent.block.lo[term.coordinate], agent.block.hi[term.coordinate]);
                let xs: Vec<f64> = (0..SAMPLES)
                    .map(|k| lo + (hi - lo) * k as f64 / (SAMPLES - 1) as f64)
                    .collect();
                let mut vals = Vec::with_capacity(SAMPLES);
                let mut overflow = false;
                for x in &xs {
                    let v = self
                        .term_value(term, *x)
                        .map_err(|e| GameError::Evaluation { agent: i, term: t, source: e })?;
                    overflow |= !v.is_finite();
                    vals.push(v);
                }
                if overflow {
                    warnings.push(format!(
                        "agents[{i}].individual_terms[{t}]: term overflows to infinity inside the strategy box"
                    ));
                    continue;
                }
                let mut worst: f64 = 0.0;
                for k in 0..SAMPLES - 2 {
                    // vals[k+1] is the midpoint of vals[k] and vals[k+2]
                    let chord = 0.5 * (vals[k] + vals[k + 2]);
                    let scale = 1.0_f64.max(vals[k + 1].abs());
                    worst = worst.max((chord - vals[k + 1]) / scale);
                }
                if hi > lo && worst > CONCAVITY_TOL {
                    let kind = if term.sign > 0 { "concave" } else { "convex" };
                    warnings.push(format!(
                        "agents[{i}].individual_terms[{t}]: V∘ℛ is not {kind} in its coordinate (midpoint violation {worst:.3e})"
                    ));
                }
            }
        }
        self.warnings.extend(warnings);
        Ok(())
    }

    fn term_value(&self, term: &IndividualTerm, x: f64) -> Result<f64, PtError> {
        pt::pt_term(&term.value_fn, &term.reward_fn, x, &self.parts.distribution, &self.parts.weighting)
            .map(|(v, _)| term.sign as f64 * v)
    }

    pub fn parts(&self) -> &GameParts {
        &self.parts
    }

    pub fn into_parts(self) -> GameParts {
        self.parts
    }

    pub fn space(&self) -> &StrategySpace {
        &self.space
    }

    pub fn kinks(&self) -> &[Kink] {
        &self.kinks
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn num_agents(&self) -> usize {
        self.parts.agents.len()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn lambda(&self) -> f64 {
        self.parts.lambda
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.parts.agents[i].weight
    }

    /// Largest agent weight (`a_1` under the usual ordering).
    pub fn max_weight(&self) -> f64 {
        self.parts.agents.iter().map(|a| a.weight).fold(0.0, f64::max)
    }

    pub fn regularizer(&self) -> &Regularizer {
        &self.parts.regularizer
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self, GameError> {
        let mut parts = self.parts.clone();
        parts.lambda = lambda;
        Self::new(parts)
    }

    pub fn with_regularizer(&self, regularizer: Regularizer, lambda: f64) -> Result<Self, GameError> {
        let mut parts = self.parts.clone();
        parts.regularizer = regularizer;
        parts.lambda = lambda;
        Self::new(parts)
    }

    /// Replace the coefficients of every linear-incentive regularizer term.
    ///
    /// Only the coefficients change, so the sampled checks are not re-run.
    pub fn with_incentives(&self, coefficients: &[f64]) -> Result<Self, GameError> {
        let mut game = self.clone();
        let mut found = false;
        for t in &mut game.parts.regularizer.terms {
            if let RegularizerTerm::LinearIncentive { coefficients: c, .. } = t {
                if c.len() != coefficients.len() {
                    return Err(GameError::Dimension {
                        expected: c.len(),
                        got: coefficients.len(),
                    });
                }
                c.copy_from_slice(coefficients);
                found = true;
            }
        }
        if !found {
            return Err(GameError::invalid("regularizer", "game has no linear incentive term"));
        }
        Ok(game)
    }

    fn check_agent(&self, i: usize) -> Result<(), GameError> {
        if i >= self.num_agents() {
            return Err(GameError::AgentIndex {
                index: i,
                agents: self.num_agents(),
            });
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), GameError> {
        if x.len() != self.dim() {
            return Err(GameError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn collective(&self, x: &[f64]) -> f64 {
        self.parts.collective.value(&self.space, x)
    }

    pub fn regularizer_value(&self, x: &[f64]) -> f64 {
        self.parts.regularizer.value(&self.space, x)
    }

    /// Individual reward of agent `i`: offset plus its signed PT expectations.
    pub fn individual(&self, i: usize, x: &[f64]) -> Result<f64, GameError> {
        let agent = &self.parts.agents[i];
        let start = self.space.range(i).start;
        let mut total = agent.offset;
        for (t, term) in agent.individual_terms.iter().enumerate() {
            total += self
                .term_value(term, x[start + term.coordinate])
                .map_err(|e| GameError::Evaluation { agent: i, term: t, source: e })?;
        }
        Ok(total)
    }

    fn add_individual_gradient(&self, i: usize, x: &[f64], scale: f64, grad: &mut [f64]) -> Result<(), GameError> {
        let agent = &self.parts.agents[i];
        let start = self.space.range(i).start;
        for (t, term) in agent.individual_terms.iter().enumerate() {
            let c = start + term.coordinate;
            let (_, d) = pt::pt_term(&term.value_fn, &term.reward_fn, x[c], &self.parts.distribution, &self.parts.weighting)
                .map_err(|e| GameError::Evaluation { agent: i, term: t, source: e })?;
            grad[c] += scale * term.sign as f64 * d;
        }
        Ok(())
    }

    /// `J_i(x) = a_i·(𝒥(x) − λH(x)) + individual_i(x)`.
    pub fn utility(&self, i: usize, x: &[f64]) -> Result<f64, GameError> {
        self.check_agent(i)?;
        self.check_dim(x)?;
        let shared = self.collective(x) - self.parts.lambda * self.regularizer_value(x);
        Ok(self.weight(i) * shared + self.individual(i, x)?)
    }

    pub fn utilities(&self, x: &[f64]) -> Result<Vec<f64>, GameError> {
        (0..self.num_agents()).map(|i| self.utility(i, x)).collect()
    }

    /// `Φ(x) = 𝒥(x) + Σ_j individual_j(x)/a_j − λH(x)`.
    pub fn potential(&self, x: &[f64]) -> Result<f64, GameError> {
        self.check_dim(x)?;
        let mut unregularized = self.collective(x);
        for j in 0..self.num_agents() {
            unregularized += self.individual(j, x)? / self.weight(j);
        }
        Ok(unregularized - self.parts.lambda * self.regularizer_value(x))
    }

    /// Kink multipliers at `x`: `sign(level)` off the kink, uniform on `[−1, 1]` exactly on it.
    ///
    /// Draws happen in kink order, one per kink sitting exactly at zero.
    pub fn kink_multipliers<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Vec<f64> {
        self.kinks
            .iter()
            .map(|k| k.multiplier(x).unwrap_or_else(|| rng.gen_range(-1.0..=1.0)))
            .collect()
    }

    /// `∇(𝒥 − λH)` with the given kink multipliers.
    fn shared_gradient(&self, x: &[f64], multipliers: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut gc = vec![0.0; n];
        self.parts.collective.add_smooth_gradient(x, &mut gc);
        for (k, u) in self.kinks.iter().zip(multipliers) {
            for (c, a) in &k.coeffs {
                gc[*c] -= k.weight * u * a;
            }
        }
        let mut gh = vec![0.0; n];
        self.parts.regularizer.add_gradient(&self.space, x, 1.0, &mut gh);
        gc.iter()
            .zip(&gh)
            .map(|(c, h)| c - self.parts.lambda * h)
            .collect()
    }

    /// Potential superdifferential element for fixed kink multipliers.
    pub fn potential_gradient_with(&self, x: &[f64], multipliers: &[f64]) -> Result<Vec<f64>, GameError> {
        self.check_dim(x)?;
        let mut g = self.shared_gradient(x, multipliers);
        for j in 0..self.num_agents() {
            let mut gi = vec![0.0; self.dim()];
            self.add_individual_gradient(j, x, 1.0, &mut gi)?;
            let a = self.weight(j);
            for c in self.space.range(j) {
                g[c] += gi[c] / a;
            }
        }
        Ok(g)
    }

    /// Agent `i`'s own-block utility superdifferential element for fixed kink multipliers.
    pub fn utility_gradient_with(&self, i: usize, x: &[f64], multipliers: &[f64]) -> Result<Vec<f64>, GameError> {
        self.check_agent(i)?;
        self.check_dim(x)?;
        let shared = self.shared_gradient(x, multipliers);
        let mut gi = vec![0.0; self.dim()];
        self.add_individual_gradient(i, x, 1.0, &mut gi)?;
        let a = self.weight(i);
        Ok(self.space.range(i).map(|c| a * shared[c] + gi[c]).collect())
    }

    /// An element of the superdifferential of `Φ` at `x`; kinks sitting exactly
    /// at their breakpoint get a uniformly drawn multiplier.
    pub fn subgrad_potential<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Vec<f64>, GameError> {
        self.check_dim(x)?;
        let u = self.kink_multipliers(x, rng);
        self.potential_gradient_with(x, &u)
    }

    /// Own-block superdifferential element of `J_i` at `x`.
    ///
    /// Multipliers are drawn for every kink, as in [`Self::subgrad_potential`], so
    /// both calls consume the random stream identically.
    pub fn subgrad_utility<R: Rng + ?Sized>(&self, i: usize, x: &[f64], rng: &mut R) -> Result<Vec<f64>, GameError> {
        self.check_agent(i)?;
        self.check_dim(x)?;
        let u = self.kink_multipliers(x, rng);
        self.utility_gradient_with(i, x, &u)
    }

    /// Gradient of `Φ` without the kink terms, scaled by `scale`, accumulated into `grad`.
    pub(crate) fn add_potential_smooth_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> Result<(), GameError> {
        let mut gc = vec![0.0; self.dim()];
        self.parts.collective.add_smooth_gradient(x, &mut gc);
        self.parts
            .regularizer
            .add_gradient(&self.space, x, -self.parts.lambda, &mut gc);
        for j in 0..self.num_agents() {
            self.add_individual_gradient(j, x, 1.0 / self.weight(j), &mut gc)?;
        }
        for (g, v) in grad.iter_mut().zip(&gc) {
            *g += scale * v;
        }
        Ok(())
    }

    /// Gradient of `J_i` without the kink terms.
    pub(crate) fn add_utility_smooth_gradient(&self, i: usize, x: &[f64], grad: &mut [f64]) -> Result<(), GameError> {
        let a = self.weight(i);
        let mut gc = vec![0.0; self.dim()];
        self.parts.collective.add_smooth_gradient(x, &mut gc);
        self.parts
            .regularizer
            .add_gradient(&self.space, x, -self.parts.lambda, &mut gc);
        for (g, v) in grad.iter_mut().zip(&gc) {
            *g += a * v;
        }
        self.add_individual_gradient(i, x, 1.0, grad)
    }

    /// Uniform random feasible point.
    pub fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|c| {
                let (lo, hi) = (self.space.lo(c), self.space.hi(c));
                let v = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                self.space.project_coord(c, v)
            })
            .collect()
    }
}

pub fn project(space: &StrategySpace, raw: &[f64]) -> Result<JointStrategy, GameError> {
    space.project(raw)
}

/// Largest `|ΔJ_i − a_i·ΔΦ|` over random unilateral deviations.
pub fn verify_weighted_potential<R: Rng + ?Sized>(
    game: &GameSpec,
    samples: usize,
    rng: &mut R,
) -> Result<f64, GameError> {
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let x = game.random_point(rng);
        let i = rng.gen_range(0..game.num_agents());
        let mut dev = x.clone();
        let other = game.random_point(rng);
        for c in game.space().range(i) {
            dev[c] = other[c];
        }
        let dj = game.utility(i, &x)? - game.utility(i, &dev)?;
        let dphi = game.potential(&x)? - game.potential(&dev)?;
        let residual = (dj - game.weight(i) * dphi).abs();
        worst = worst.max(if residual.is_nan() { f64::INFINITY } else { residual });
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn team_nonsmooth(lambda: f64) -> GameSpec {
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
        .unwrap()
    }

    /// 10 − (x1+x2−2)² − 0.1‖x‖² + PT rewards, agent 2 only when `second_only`.
    fn smooth_game(weights: [f64; 2], second_only: bool) -> GameSpec {
        let dist = OutcomeDistribution::new(vec![2.0, 10.0], vec![0.8, 0.2]).unwrap();
        let mut a1 = AgentSpec::new(weights[0], Block::interval(-10.0, 10.0));
        if !second_only {
            a1 = a1.with_term(IndividualTerm::reward(
                ValueFunction::LogGainLinearLoss,
                RewardFunction::ScaleShift { d: 1.0 },
                0,
            ));
        }
        let a2 = AgentSpec::new(weights[1], Block::interval(-10.0, 10.0)).with_term(IndividualTerm::reward(
            ValueFunction::Identity,
            RewardFunction::ScaleShift { d: 2.0 },
            0,
        ));
        GameSpec::new(GameParts {
            agents: vec![a1, a2],
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
            distribution: dist,
            weighting: WeightingFunction::Identity,
        })
        .unwrap()
    }

    #[test]
    fn team_game_values() {
        let g = team_nonsmooth(0.1);
        assert_eq!(g.utility(0, &[0.0, 0.0]).unwrap(), 5.0);
        assert_eq!(g.potential(&[0.0, 0.0]).unwrap(), 5.0);
        assert!((g.utility(1, &[4.0, -4.0]).unwrap() - 1.8).abs() < 1e-12);
        assert!((g.potential(&[1.0, -1.0]).unwrap() - 4.8).abs() < 1e-12);
        assert!(matches!(g.utility(2, &[0.0, 0.0]), Err(GameError::AgentIndex { .. })));
    }

    #[test]
    fn team_game_without_regularization_collapses_to_collective() {
        let g = team_nonsmooth(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = g.random_point(&mut rng);
            let j = g.collective(&x);
            assert_eq!(g.utility(0, &x).unwrap(), j);
            assert_eq!(g.utility(1, &x).unwrap(), j);
        }
    }

    #[test]
    fn empty_game_has_zero_potential() {
        let g = GameSpec::new(GameParts {
            agents: vec![AgentSpec::new(1.0, Block::interval(-1.0, 1.0))],
            collective: CollectiveUtility::default(),
            regularizer: Regularizer::default(),
            lambda: 0.0,
            distribution: OutcomeDistribution::degenerate(1.0),
            weighting: WeightingFunction::Identity,
        })
        .unwrap();
        assert_eq!(g.potential(&[0.3]).unwrap(), 0.0);
    }

    #[test]
    fn subgradient_away_from_kink() {
        let g = team_nonsmooth(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let grad = g.subgrad_potential(&[1.0, 1.0], &mut rng).unwrap();
        assert!((grad[0] + 1.2).abs() < 1e-12);
        assert!((grad[1] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn subgradient_on_kink_is_random_but_seeded() {
        let g = team_nonsmooth(0.1);
        let x = [2.0, -2.0];
        let a = g.subgrad_potential(&x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = g.subgrad_potential(&x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        // −u − 0.2·x_k with u ∈ [−1, 1]
        let u0 = -a[0] - 0.4;
        let u1 = -a[1] + 0.4;
        assert!((u0 - u1).abs() < 1e-12 && u0.abs() <= 1.0);
        let seen: Vec<f64> = (0..20)
            .map(|s| g.subgrad_potential(&x, &mut ChaCha8Rng::seed_from_u64(s)).unwrap()[0])
            .collect();
        assert!(seen.iter().any(|v| (v - seen[0]).abs() > 1e-6));
    }

    #[test]
    fn smooth_point_gradient_ignores_seed() {
        let g = smooth_game([1.0, 1.0], false);
        let x = [0.7, 1.3];
        let a = g.subgrad_potential(&x, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = g.subgrad_potential(&x, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
    }

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], c: usize) -> f64 {
        let h = 1e-5;
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[c] += h;
        xm[c] -= h;
        (f(&xp) - f(&xm)) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for game in [smooth_game([1.0, 1.0], true), smooth_game([2.0, 0.5], false)] {
            for _ in 0..100 {
                let x = game.random_point(&mut rng);
                let g = game.subgrad_potential(&x, &mut rng).unwrap();
                for c in 0..2 {
                    let fd = central_difference(|p| game.potential(p).unwrap(), &x, c);
                    assert!((g[c] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "Φ c={c} x={x:?} {} vs {fd}", g[c]);
                }
                for i in 0..2 {
                    let gi = game.subgrad_utility(i, &x, &mut rng).unwrap();
                    let fd = central_difference(|p| game.utility(i, p).unwrap(), &x, i);
                    assert!((gi[0] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "J_{i} x={x:?} {} vs {fd}", gi[0]);
                    // a_i·∂Φ/∂x_i = ∂J_i/∂x_i
                    assert!((gi[0] - game.weight(i) * g[i]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn team_utility_gradient_equals_potential_block() {
        let g = team_nonsmooth(0.1);
        for x in [[0.5, -0.5], [3.0, 2.0], [0.0, 0.0]] {
            let p = g.subgrad_potential(&x, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            for i in 0..2 {
                let u = g.subgrad_utility(i, &x, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
                assert_eq!(u[0], p[i]);
            }
        }
    }

    #[test]
    fn linear_term_contributes_its_slope() {
        let dist = OutcomeDistribution::new(vec![1.0, 100.0], vec![0.9, 0.1]).unwrap();
        let g = GameSpec::new(GameParts {
            agents: vec![AgentSpec::new(1.0, Block::interval(0.0, 5.0)).with_term(IndividualTerm::reward(
                ValueFunction::Identity,
                RewardFunction::Linear { c: 2.5 },
                0,
            ))],
            collective: CollectiveUtility::default(),
            regularizer: Regularizer::default(),
            lambda: 0.0,
            distribution: dist,
            weighting: WeightingFunction::Prelec { alpha: 0.5 },
        })
        .unwrap();
        let grad = g.subgrad_utility(0, &[1.7], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(grad, vec![2.5]);
    }

    #[test]
    fn weighted_potential_identity_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for game in [team_nonsmooth(0.1), smooth_game([1.0, 1.0], false), smooth_game([3.0, 0.25], false)] {
            let r = verify_weighted_potential(&game, 1000, &mut rng).unwrap();
            assert!(r <= 1e-9, "residual {r}");
        }
        let single = GameSpec::new(GameParts {
            agents: vec![AgentSpec::new(2.0, Block::interval(0.0, 3.0)).with_term(IndividualTerm::reward(
                ValueFunction::LogGainLinearLoss,
                RewardFunction::AffineScaled { d: 1.0 },
                0,
            ))],
            collective: CollectiveUtility::new(vec![CollectiveTerm::NegSqDeviation { d: 2.0, coords: vec![0] }]),
            regularizer: Regularizer::default(),
            lambda: 0.0,
            distribution: OutcomeDistribution::new(vec![1.0, 5.0], vec![0.2, 0.8]).unwrap(),
            weighting: WeightingFunction::Identity,
        })
        .unwrap();
        assert!(verify_weighted_potential(&single, 1000, &mut rng).unwrap() <= 1e-9);
    }

    #[test]
    fn potential_is_concave_along_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for game in [team_nonsmooth(0.1), smooth_game([1.0, 1.0], false)] {
            for _ in 0..500 {
                let a = game.random_point(&mut rng);
                let b = game.random_point(&mut rng);
                let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
                let lhs = game.potential(&mid).unwrap();
                let rhs = 0.5 * (game.potential(&a).unwrap() + game.potential(&b).unwrap());
                assert!(lhs >= rhs - 1e-9);
            }
        }
    }

    #[test]
    fn regularization_shifts_potential_by_lambda_h() {
        let g = smooth_game([1.0, 1.0], false);
        let g0 = g.with_lambda(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let x = g.random_point(&mut rng);
            let expect = g0.potential(&x).unwrap() - 0.1 * g.regularizer_value(&x);
            assert_eq!(g.potential(&x).unwrap(), expect);
        }
    }

    #[test]
    fn validation_reports_field_paths() {
        let mut parts = team_nonsmooth(0.1).into_parts();
        parts.distribution.probs = vec![0.9];
        let err = GameSpec::new(parts).unwrap_err();
        assert!(matches!(err, GameError::Invalid { ref path, .. } if path == "distribution.probs"), "{err}");

        let mut parts = team_nonsmooth(0.1).into_parts();
        parts.agents[1].weight = 0.0;
        let err = GameSpec::new(parts).unwrap_err();
        assert!(matches!(err, GameError::Invalid { ref path, .. } if path == "agents[1].weight"));

        let mut parts = team_nonsmooth(0.1).into_parts();
        parts.collective.terms.push(CollectiveTerm::NegAbsSum { coords: vec![0, 5] });
        assert!(GameSpec::new(parts).is_err());

        let mut parts = team_nonsmooth(0.1).into_parts();
        parts.regularizer = Regularizer::new(vec![RegularizerTerm::WeightedSqNorm {
            center: vec![0.0, 0.0],
            weights: vec![1.0, 0.0],
        }]);
        assert!(GameSpec::new(parts).is_err());
    }

    #[test]
    fn weight_order_and_concavity_are_warnings() {
        let g = smooth_game([0.5, 2.0], false);
        assert!(g.warnings().iter().any(|w| w.contains("weights")));

        // e^{−x} with sign +1 is convex: reported, not rejected
        let g = GameSpec::new(GameParts {
            agents: vec![AgentSpec::new(1.0, Block::interval(0.0, 5.0)).with_term(IndividualTerm::reward(
                ValueFunction::Linear { slope: 1.0 },
                RewardFunction::ExpPlain { k: 1.0 },
                0,
            ))],
            collective: CollectiveUtility::default(),
            regularizer: Regularizer::default(),
            lambda: 0.0,
            distribution: OutcomeDistribution::degenerate(1.0),
            weighting: WeightingFunction::Identity,
        })
        .unwrap();
        assert!(g.warnings().iter().any(|w| w.contains("not concave")));
    }
}
