use serde::{Deserialize, Serialize};

use super::ibr::{block_response, pick_lattice, BlockObjective};
use super::maximize::{maximize_box, BoxProblem, MaximizeError, Target};
use super::{check_start, sup_distance, Recorder, SolverConfig, SolverError, Status, Trajectory};
use crate::game::GameSpec;

/// Largest joint move set enumerated by a lattice proximal step.
const MAX_JOINT_MOVES: usize = 1_000_000;

/// One proximal step: `argmax_x Φ(x) − prox_weight·‖x − from‖²`.
///
/// On lattice spaces the maximization runs over every combination of the
/// agents' one-step moves.
pub fn imm_step(game: &GameSpec, from: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>, SolverError> {
    prox_step(game, from, cfg).map_err(|e| match e {
        MaximizeError::Game(g) => SolverError::Game(g),
        other => SolverError::Unsupported(other.to_string()),
    })
}

fn prox_step(game: &GameSpec, from: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>, MaximizeError> {
    let space = game.space();
    let problem = BoxProblem::new(game, Target::Potential, Some((cfg.prox_weight, from)), (0..game.dim()).collect());
    if !space.has_lattice() {
        let mut x = from.to_vec();
        maximize_box(&problem, &mut x, cfg.inner_tol, cfg.max_inner_iter)?;
        return Ok(x);
    }
    let per_agent: Vec<Vec<Vec<f64>>> = (0..game.num_agents()).map(|i| space.lattice_moves(i, from)).collect();
    let total = per_agent.iter().try_fold(1usize, |acc, m| acc.checked_mul(m.len()));
    if space.blocks().iter().any(|b| b.lattice.is_none()) || total.is_none_or(|t| t > MAX_JOINT_MOVES) {
        return Err(MaximizeError::Unsupported(
            "joint lattice step needs every block on a lattice and at most 10^6 joint moves".to_string(),
        ));
    }
    let mut scored = Vec::with_capacity(total.unwrap_or(0));
    let mut idx = vec![0usize; per_agent.len()];
    loop {
        let x: Vec<f64> = idx.iter().zip(&per_agent).flat_map(|(k, m)| m[*k].iter().copied()).collect();
        scored.push((problem.value(&x)?, x));
        let mut a = 0;
        loop {
            if a == idx.len() {
                return Ok(pick_lattice(scored, from));
            }
            idx[a] += 1;
            if idx[a] < per_agent[a].len() {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

/// Iterative minorize-maximize with the proximal surrogate.
pub fn solve_imm(game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    check_start(game, x0, cfg)?;
    cfg.validate_prox()?;
    let mut rec = Recorder::new(game, x0)?;
    for _ in 0..cfg.max_iter {
        let x = rec.current().to_vec();
        let next = match prox_step(game, &x, cfg) {
            Ok(next) => next,
            Err(MaximizeError::Unsupported(msg)) => return Err(SolverError::Unsupported(msg)),
            Err(e) => return Ok(rec.fail(e, x)),
        };
        let disp = sup_distance(&x, &next);
        if let Err(e) = rec.push(next.clone(), disp) {
            return Ok(rec.fail(e, next));
        }
        if disp <= cfg.tol {
            return Ok(rec.finish(Status::Converged));
        }
    }
    Ok(rec.finish(Status::MaxIter))
}

/// A block update relayed by the coordinator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelayEvent {
    pub cycle: usize,
    pub agent: usize,
    pub block: Vec<f64>,
}

/// In-process relay holding the latest joint state and the message trace.
#[derive(Debug, Clone)]
pub struct Coordinator {
    state: Vec<f64>,
    log: Vec<RelayEvent>,
}

impl Coordinator {
    pub fn new(x0: &[f64]) -> Self {
        Self {
            state: x0.to_vec(),
            log: Vec::new(),
        }
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn relay(&mut self, game: &GameSpec, cycle: usize, agent: usize, block: Vec<f64>) {
        self.state[game.space().range(agent)].copy_from_slice(&block);
        self.log.push(RelayEvent { cycle, agent, block });
    }

    pub fn log(&self) -> &[RelayEvent] {
        &self.log
    }

    pub fn into_log(self) -> Vec<RelayEvent> {
        self.log
    }
}

/// Distributed IMM: agents cyclically maximize their block of the surrogate.
pub fn solve_immd(game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    check_start(game, x0, cfg)?;
    cfg.validate_prox()?;
    let mut rec = Recorder::new(game, x0)?;
    let mut coord = Coordinator::new(x0);
    let mut status = Status::MaxIter;
    for cycle in 1..=cfg.max_iter {
        let center = coord.state().to_vec();
        for i in 0..game.num_agents() {
            let objective = BlockObjective::Surrogate {
                weight: cfg.prox_weight,
                center: &center,
            };
            match block_response(game, i, coord.state(), objective, cfg) {
                Ok(block) => coord.relay(game, cycle, i, block),
                Err(e) => {
                    let point = coord.state().to_vec();
                    let mut t = rec.fail(e, point);
                    t.relay_log = coord.into_log();
                    return Ok(t);
                }
            }
        }
        let x = coord.state().to_vec();
        let disp = sup_distance(&center, &x);
        if let Err(e) = rec.push(x.clone(), disp) {
            let mut t = rec.fail(e, x);
            t.relay_log = coord.into_log();
            return Ok(t);
        }
        if disp <= cfg.tol {
            status = Status::Converged;
            break;
        }
    }
    let mut t = rec.finish(status);
    t.relay_log = coord.into_log();
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{AgentSpec, Block, CollectiveTerm, CollectiveUtility, GameParts, Regularizer};
    use crate::pt::{OutcomeDistribution, WeightingFunction};

    fn game(agents: Vec<AgentSpec>, collective: Vec<CollectiveTerm>, reg: Regularizer, lambda: f64) -> GameSpec {
        GameSpec::new(GameParts {
            agents,
            collective: CollectiveUtility::new(collective),
            regularizer: reg,
            lambda,
            distribution: OutcomeDistribution::degenerate(1.0),
            weighting: WeightingFunction::Identity,
        })
        .unwrap()
    }

    fn team_game_case() -> GameSpec {
        game(
            vec![
                AgentSpec::new(1.0, Block::interval(-100.0, 100.0)),
                AgentSpec::new(1.0, Block::interval(-100.0, 100.0)),
            ],
            vec![
                CollectiveTerm::Constant { c: 5.0 },
                CollectiveTerm::NegAbsSum { coords: vec![0, 1] },
            ],
            Regularizer::squared_norm(2),
            0.1,
        )
    }

    fn imm_cfg(prox: f64) -> SolverConfig {
        SolverConfig {
            prox_weight: prox,
            tol: 1e-6,
            max_iter: 500,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn proximal_step_on_quadratic_halves() {
        let g = game(
            vec![AgentSpec::new(1.0, Block::interval(-1.0, 1.0))],
            vec![],
            Regularizer::squared_norm(1),
            1.0,
        );
        let t = solve_imm(&g, &[1.0], &imm_cfg(1.0)).unwrap();
        assert_eq!(t.status, Status::Converged);
        for s in &t.steps {
            if s.displacement > 0.0 || s.iter == 0 {
                // oracle: argmax −x² − (x − x₀)² = x₀/2
                let expect = 0.5f64.powi(s.iter as i32);
                assert!((s.x[0] - expect).abs() <= 1e-15, "n={} {}", s.iter, s.x[0]);
            }
        }
    }

    #[test]
    fn team_game_converges_from_listed_starts() {
        let g = team_game_case();
        for x0 in [[2.0, 4.0], [-4.0, -4.0], [-5.0, 4.0], [10.0, 5.0], [10.0, -1.0]] {
            let t = solve_imm(&g, &x0, &imm_cfg(0.1)).unwrap();
            assert_eq!(t.status, Status::Converged, "{x0:?}");
            assert!(t.final_point().iter().all(|v| v.abs() < 1e-3), "{x0:?} → {:?}", t.final_point());
            assert!(t.worst_potential_drop() >= -1e-9);
        }
    }

    #[test]
    fn first_step_from_two_four_lands_on_ridge() {
        let g = team_game_case();
        let x = imm_step(&g, &[2.0, 4.0], &imm_cfg(0.1)).unwrap();
        assert!((x[0] + 0.5).abs() < 1e-9 && (x[1] - 0.5).abs() < 1e-9, "{x:?}");
    }

    #[test]
    fn fixed_point_is_immediate() {
        let g = team_game_case();
        let t = solve_imm(&g, &[0.0, 0.0], &imm_cfg(0.1)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.steps[1].displacement, 0.0);
    }

    #[test]
    fn immd_single_agent_on_lattice_reaches_argmax() {
        let g = game(
            vec![AgentSpec::new(1.0, Block::cube(2, 0.0, 8.0).with_lattice(0.0, 1.0))],
            vec![CollectiveTerm::NegSqDeviation { d: 5.0, coords: vec![0, 1] }],
            Regularizer::squared_norm(2),
            0.1,
        );
        let t = solve_immd(&g, &[0.0, 8.0], &imm_cfg(0.01)).unwrap();
        assert_eq!(t.status, Status::Converged);
        // oracle: exhaustive search of the 9×9 lattice
        let mut best = (f64::NEG_INFINITY, vec![]);
        for a in 0..=8 {
            for b in 0..=8 {
                let p = vec![a as f64, b as f64];
                let v = g.potential(&p).unwrap();
                if v > best.0 {
                    best = (v, p);
                }
            }
        }
        assert_eq!(t.final_point(), best.1.as_slice());
        assert!(t.worst_potential_drop() >= 0.0);
        assert_eq!(t.relay_log.len(), t.iterations());
    }

    #[test]
    fn immd_co_located_agents_stay() {
        let block = Block::cube(2, 0.0, 5.0).with_lattice(0.0, 1.0);
        let g = game(
            vec![AgentSpec::new(1.0, block.clone()), AgentSpec::new(1.0, block)],
            vec![CollectiveTerm::NegPairwiseL1],
            Regularizer::squared_norm(4),
            1.0,
        );
        let t = solve_immd(&g, &[0.0; 4], &imm_cfg(1.0)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.iterations(), 1);
        assert_eq!(t.final_point(), &[0.0; 4]);
        assert_eq!(t.relay_log.len(), 2);
        assert_eq!(t.relay_log[1].agent, 1);
    }

    #[test]
    fn imm_on_lattice_enumerates_joint_moves() {
        let block = Block::cube(1, 0.0, 6.0).with_lattice(0.0, 1.0);
        let g = game(
            vec![AgentSpec::new(1.0, block.clone()), AgentSpec::new(1.0, block)],
            vec![CollectiveTerm::NegQuadraticToTarget {
                coef: 1.0,
                target: 2.0,
                coords: vec![0, 1],
            }],
            Regularizer::squared_norm(2),
            0.1,
        );
        let t = solve_imm(&g, &[6.0, 6.0], &imm_cfg(0.1)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.final_point(), &[1.0, 1.0]);
        assert!(t.worst_potential_drop() >= 0.0);
    }

    #[test]
    fn zero_prox_weight_is_rejected() {
        let g = team_game_case();
        assert!(matches!(solve_imm(&g, &[0.0, 0.0], &imm_cfg(0.0)), Err(SolverError::Config { .. })));
    }
}
