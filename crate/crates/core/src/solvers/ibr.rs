use super::maximize::{maximize_box, BoxProblem, MaximizeError, Target};
use super::{check_start, sup_distance, Recorder, SolverConfig, SolverError, Status, Trajectory};
use crate::game::GameSpec;

/// What an agent maximizes over its own block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlockObjective<'a> {
    /// The agent's utility `J_i(·, x_{−i})`.
    Utility,
    /// The proximal surrogate `Φ(·, x_{−i}) − weight·‖· − center_i‖²`; `center` is a full joint point.
    Surrogate { weight: f64, center: &'a [f64] },
}

/// Relative slack under which lattice candidates count as tied.
const LATTICE_TIE: f64 = 1e-12;

/// Best response of agent `i` at `x`.
///
/// Continuous blocks are searched by cyclic coordinate ascent; lattice blocks by
/// exhaustive evaluation of the one-step move set. Ties go to the candidate nearest
/// the current block, then to the lexicographically smallest.
pub fn argmax_block(
    game: &GameSpec,
    i: usize,
    x: &[f64],
    objective: BlockObjective,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, SolverError> {
    block_response(game, i, x, objective, cfg).map_err(|e| match e {
        MaximizeError::Game(g) => SolverError::Game(g),
        other => SolverError::Unsupported(other.to_string()),
    })
}

pub(crate) fn block_response(
    game: &GameSpec,
    i: usize,
    x: &[f64],
    objective: BlockObjective,
    cfg: &SolverConfig,
) -> Result<Vec<f64>, MaximizeError> {
    let space = game.space();
    if i >= game.num_agents() {
        return Err(crate::game::GameError::AgentIndex {
            index: i,
            agents: game.num_agents(),
        }
        .into());
    }
    let range = space.range(i);
    let problem = match objective {
        BlockObjective::Utility => BoxProblem::new(game, Target::Utility(i), None, range.clone().collect()),
        BlockObjective::Surrogate { weight, center } => {
            BoxProblem::new(game, Target::Potential, Some((weight, center)), range.clone().collect())
        }
    };
    if space.blocks()[i].lattice.is_some() {
        let mut y = x.to_vec();
        let moves = space.lattice_moves(i, x);
        let mut scored = Vec::with_capacity(moves.len());
        for m in moves {
            y[range.clone()].copy_from_slice(&m);
            scored.push((problem.value(&y)?, m));
        }
        return Ok(pick_lattice(scored, &x[range]));
    }
    let mut y = x.to_vec();
    maximize_box(&problem, &mut y, cfg.inner_tol, cfg.max_inner_iter)?;
    Ok(y[range].to_vec())
}

/// Highest-valued candidate; ties broken by distance to `current`, then lexicographically.
pub(crate) fn pick_lattice(scored: Vec<(f64, Vec<f64>)>, current: &[f64]) -> Vec<f64> {
    let best = scored
        .iter()
        .map(|(v, _)| if v.is_nan() { f64::NEG_INFINITY } else { *v })
        .fold(f64::NEG_INFINITY, f64::max);
    let tie = LATTICE_TIE * best.abs().max(1.0);
    let dist = |p: &[f64]| p.iter().zip(current).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    scored
        .into_iter()
        .filter(|(v, _)| *v >= best - tie)
        .map(|(_, p)| p)
        .min_by(|p, q| {
            dist(p)
                .total_cmp(&dist(q))
                .then_with(|| p.iter().zip(q.iter()).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal))
        })
        .unwrap_or_else(|| current.to_vec())
}

/// Cyclic iterative best response; one trajectory step per full sweep.
pub fn solve_ibr(game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    check_start(game, x0, cfg)?;
    let n = game.num_agents();
    let start = cfg.ibr_start_agent % n;
    let mut rec = Recorder::new(game, x0)?;
    for _ in 0..cfg.max_iter {
        let before = rec.current().to_vec();
        let mut x = before.clone();
        for k in 0..n {
            let i = (start + k) % n;
            match block_response(game, i, &x, BlockObjective::Utility, cfg) {
                Ok(b) => x[game.space().range(i)].copy_from_slice(&b),
                Err(e) => return Ok(rec.fail(e, x)),
            }
        }
        let disp = sup_distance(&before, &x);
        if let Err(e) = rec.push(x.clone(), disp) {
            return Ok(rec.fail(e, x));
        }
        if disp <= cfg.tol {
            return Ok(rec.finish(Status::Converged));
        }
    }
    Ok(rec.finish(Status::MaxIter))
}
