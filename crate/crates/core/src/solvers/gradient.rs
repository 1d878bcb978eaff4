use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_start, sup_distance, Recorder, SolverConfig, SolverError, Status, Step, Trajectory};
use crate::game::{GameError, GameSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ascent {
    /// Each agent follows its own utility superdifferential.
    Utilities,
    /// Projected ascent along the potential superdifferential.
    Potential,
}

/// Simultaneous projected (sub)gradient ascent of all agents on their utilities.
///
/// With `cfg.accelerate` the iteration uses Nesterov momentum with restart on
/// potential decrease. With `cfg.averaging > 1`, that many seeded paths run in
/// parallel and the returned steps are their pointwise mean; the paths are kept
/// in [`Trajectory::paths`]. On lattice blocks each agent takes the unit move
/// best aligned with its superdifferential element, or stays.
pub fn solve_gradient(game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    run(game, x0, cfg, Ascent::Utilities)
}

/// Projected (sub)gradient ascent on the potential itself.
pub fn solve_potential_ascent(game: &GameSpec, x0: &[f64], cfg: &SolverConfig) -> Result<Trajectory, SolverError> {
    run(game, x0, cfg, Ascent::Potential)
}

fn run(game: &GameSpec, x0: &[f64], cfg: &SolverConfig, kind: Ascent) -> Result<Trajectory, SolverError> {
    check_start(game, x0, cfg)?;
    if cfg.accelerate && game.space().has_lattice() {
        return Err(SolverError::Unsupported(
            "accelerated gradient ascent needs continuous strategy blocks".to_string(),
        ));
    }
    if cfg.averaging == 1 {
        return Ok(path(game, x0, cfg, kind, 0)?);
    }
    let paths: Vec<Trajectory> = (0..cfg.averaging as u64)
        .into_par_iter()
        .map(|p| path(game, x0, cfg, kind, p))
        .collect::<Result<_, _>>()?;
    Ok(average(game, paths)?)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn path(game: &GameSpec, x0: &[f64], cfg: &SolverConfig, kind: Ascent, stream: u64) -> Result<Trajectory, GameError> {
    let space = game.space();
    let mut rng = rng_for(cfg.seed, stream);
    let mut rec = Recorder::new(game, x0)?;
    let mut x = x0.to_vec();
    let mut y = x0.to_vec();
    let mut momentum = 1.0_f64;
    for k in 1..=cfg.max_iter {
        let u = game.kink_multipliers(&y, &mut rng);
        let g = match ascent_direction(game, &y, &u, kind) {
            Ok(g) if g.iter().all(|v| v.is_finite()) => g,
            Ok(_) => return Ok(rec.fail("superdifferential element is not finite", y)),
            Err(e) => return Ok(rec.fail(e, y)),
        };
        let next: Vec<f64> = if space.has_lattice() {
            lattice_moves(game, &y, &g)
        } else {
            let eta = cfg.step.at(k);
            y.iter()
                .zip(&g)
                .enumerate()
                .map(|(c, (v, d))| space.project_coord(c, v + eta * d))
                .collect()
        };
        if cfg.accelerate {
            let (phi_next, phi_x) = match (game.potential(&next), game.potential(&x)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return Ok(rec.fail(e, next)),
            };
            if phi_next < phi_x {
                momentum = 1.0;
                y = next.clone();
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
                let beta = (momentum - 1.0) / t_next;
                y = next
                    .iter()
                    .zip(&x)
                    .enumerate()
                    .map(|(c, (n, o))| space.project_coord(c, n + beta * (n - o)))
                    .collect();
                momentum = t_next;
            }
        } else {
            y = next.clone();
        }
        let disp = sup_distance(&x, &next);
        x = next;
        if let Err(e) = rec.push(x.clone(), disp) {
            return Ok(rec.fail(e, x));
        }
        if disp <= cfg.tol {
            return Ok(rec.finish(Status::Converged));
        }
    }
    Ok(rec.finish(Status::MaxIter))
}

fn ascent_direction(game: &GameSpec, x: &[f64], u: &[f64], kind: Ascent) -> Result<Vec<f64>, GameError> {
    match kind {
        Ascent::Potential => game.potential_gradient_with(x, u),
        Ascent::Utilities => {
            let mut g = Vec::with_capacity(x.len());
            for i in 0..game.num_agents() {
                g.extend(game.utility_gradient_with(i, x, u)?);
            }
            Ok(g)
        }
    }
}

/// Each agent's feasible unit move maximizing `g_i·δ`; staying unless some move gains.
fn lattice_moves(game: &GameSpec, x: &[f64], g: &[f64]) -> Vec<f64> {
    let space = game.space();
    let mut next = x.to_vec();
    for i in 0..game.num_agents() {
        let range = space.range(i);
        let here = &x[range.clone()];
        let mut best = (0.0, here.to_vec());
        for m in space.lattice_moves(i, x) {
            let gain: f64 = m.iter().zip(here).zip(&g[range.clone()]).map(|((a, b), d)| (a - b) * d).sum();
            if gain > best.0 {
                best = (gain, m);
            }
        }
        next[range].copy_from_slice(&best.1);
    }
    next
}

/// Pointwise mean of sample paths; shorter paths hold their final point.
fn average(game: &GameSpec, paths: Vec<Trajectory>) -> Result<Trajectory, GameError> {
    let len = paths.iter().map(|p| p.steps.len()).max().unwrap_or(1);
    let count = paths.len() as f64;
    let dim = game.dim();
    let mut steps: Vec<Step> = Vec::with_capacity(len);
    for n in 0..len {
        let mut mean = vec![0.0; dim];
        let mut wall = 0.0;
        for p in &paths {
            let s = p.steps.get(n).unwrap_or_else(|| p.last());
            for (m, v) in mean.iter_mut().zip(&s.x) {
                *m += v;
            }
            if n < p.steps.len() {
                wall += s.wall_ms;
            }
        }
        for m in &mut mean {
            *m /= count;
        }
        let displacement = steps.last().map_or(0.0, |prev| sup_distance(&prev.x, &mean));
        steps.push(Step {
            iter: n,
            potential: game.potential(&mean)?,
            utilities: game.utilities(&mean)?,
            x: mean,
            displacement,
            wall_ms: wall,
        });
    }
    let status = if paths.iter().any(|p| p.status == Status::Error) {
        Status::Error
    } else if paths.iter().all(|p| p.status == Status::Converged) {
        Status::Converged
    } else {
        Status::MaxIter
    };
    let message = paths.iter().find_map(|p| p.message.clone());
    Ok(Trajectory {
        steps,
        status,
        message,
        error_point: None,
        paths,
        relay_log: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{AgentSpec, Block, CollectiveTerm, CollectiveUtility, GameParts, Regularizer};
    use crate::pt::{OutcomeDistribution, WeightingFunction};
    use crate::solvers::StepSchedule;

    fn game(agents: Vec<AgentSpec>, collective: Vec<CollectiveTerm>, lambda: f64) -> GameSpec {
        let dim = agents.iter().map(|a| a.block.dim()).sum();
        GameSpec::new(GameParts {
            agents,
            collective: CollectiveUtility::new(collective),
            regularizer: Regularizer::squared_norm(dim),
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
            0.1,
        )
    }

    fn ga(eta: f64, max_iter: usize) -> SolverConfig {
        SolverConfig {
            step: StepSchedule::Constant { eta },
            max_iter,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn scalar_quadratic_ascent() {
        let g = game(
            vec![AgentSpec::new(1.0, Block::interval(-10.0, 10.0))],
            vec![CollectiveTerm::NegSqDeviation { d: 3.0, coords: vec![0] }],
            0.0,
        );
        let t = solve_gradient(&g, &[0.0], &ga(0.4, 1000)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert!((t.final_point()[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn start_at_maximizer_converges_immediately() {
        let g = game(
            vec![AgentSpec::new(1.0, Block::interval(-10.0, 10.0))],
            vec![CollectiveTerm::NegSqDeviation { d: 3.0, coords: vec![0] }],
            0.0,
        );
        let t = solve_gradient(&g, &[3.0], &ga(0.4, 10)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.iterations(), 1);
    }

    #[test]
    fn subgradient_ascent_approaches_origin() {
        let t = solve_gradient(&team_game_case(), &[2.0, 4.0], &ga(0.1, 2000)).unwrap();
        assert_eq!(t.status, Status::MaxIter);
        assert!(t.final_point().iter().all(|v| v.abs() <= 0.15), "{:?}", t.final_point());
    }

    #[test]
    fn team_game_utility_ascent_equals_potential_ascent() {
        let g = team_game_case();
        for x0 in [[2.0, -2.0], [3.0, 4.0], [0.0, 0.0]] {
            let a = solve_gradient(&g, &x0, &ga(0.1, 200)).unwrap();
            let b = solve_potential_ascent(&g, &x0, &ga(0.1, 200)).unwrap();
            let xa: Vec<_> = a.steps.iter().map(|s| s.x.clone()).collect();
            let xb: Vec<_> = b.steps.iter().map(|s| s.x.clone()).collect();
            assert_eq!(xa, xb);
        }
    }

    #[test]
    fn averaged_paths_are_deterministic() {
        let g = team_game_case();
        let cfg = SolverConfig {
            averaging: 8,
            seed: 42,
            ..ga(0.1, 100)
        };
        let a = solve_gradient(&g, &[1.0, -1.0], &cfg).unwrap();
        let b = solve_gradient(&g, &[1.0, -1.0], &cfg).unwrap();
        assert_eq!(a.clone().with_zero_wall(), b.with_zero_wall());
        assert_eq!(a.paths.len(), 8);
        // paths start exactly on the kink, so their first draws differ
        assert!(a.paths.iter().any(|p| p.steps[1].x != a.paths[0].steps[1].x));
        let mean0: f64 = a.paths.iter().map(|p| p.steps[1].x[0]).sum::<f64>() / 8.0;
        assert!((a.steps[1].x[0] - mean0).abs() < 1e-12);
    }

    #[test]
    fn accelerated_ascent_converges_on_smooth_game() {
        let g = game(
            vec![
                AgentSpec::new(1.0, Block::interval(-10.0, 10.0)),
                AgentSpec::new(1.0, Block::interval(-10.0, 10.0)),
            ],
            vec![CollectiveTerm::NegQuadraticToTarget {
                coef: 1.0,
                target: 2.0,
                coords: vec![0, 1],
            }],
            0.1,
        );
        let cfg = SolverConfig {
            accelerate: true,
            tol: 1e-10,
            ..ga(0.2, 5000)
        };
        let t = solve_gradient(&g, &[-8.0, 9.0], &cfg).unwrap();
        assert_eq!(t.status, Status::Converged);
        let expect = 4.0 / 4.2;
        assert!(t.final_point().iter().all(|v| (v - expect).abs() < 1e-8), "{:?}", t.final_point());
    }

    #[test]
    fn lattice_ascent_steps_by_units() {
        let g = game(
            vec![AgentSpec::new(1.0, Block::cube(2, 0.0, 10.0).with_lattice(0.0, 1.0))],
            vec![CollectiveTerm::NegSqDeviation { d: 4.0, coords: vec![0, 1] }],
            0.0,
        );
        let t = solve_gradient(&g, &[0.0, 9.0], &ga(0.1, 100)).unwrap();
        assert_eq!(t.status, Status::Converged);
        assert_eq!(t.final_point(), &[4.0, 4.0]);
        assert!(t.steps.windows(2).all(|w| sup_distance(&w[0].x, &w[1].x) <= 1.0));
        let err = solve_gradient(&g, &[0.0, 9.0], &SolverConfig { accelerate: true, ..ga(0.1, 10) });
        assert!(matches!(err, Err(SolverError::Unsupported(_))));
    }

    impl Trajectory {
        fn with_zero_wall(mut self) -> Self {
            self.steps.iter_mut().for_each(|s| s.wall_ms = 0.0);
            for p in &mut self.paths {
                p.steps.iter_mut().for_each(|s| s.wall_ms = 0.0);
            }
            self
        }
    }
}
