//! Brute-force certificates: best-response gaps, grid potential maximizers,
//! the regularization ε-bound and proximal-rate tables.
//!
//! Every grid sweep is capped by an evaluation budget because the grid grows
//! exponentially with the total strategy dimension.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{GameError, GameSpec, Regularizer};
use crate::solvers::{maximize_1d, maximize_box, BoxProblem, MaximizeError, Target, Trajectory};

pub const DEFAULT_BUDGET: u64 = 10_000_000;
/// Grid cells within this of the best value are reported as ties of the argmax.
pub const ARGMAX_TIE_TOL: f64 = 1e-9;
/// Grid cells within this of the unregularized maximum approximate its maximizer set.
pub const GAMMA0_TOL: f64 = 1e-6;
/// Default slack of value comparisons made on grid-refined points.
pub const VALUE_TOL: f64 = 1e-6;
/// Stored tie points are capped; the full count is still reported.
const MAX_STORED_TIES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertifyError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(
        "grid of {requested} evaluations exceeds the budget of {budget}; lower the resolution or certify a game with fewer agents"
    )]
    Budget { requested: u128, budget: u64 },
    #[error("{0}")]
    Invalid(String),
}

impl From<MaximizeError> for CertifyError {
    fn from(e: MaximizeError) -> Self {
        match e {
            MaximizeError::Game(g) => CertifyError::Game(g),
            other => CertifyError::Invalid(other.to_string()),
        }
    }
}

/// Product grid over a subset of coordinates.
struct Grid {
    coords: Vec<usize>,
    axes: Vec<Vec<f64>>,
    /// Refinement radius per coordinate (0 on lattice axes).
    cell: Vec<f64>,
    len: usize,
}

impl Grid {
    fn new(game: &GameSpec, coords: Vec<usize>, resolution: usize, budget: u64) -> Result<Self, CertifyError> {
        if resolution < 2 {
            return Err(CertifyError::Invalid("grid resolution must be ≥ 2".to_string()));
        }
        let space = game.space();
        let mut axes = Vec::with_capacity(coords.len());
        let mut cell = vec![0.0; game.dim()];
        for &c in &coords {
            let (lo, hi) = (space.lo(c), space.hi(c));
            match space.lattice_of(c) {
                Some(lat) => axes.push(lat.points(lo, hi)),
                None if hi > lo => {
                    let step = (hi - lo) / (resolution - 1) as f64;
                    cell[c] = step;
                    axes.push(
                        (0..resolution)
                            .map(|k| if k == resolution - 1 { hi } else { lo + (hi - lo) * k as f64 / (resolution - 1) as f64 })
                            .collect(),
                    );
                }
                None => axes.push(vec![lo]),
            }
        }
        let requested = axes.iter().fold(1u128, |acc, a| acc.saturating_mul(a.len() as u128));
        if requested > budget as u128 {
            return Err(CertifyError::Budget { requested, budget });
        }
        Ok(Self {
            coords,
            axes,
            cell,
            len: requested as usize,
        })
    }

    fn fill(&self, mut idx: usize, out: &mut [f64]) {
        for (axis, &c) in self.axes.iter().zip(&self.coords).rev() {
            out[c] = axis[idx % axis.len()];
            idx /= axis.len();
        }
    }
}

struct Scan {
    best_idx: usize,
    best: f64,
    ties: Vec<usize>,
}

fn nan_low(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Exhaustive parallel sweep; the merge keeps the smallest index among equal maxima.
fn scan<F>(grid: &Grid, base: &[f64], f: F, tie_tol: f64) -> Result<Scan, CertifyError>
where
    F: Fn(&[f64]) -> Result<f64, GameError> + Sync,
{
    let eval = |idx: usize| -> Result<f64, GameError> {
        let mut p = base.to_vec();
        grid.fill(idx, &mut p);
        f(&p).map(nan_low)
    };
    let (best_idx, best) = (0..grid.len)
        .into_par_iter()
        .map(|idx| eval(idx).map(|v| (idx, v)))
        .try_reduce(
            || (usize::MAX, f64::NEG_INFINITY),
            |a, b| {
                Ok(if b.1 > a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a })
            },
        )?;
    let ties: Vec<usize> = (0..grid.len)
        .into_par_iter()
        .map(|idx| eval(idx).map(|v| (v >= best - tie_tol).then_some(idx)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    Ok(Scan { best_idx, best, ties })
}

/// Box search within one grid cell of `start`, keeping `start` unless it improves.
fn refine(game: &GameSpec, target: Target, grid: &Grid, start: &[f64]) -> Result<(Vec<f64>, f64), CertifyError> {
    let problem = BoxProblem::new(game, target, None, grid.coords.clone()).around(start, &grid.cell);
    let mut y = start.to_vec();
    match maximize_box(&problem, &mut y, 1e-12, 500) {
        Ok(_) | Err(MaximizeError::NotConverged { .. }) => {}
        Err(e) => return Err(e.into()),
    }
    let v = problem.value(&y)?;
    Ok((y, v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridArgmax {
    /// Refined maximizer and its potential.
    pub point: Vec<f64>,
    pub value: f64,
    pub grid_point: Vec<f64>,
    pub grid_value: f64,
    /// Grid cells within the tie tolerance of the grid maximum (capped).
    pub ties: Vec<Vec<f64>>,
    pub tie_count: usize,
    pub resolution: usize,
    pub evaluations: usize,
    /// Grid spacing per coordinate (0 on lattice coordinates).
    pub cell: Vec<f64>,
}

impl GridArgmax {
    /// More than one grid cell attains the maximum.
    pub fn has_ties(&self) -> bool {
        self.tie_count > 1
    }
}

fn potential_scan(game: &GameSpec, resolution: usize, budget: u64, tie_tol: f64) -> Result<(Grid, Scan), CertifyError> {
    let grid = Grid::new(game, (0..game.dim()).collect(), resolution, budget)?;
    let base = vec![0.0; game.dim()];
    let s = scan(&grid, &base, |p| game.potential(p), tie_tol)?;
    Ok((grid, s))
}

/// Maximize the potential over a product grid, then refine the best cell.
pub fn grid_potential_argmax(game: &GameSpec, resolution: usize, budget: u64) -> Result<GridArgmax, CertifyError> {
    let (grid, s) = potential_scan(game, resolution, budget, ARGMAX_TIE_TOL)?;
    let mut grid_point = vec![0.0; game.dim()];
    grid.fill(s.best_idx, &mut grid_point);
    let (point, value) = refine(game, Target::Potential, &grid, &grid_point)?;
    let ties = s
        .ties
        .iter()
        .take(MAX_STORED_TIES)
        .map(|&idx| {
            let mut p = vec![0.0; game.dim()];
            grid.fill(idx, &mut p);
            p
        })
        .collect();
    Ok(GridArgmax {
        point,
        value,
        grid_point,
        grid_value: s.best,
        ties,
        tie_count: s.ties.len(),
        resolution,
        evaluations: grid.len,
        cell: grid.cell,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGap {
    pub agent: usize,
    /// `max_y J_i(y, x_{−i}) − J_i(x)`, clipped at 0.
    pub gap: f64,
    pub utility: f64,
    pub best_value: f64,
    pub best_block: Vec<f64>,
}

/// Per-agent best-response search over a grid of the agent's block.
pub fn best_responses(game: &GameSpec, x: &[f64], resolution: usize, budget: u64) -> Result<Vec<AgentGap>, CertifyError> {
    game.space().check_feasible(x)?;
    let mut out = Vec::with_capacity(game.num_agents());
    for i in 0..game.num_agents() {
        let grid = Grid::new(game, game.space().range(i).collect(), resolution, budget)?;
        let s = scan(&grid, x, |p| game.utility(i, p), 0.0)?;
        let mut start = x.to_vec();
        grid.fill(s.best_idx, &mut start);
        let (y, v) = refine(game, Target::Utility(i), &grid, &start)?;
        let utility = game.utility(i, x)?;
        let (best_value, block) = if v >= s.best { (v, y) } else { (s.best, start) };
        out.push(AgentGap {
            agent: i,
            gap: (best_value - utility).max(0.0),
            utility,
            best_value,
            best_block: block[game.space().range(i)].to_vec(),
        });
    }
    Ok(out)
}

/// Best-response gap of every agent at `x`.
pub fn br_gap(game: &GameSpec, x: &[f64], resolution: usize) -> Result<Vec<f64>, CertifyError> {
    Ok(best_responses(game, x, resolution, DEFAULT_BUDGET)?
        .into_iter()
        .map(|g| g.gap)
        .collect())
}

/// One inequality checked by a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    /// `">="` or `"<="`.
    pub relation: String,
    pub rhs: f64,
    pub satisfied: bool,
}

impl BoundCheck {
    fn at_least(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            relation: ">=".to_string(),
            rhs,
            satisfied: lhs >= rhs - slack,
        }
    }

    fn at_most(name: &str, lhs: f64, rhs: f64, slack: f64) -> Self {
        Self {
            name: name.to_string(),
            lhs,
            relation: "<=".to_string(),
            rhs,
            satisfied: lhs <= rhs + slack,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizationReport {
    pub lambda: f64,
    /// Largest agent weight.
    pub a1: f64,
    /// Grid cells approximating the unregularized maximizer set.
    pub gamma0_cells: usize,
    /// Regularizer minimizer over those cells.
    pub x_dagger: Vec<f64>,
    pub h_dagger: f64,
    /// `λ·a₁·H(x†)`.
    pub epsilon: f64,
    /// Maximizer of the regularized potential.
    pub x_lambda: Vec<f64>,
    pub phi0_dagger: f64,
    pub phi0_lambda: f64,
    /// Best-response gaps of `x_lambda` in the unregularized game.
    pub gaps: Vec<f64>,
    pub checks: Vec<BoundCheck>,
}

impl RegularizationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.satisfied)
    }
}

/// Check that the regularized maximizer is a `λ·a₁·H(x†)`-Nash equilibrium of the
/// unregularized game and that its potential is sandwiched accordingly.
pub fn regularization_bound_check(
    game0: &GameSpec,
    h: &Regularizer,
    lambda: f64,
    resolution: usize,
    budget: u64,
    value_tol: f64,
) -> Result<RegularizationReport, CertifyError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CertifyError::Invalid("regularization check needs λ > 0".to_string()));
    }
    let g0 = game0.with_regularizer(h.clone(), 0.0)?;
    let g_lambda = game0.with_regularizer(h.clone(), lambda)?;
    let space = g0.space();

    let (grid, s) = potential_scan(&g0, resolution, budget, GAMMA0_TOL)?;
    if s.ties.is_empty() {
        return Err(CertifyError::Invalid("empty maximizer set approximation".to_string()));
    }
    let cells: Vec<Vec<f64>> = s
        .ties
        .iter()
        .map(|&idx| {
            let mut p = vec![0.0; g0.dim()];
            grid.fill(idx, &mut p);
            p
        })
        .collect();
    let h_of = |p: &[f64]| h.value(space, p);
    let dagger_cell = cells
        .iter()
        .min_by(|a, b| h_of(a).total_cmp(&h_of(b)))
        .expect("nonempty")
        .clone();
    // refine along the tie direction through the nearest other tied cell
    let mut x_dagger = dagger_cell.clone();
    let neighbour = cells
        .iter()
        .filter(|c| **c != dagger_cell)
        .min_by(|a, b| dist2(a, &dagger_cell).total_cmp(&dist2(b, &dagger_cell)));
    if let (Some(nb), false) = (neighbour, space.has_lattice()) {
        let d: Vec<f64> = nb.iter().zip(&dagger_cell).map(|(a, b)| a - b).collect();
        let at = |t: f64| -> Vec<f64> {
            dagger_cell
                .iter()
                .zip(&d)
                .enumerate()
                .map(|(c, (p, v))| (p + t * v).clamp(space.lo(c), space.hi(c)))
                .collect()
        };
        let threshold = s.best - GAMMA0_TOL;
        let best = maximize_1d(
            |t| {
                let p = at(t);
                Ok::<f64, GameError>(if g0.potential(&p)? >= threshold { -h_of(&p) } else { f64::NEG_INFINITY })
            },
            -1.0,
            1.0,
            Some(0.0),
            &[],
        )?;
        x_dagger = at(best.arg);
    }
    let h_dagger = h_of(&x_dagger);
    let a1 = g0.max_weight();
    let epsilon = lambda * a1 * h_dagger;

    let argmax = grid_potential_argmax(&g_lambda, resolution, budget)?;
    let x_lambda = argmax.point;
    let phi0_dagger = g0.potential(&x_dagger)?;
    let phi0_lambda = g0.potential(&x_lambda)?;
    let gaps: Vec<f64> = best_responses(&g0, &x_lambda, resolution, budget)?
        .into_iter()
        .map(|g| g.gap)
        .collect();
    let worst = gaps.iter().copied().fold(0.0, f64::max);
    let checks = vec![
        BoundCheck::at_least("phi0(x_dagger) >= phi0(x_lambda)", phi0_dagger, phi0_lambda, value_tol),
        BoundCheck::at_least(
            "phi0(x_lambda) >= phi0(x_dagger) - lambda*H(x_dagger)",
            phi0_lambda,
            phi0_dagger - lambda * h_dagger,
            value_tol,
        ),
        BoundCheck::at_most("br_gap0(x_lambda) <= lambda*a1*H(x_dagger)", worst, epsilon, value_tol),
    ];
    Ok(RegularizationReport {
        lambda,
        a1,
        gamma0_cells: cells.len(),
        x_dagger,
        h_dagger,
        epsilon,
        x_lambda,
        phi0_dagger,
        phi0_lambda,
        gaps,
        checks,
    })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub suboptimality: f64,
    /// `λ_prox·D²/(2n)`
    pub bound_squared: f64,
    /// `λ_prox·D/(2n)`
    pub bound_unsquared: f64,
    pub squared_ok: bool,
    pub unsquared_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCertificate {
    pub phi_star: f64,
    /// Distance from the initial point to the approximated maximizer set.
    pub distance: f64,
    pub prox_weight: f64,
    pub rows: Vec<RateRow>,
}

impl RateCertificate {
    pub fn squared_holds(&self) -> bool {
        self.rows.iter().all(|r| r.squared_ok)
    }

    pub fn unsquared_holds(&self) -> bool {
        self.rows.iter().all(|r| r.unsquared_ok)
    }
}

/// Suboptimality of a proximal trajectory against both `O(1/n)` bounds for `n = 1..=horizon`.
///
/// A trajectory that stopped early is extended with its final point.
pub fn imm_rate_certificate(
    traj: &Trajectory,
    game: &GameSpec,
    prox_weight: f64,
    resolution: usize,
    budget: u64,
    horizon: usize,
) -> Result<RateCertificate, CertifyError> {
    let argmax = grid_potential_argmax(game, resolution, budget)?;
    let phi_star = argmax.value.max(argmax.grid_value);
    let x0 = &traj.steps[0].x;
    let mut d2 = dist2(x0, &argmax.point);
    for t in &argmax.ties {
        d2 = d2.min(dist2(x0, t));
    }
    let distance = d2.sqrt();
    let rows = (1..=horizon)
        .map(|n| {
            let step = traj.steps.get(n).unwrap_or_else(|| traj.last());
            let suboptimality = phi_star - step.potential;
            let bound_squared = prox_weight * d2 / (2.0 * n as f64);
            let bound_unsquared = prox_weight * distance / (2.0 * n as f64);
            RateRow {
                n,
                suboptimality,
                bound_squared,
                bound_unsquared,
                squared_ok: suboptimality <= bound_squared + 1e-12,
                unsquared_ok: suboptimality <= bound_unsquared + 1e-12,
            }
        })
        .collect();
    Ok(RateCertificate {
        phi_star,
        distance,
        prox_weight,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub point: Vec<f64>,
    pub resolution: usize,
    pub gaps: Vec<f64>,
    /// Largest best-response gap.
    pub epsilon: f64,
    pub epsilon_tol: f64,
    pub potential: f64,
    pub grid: GridArgmax,
    /// `grid.value − potential`.
    pub potential_gap: f64,
    pub bounds: Vec<BoundCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regularization: Option<RegularizationReport>,
}

impl CertificationReport {
    pub fn is_nash(&self) -> bool {
        self.epsilon <= self.epsilon_tol
    }

    pub fn passed(&self) -> bool {
        self.bounds.iter().all(|b| b.satisfied)
    }
}

/// Full certificate of a point: ε-Nash gaps, the grid maximizer and, for
/// regularized games, the regularization bound.
pub fn certify_point(
    game: &GameSpec,
    point: &[f64],
    resolution: usize,
    budget: u64,
    epsilon_tol: f64,
) -> Result<CertificationReport, CertifyError> {
    let gaps: Vec<f64> = best_responses(game, point, resolution, budget)?
        .into_iter()
        .map(|g| g.gap)
        .collect();
    let epsilon = gaps.iter().copied().fold(0.0, f64::max);
    let potential = game.potential(point)?;
    let grid = grid_potential_argmax(game, resolution, budget)?;
    let mut bounds = vec![BoundCheck::at_most("epsilon_nash", epsilon, epsilon_tol, 0.0)];
    let regularization = if game.lambda() > 0.0 && !game.regularizer().terms.is_empty() {
        let base = game.with_lambda(0.0)?;
        let report = regularization_bound_check(&base, game.regularizer(), game.lambda(), resolution, budget, VALUE_TOL)?;
        bounds.extend(report.checks.iter().cloned());
        Some(report)
    } else {
        None
    };
    Ok(CertificationReport {
        point: point.to_vec(),
        resolution,
        gaps,
        epsilon,
        epsilon_tol,
        potential,
        potential_gap: grid.value - potential,
        grid,
        bounds,
        regularization,
    })
}
