//! Derivative-free maximization of concave functions over intervals and boxes.
//!
//! One-dimensional problems use a coarse grid scan, golden-section search inside
//! the winning bracket, and a parabolic polish. Boxes use cyclic coordinate
//! ascent with a secant polish on kink-free coordinates; when a pass stalls on a
//! kink ridge, an ascent direction is taken from the minimum-norm element of the
//! ε-superdifferential and followed by a line search.

use crate::game::{GameError, GameSpec, Kink};

/// Points in the initial scan of every one-dimensional search.
pub const GRID_POINTS: usize = 64;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const TIE_REL: f64 = 1e-14;

/// Result of a one-dimensional maximization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneDim {
    pub arg: f64,
    pub value: f64,
}

fn key(v: f64) -> f64 {
    if v.is_nan() {
        f64::NEG_INFINITY
    } else {
        v
    }
}

/// Maximize a concave `f` over `[lo, hi]`.
///
/// `current` is kept whenever it ties the best value found. `breakpoints` are
/// locations where `f` may have a kink; they are evaluated exactly.
pub fn maximize_1d<E>(
    mut f: impl FnMut(f64) -> Result<f64, E>,
    lo: f64,
    hi: f64,
    current: Option<f64>,
    breakpoints: &[f64],
) -> Result<OneDim, E> {
    if hi <= lo {
        return Ok(OneDim { arg: lo, value: f(lo)? });
    }
    // (point, value, priority): lower priority wins among near-identical points
    let mut cands: Vec<(f64, f64, u8)> = Vec::with_capacity(GRID_POINTS + 16);
    let span = hi - lo;
    let h = span / (GRID_POINTS - 1) as f64;
    let mut best_k = 0;
    for k in 0..GRID_POINTS {
        let t = if k == GRID_POINTS - 1 { hi } else { lo + h * k as f64 };
        let v = f(t)?;
        if key(v) > key(cands.get(best_k).map_or(f64::NEG_INFINITY, |c| c.1)) {
            best_k = k;
        }
        cands.push((t, v, 3));
    }
    let mut a = cands[best_k.saturating_sub(1)].0;
    let mut b = cands[(best_k + 1).min(GRID_POINTS - 1)].0;

    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = key(f(c)?);
    let mut fd = key(f(d)?);
    for _ in 0..200 {
        if b - a <= 1e-13 * (1.0 + a.abs().max(b.abs())) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = key(f(c)?);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = key(f(d)?);
        }
    }
    let (tg, vg) = if fc >= fd { (c, fc) } else { (d, fd) };
    cands.push((tg, vg, 2));

    // a parabola through a wide stencil recovers quadratic maximizers to rounding
    let s0 = (tg - h).max(lo);
    let s2 = (tg + h).min(hi);
    let s1 = if tg - s0 < 0.25 * h || s2 - tg < 0.25 * h { 0.5 * (s0 + s2) } else { tg };
    if s0 < s1 && s1 < s2 {
        let (f0, f1, f2) = (key(f(s0)?), key(f(s1)?), key(f(s2)?));
        let (d0, d2) = (s1 - s0, s1 - s2);
        let denom = d0 * (f1 - f2) - d2 * (f1 - f0);
        let numer = d0 * d0 * (f1 - f2) - d2 * d2 * (f1 - f0);
        if denom != 0.0 && denom.is_finite() && numer.is_finite() {
            let t = s1 - 0.5 * numer / denom;
            if t >= lo && t <= hi {
                let v = f(t)?;
                cands.push((t, v, 0));
            }
        }
    }
    for &t in breakpoints {
        if t >= lo && t <= hi {
            let v = f(t)?;
            cands.push((t, v, 1));
        }
    }
    let current = match current {
        Some(t) if t >= lo && t <= hi => {
            let v = f(t)?;
            cands.push((t, v, 0));
            Some((t, v))
        }
        _ => None,
    };
    let mut chosen = select(&cands, current, 0.5 * h);
    if let (Some((t0, _)), true) = (current, chosen.plateau) {
        // walk from the chosen tied point toward `current` to the edge of the tie set
        let tie = TIE_REL * chosen.best.abs().max(1.0);
        let (mut inside, mut outside) = (chosen.arg, t0);
        for &(t, v, _) in &cands {
            if key(v) < chosen.best - tie && (t - inside) * (t0 - inside) > 0.0 && (t - inside).abs() < (outside - inside).abs() {
                outside = t;
            }
        }
        let mut inside_val = chosen.value;
        for _ in 0..100 {
            let mid = 0.5 * (inside + outside);
            if mid == inside || mid == outside {
                break;
            }
            let v = f(mid)?;
            if key(v) >= chosen.best - tie {
                inside = mid;
                inside_val = v;
            } else {
                outside = mid;
            }
        }
        chosen.arg = inside;
        chosen.value = inside_val;
    }
    Ok(OneDim {
        arg: chosen.arg,
        value: chosen.value,
    })
}

struct Selection {
    arg: f64,
    value: f64,
    best: f64,
    /// The tie set spans distinct points rather than one numerically blurred maximizer.
    plateau: bool,
}

/// Best candidate: the current point if it ties, otherwise the most accurate of
/// a cluster of near-identical winners, otherwise the tied point nearest `current`.
///
/// Tied points spread wider than `resolution` form a plateau; closer ones are
/// rounding blur around a single maximizer.
fn select(cands: &[(f64, f64, u8)], current: Option<(f64, f64)>, resolution: f64) -> Selection {
    let best = cands.iter().map(|c| key(c.1)).fold(f64::NEG_INFINITY, f64::max);
    let tie = TIE_REL * best.abs().max(1.0);
    if let Some((t, v)) = current {
        if key(v) >= best - tie {
            return Selection {
                arg: t,
                value: v,
                best,
                plateau: false,
            };
        }
    }
    let tied: Vec<&(f64, f64, u8)> = cands.iter().filter(|c| key(c.1) >= best - tie).collect();
    let lo = tied.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let hi = tied.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let plateau = hi - lo > resolution;
    let chosen = if !plateau {
        tied.iter()
            .min_by(|x, y| x.2.cmp(&y.2).then(key(y.1).total_cmp(&key(x.1))))
            .expect("at least one candidate")
    } else {
        let anchor = current.map(|c| c.0).unwrap_or(lo);
        tied.iter()
            .min_by(|x, y| {
                (x.0 - anchor)
                    .abs()
                    .total_cmp(&(y.0 - anchor).abs())
                    .then(x.0.total_cmp(&y.0))
            })
            .expect("at least one candidate")
    };
    Selection {
        arg: chosen.0,
        value: chosen.1,
        best,
        plateau,
    }
}

/// Which function of the game a box search maximizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Target {
    Potential,
    Utility(usize),
}

/// `target(x) − prox_weight·Σ_{c∈free} (x_c − center_c)²` over the `free` coordinates.
pub(crate) struct BoxProblem<'a> {
    pub game: &'a GameSpec,
    pub target: Target,
    pub prox: Option<(f64, &'a [f64])>,
    pub free: Vec<usize>,
    /// Search bounds per coordinate; default to the strategy box.
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum MaximizeError {
    Game(GameError),
    NotConverged { passes: usize, displacement: f64 },
    NonFinite { point: Vec<f64> },
    Unsupported(String),
}

impl From<GameError> for MaximizeError {
    fn from(e: GameError) -> Self {
        MaximizeError::Game(e)
    }
}

impl std::fmt::Display for MaximizeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaximizeError::Game(e) => write!(f, "{e}"),
            MaximizeError::NotConverged { passes, displacement } => write!(
                f,
                "inner maximizer did not converge after {passes} passes (last displacement {displacement:.3e})"
            ),
            MaximizeError::NonFinite { point } => write!(f, "objective is not finite at {point:?}"),
            MaximizeError::Unsupported(msg) => write!(f, "{msg}"),
        }
    }
}

impl<'a> BoxProblem<'a> {
    pub fn new(game: &'a GameSpec, target: Target, prox: Option<(f64, &'a [f64])>, free: Vec<usize>) -> Self {
        let space = game.space();
        Self {
            game,
            target,
            prox,
            free,
            lo: (0..game.dim()).map(|c| space.lo(c)).collect(),
            hi: (0..game.dim()).map(|c| space.hi(c)).collect(),
        }
    }

    /// Shrink the search to `[center − radius, center + radius]` within the box.
    pub fn around(mut self, center: &[f64], radius: &[f64]) -> Self {
        for c in 0..self.lo.len() {
            self.lo[c] = self.lo[c].max(center[c] - radius[c]);
            self.hi[c] = self.hi[c].min(center[c] + radius[c]);
        }
        self
    }

    pub fn value(&self, x: &[f64]) -> Result<f64, GameError> {
        let base = match self.target {
            Target::Potential => self.game.potential(x)?,
            Target::Utility(i) => self.game.utility(i, x)?,
        };
        Ok(match self.prox {
            Some((w, center)) => base - w * self.free.iter().map(|&c| (x[c] - center[c]).powi(2)).sum::<f64>(),
            None => base,
        })
    }

    fn smooth_gradient(&self, x: &[f64]) -> Result<Vec<f64>, GameError> {
        let mut g = vec![0.0; x.len()];
        match self.target {
            Target::Potential => self.game.add_potential_smooth_gradient(x, 1.0, &mut g)?,
            Target::Utility(i) => self.game.add_utility_smooth_gradient(i, x, &mut g)?,
        }
        if let Some((w, center)) = self.prox {
            for &c in &self.free {
                g[c] -= 2.0 * w * (x[c] - center[c]);
            }
        }
        Ok(g)
    }

    fn kink_scale(&self) -> f64 {
        match self.target {
            Target::Potential => 1.0,
            Target::Utility(i) => self.game.weight(i),
        }
    }

    fn relevant_kinks(&self) -> Vec<&Kink> {
        self.game
            .kinks()
            .iter()
            .filter(|k| self.free.iter().any(|&c| k.touches(c)))
            .collect()
    }

    /// Values of `x_c` at which some kink through coordinate `c` switches sign.
    fn breakpoints(&self, x: &[f64], c: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for k in self.game.kinks() {
            if let Some((_, a)) = k.coeffs.iter().find(|(cc, _)| *cc == c) {
                let rest = k.level(x) - a * x[c];
                out.push(-rest / a);
            }
        }
        out
    }

    fn line(&self, x: &[f64], d: &[f64], t: f64) -> Vec<f64> {
        let mut y = x.to_vec();
        for &c in &self.free {
            y[c] = (x[c] + t * d[c]).clamp(self.lo[c], self.hi[c]);
        }
        y
    }
}

/// Cyclic coordinate ascent on `problem` starting from `x` (updated in place).
///
/// Returns the number of passes used.
pub(crate) fn maximize_box(problem: &BoxProblem, x: &mut [f64], tol: f64, max_passes: usize) -> Result<usize, MaximizeError> {
    let mut value = problem.value(x)?;
    if !value.is_finite() {
        return Err(MaximizeError::NonFinite { point: x.to_vec() });
    }
    let mut displacement = f64::INFINITY;
    for pass in 1..=max_passes {
        let start = x.to_vec();
        for &c in &problem.free {
            let breaks = problem.breakpoints(x, c);
            let mut y = x.to_vec();
            let best = maximize_1d(
                |t| {
                    y[c] = t;
                    problem.value(&y)
                },
                problem.lo[c],
                problem.hi[c],
                Some(x[c]),
                &breaks,
            )?;
            x[c] = best.arg;
            value = best.value;
            if let Some((t, v)) = secant_polish(problem, x, c, value)? {
                x[c] = t;
                value = v;
            }
        }
        displacement = super::sup_distance(&start, x);
        if displacement >= tol && problem.free.len() > 1 {
            let d: Vec<f64> = x.iter().zip(&start).map(|(a, b)| a - b).collect();
            if let Some((y, v)) = line_search(problem, x, &d, value)? {
                x.copy_from_slice(&y);
                value = v;
            }
        }
        if displacement < tol {
            match escape(problem, x, value, tol)? {
                Some((y, v)) if super::sup_distance(&y, x) >= tol => {
                    x.copy_from_slice(&y);
                    value = v;
                }
                Some((y, _)) => {
                    x.copy_from_slice(&y);
                    return Ok(pass);
                }
                None => return Ok(pass),
            }
        }
    }
    Err(MaximizeError::NotConverged {
        passes: max_passes,
        displacement,
    })
}

/// Secant step on `∂f/∂x_c` for a coordinate no kink touches.
///
/// Kept only if it lowers the partial derivative without losing value.
fn secant_polish(problem: &BoxProblem, x: &[f64], c: usize, value: f64) -> Result<Option<(f64, f64)>, GameError> {
    let (lo, hi, t) = (problem.lo[c], problem.hi[c], x[c]);
    if t <= lo || t >= hi || problem.game.kinks().iter().any(|k| k.touches(c)) {
        return Ok(None);
    }
    let h = 2f64.powi((1.0 + t.abs()).log2().ceil() as i32 - 20);
    let (a, b) = ((t - h).max(lo), (t + h).min(hi));
    let mut y = x.to_vec();
    let mut partial = |at: f64| -> Result<f64, GameError> {
        y[c] = at;
        Ok(problem.smooth_gradient(&y)?[c])
    };
    let (ga, gb, g0) = (partial(a)?, partial(b)?, partial(t)?);
    let slope = (gb - ga) / (b - a);
    if !(slope < 0.0 && slope.is_finite() && g0.is_finite()) {
        return Ok(None);
    }
    let s = a - ga / slope;
    if !(s >= lo && s <= hi) || s == t {
        return Ok(None);
    }
    let gs = partial(s)?;
    let mut z = x.to_vec();
    z[c] = s;
    let v = problem.value(&z)?;
    if key(v) >= value - TIE_REL * value.abs().max(1.0) && gs.abs() <= g0.abs() {
        return Ok(Some((s, v)));
    }
    Ok(None)
}

/// Maximize along `x + t·d` inside the box; `Some` only on strict improvement.
fn line_search(problem: &BoxProblem, x: &[f64], d: &[f64], value: f64) -> Result<Option<(Vec<f64>, f64)>, GameError> {
    let mut t_max = f64::INFINITY;
    for &c in &problem.free {
        if d[c] > 0.0 {
            t_max = t_max.min((problem.hi[c] - x[c]) / d[c]);
        } else if d[c] < 0.0 {
            t_max = t_max.min((problem.lo[c] - x[c]) / d[c]);
        }
    }
    if !(t_max.is_finite() && t_max > 0.0) {
        return Ok(None);
    }
    let breaks: Vec<f64> = problem
        .relevant_kinks()
        .iter()
        .filter_map(|k| {
            let slope: f64 = k.coeffs.iter().map(|(c, a)| a * d[*c]).sum();
            (slope != 0.0).then(|| -k.level(x) / slope)
        })
        .filter(|t| *t > 0.0)
        .collect();
    let best = maximize_1d(|t| problem.value(&problem.line(x, d, t)), 0.0, t_max, Some(0.0), &breaks)?;
    if best.arg > 0.0 && best.value > value {
        return Ok(Some((problem.line(x, d, best.arg), best.value)));
    }
    Ok(None)
}

/// Ascent step off a kink ridge where single-coordinate moves cannot improve.
fn escape(problem: &BoxProblem, x: &[f64], value: f64, tol: f64) -> Result<Option<(Vec<f64>, f64)>, GameError> {
    let kinks = problem.relevant_kinks();
    if kinks.is_empty() {
        return Ok(None);
    }
    let n = x.len();
    let smooth = problem.smooth_gradient(x)?;
    let scale = problem.kink_scale();
    let is_free: Vec<bool> = (0..n).map(|c| problem.free.contains(&c)).collect();
    let at_lo: Vec<bool> = (0..n).map(|c| x[c] <= problem.lo[c] + 1e-12 * (1.0 + problem.lo[c].abs())).collect();
    let at_hi: Vec<bool> = (0..n).map(|c| x[c] >= problem.hi[c] - 1e-12 * (1.0 + problem.hi[c].abs())).collect();
    let project = |v: &mut [f64]| {
        for c in 0..n {
            if !is_free[c] {
                v[c] = 0.0;
            } else if at_lo[c] && !at_hi[c] {
                v[c] = v[c].max(0.0);
            } else if at_hi[c] && !at_lo[c] {
                v[c] = v[c].min(0.0);
            } else if at_lo[c] && at_hi[c] {
                v[c] = 0.0;
            }
        }
    };
    let levels: Vec<f64> = kinks.iter().map(|k| k.level(x)).collect();
    for delta in [1e-4, 1e-7, 10.0 * tol] {
        let active: Vec<usize> = (0..kinks.len()).filter(|&k| levels[k].abs() <= delta).collect();
        if active.is_empty() {
            continue;
        }
        let mut g0 = smooth.clone();
        for (k, kink) in kinks.iter().enumerate() {
            if !active.contains(&k) {
                let s = levels[k].signum();
                for (c, a) in &kink.coeffs {
                    g0[*c] -= kink.weight * scale * s * a;
                }
            }
        }
        let mut u = vec![0.0; active.len()];
        let direction = |u: &[f64]| {
            let mut v = g0.clone();
            for (j, &k) in active.iter().enumerate() {
                for (c, a) in &kinks[k].coeffs {
                    v[*c] -= kinks[k].weight * scale * u[j] * a;
                }
            }
            project(&mut v);
            v
        };
        let norm2 = |v: &[f64]| v.iter().map(|e| e * e).sum::<f64>();
        for _ in 0..100 {
            let before = u.clone();
            for j in 0..u.len() {
                let mut trial = u.clone();
                let best = maximize_1d(
                    |s| {
                        trial[j] = s;
                        Ok::<f64, GameError>(-norm2(&direction(&trial)))
                    },
                    -1.0,
                    1.0,
                    Some(u[j]),
                    &[],
                )?;
                u[j] = best.arg;
            }
            if super::sup_distance(&before, &u) <= 1e-12 {
                break;
            }
        }
        let d = direction(&u);
        if d.iter().all(|v| v.abs() <= 1e-12) {
            continue;
        }
        if let Some(found) = line_search(problem, x, &d, value)? {
            return Ok(Some(found));
        }
    }
    Ok(None)
}
