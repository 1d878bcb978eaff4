//! Closed catalog of collective utilities and regularizers.
//!
//! Every collective term is concave, and the only nondifferentiable pieces are
//! absolute values of linear forms. Those are exposed as [`Kink`]s so solvers
//! know exactly where the superdifferential is set-valued.

use serde::{Deserialize, Serialize};

use super::space::StrategySpace;
use super::GameError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CollectiveTerm {
    Constant { c: f64 },
    /// `−coef·(Σ_{k∈coords} x_k − target)²`
    NegQuadraticToTarget { coef: f64, target: f64, coords: Vec<usize> },
    /// `−Σ_{k∈coords} (x_k − d)²`
    NegSqDeviation { d: f64, coords: Vec<usize> },
    /// `−Σ_i Σ_{j<i} ‖w_i − w_j‖₁` over the agents' blocks.
    NegPairwiseL1,
    /// `−|Σ_{k∈coords} x_k|`
    NegAbsSum { coords: Vec<usize> },
}

/// Concave utility shared by all agents: a sum of [`CollectiveTerm`]s.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CollectiveUtility {
    pub terms: Vec<CollectiveTerm>,
}

impl CollectiveUtility {
    pub fn new(terms: Vec<CollectiveTerm>) -> Self {
        Self { terms }
    }

    pub fn value(&self, space: &StrategySpace, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| term_value(t, space, x)).sum()
    }

    /// Gradient of the differentiable terms only; kink terms are left to [`Kink`].
    pub fn add_smooth_gradient(&self, x: &[f64], grad: &mut [f64]) {
        for t in &self.terms {
            match t {
                CollectiveTerm::NegQuadraticToTarget { coef, target, coords } => {
                    let s: f64 = coords.iter().map(|c| x[*c]).sum();
                    let g = -2.0 * coef * (s - target);
                    for c in coords {
                        grad[*c] += g;
                    }
                }
                CollectiveTerm::NegSqDeviation { d, coords } => {
                    for c in coords {
                        grad[*c] += -2.0 * (x[*c] - d);
                    }
                }
                CollectiveTerm::Constant { .. }
                | CollectiveTerm::NegPairwiseL1
                | CollectiveTerm::NegAbsSum { .. } => {}
            }
        }
    }

    pub fn kinks(&self, space: &StrategySpace) -> Vec<Kink> {
        let mut out = Vec::new();
        for t in &self.terms {
            match t {
                CollectiveTerm::NegAbsSum { coords } => out.push(Kink {
                    coeffs: coords.iter().map(|c| (*c, 1.0)).collect(),
                    weight: 1.0,
                }),
                CollectiveTerm::NegPairwiseL1 => {
                    let n = space.num_agents();
                    for i in 0..n {
                        for j in 0..i {
                            let (ri, rj) = (space.range(i), space.range(j));
                            for (ci, cj) in ri.zip(rj) {
                                out.push(Kink {
                                    coeffs: vec![(ci, 1.0), (cj, -1.0)],
                                    weight: 1.0,
                                });
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub(crate) fn validate(&self, space: &StrategySpace) -> Result<(), GameError> {
        let n = space.dim();
        for (t_idx, t) in self.terms.iter().enumerate() {
            let path = format!("collective[{t_idx}]");
            let check_coords = |coords: &[usize]| -> Result<(), GameError> {
                if coords.is_empty() {
                    return Err(GameError::invalid(format!("{path}.coords"), "no coordinates selected"));
                }
                if let Some(c) = coords.iter().find(|c| **c >= n) {
                    return Err(GameError::invalid(
                        format!("{path}.coords"),
                        format!("coordinate {c} out of range (dimension {n})"),
                    ));
                }
                Ok(())
            };
            match t {
                CollectiveTerm::Constant { c } => finite(*c, &format!("{path}.c"))?,
                CollectiveTerm::NegQuadraticToTarget { coef, target, coords } => {
                    finite(*target, &format!("{path}.target"))?;
                    if !(coef.is_finite() && *coef >= 0.0) {
                        return Err(GameError::invalid(format!("{path}.coef"), "coefficient must be ≥ 0 for concavity"));
                    }
                    check_coords(coords)?;
                }
                CollectiveTerm::NegSqDeviation { d, coords } => {
                    finite(*d, &format!("{path}.d"))?;
                    check_coords(coords)?;
                }
                CollectiveTerm::NegAbsSum { coords } => check_coords(coords)?,
                CollectiveTerm::NegPairwiseL1 => {
                    let dims: Vec<usize> = space.blocks().iter().map(|b| b.dim()).collect();
                    if dims.windows(2).any(|w| w[0] != w[1]) {
                        return Err(GameError::invalid(
                            path,
                            "pairwise L1 distance needs all agent blocks to share one dimension",
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

fn term_value(t: &CollectiveTerm, space: &StrategySpace, x: &[f64]) -> f64 {
    match t {
        CollectiveTerm::Constant { c } => *c,
        CollectiveTerm::NegQuadraticToTarget { coef, target, coords } => {
            let s: f64 = coords.iter().map(|c| x[*c]).sum();
            -coef * (s - target) * (s - target)
        }
        CollectiveTerm::NegSqDeviation { d, coords } => {
            -coords.iter().map(|c| (x[*c] - d) * (x[*c] - d)).sum::<f64>()
        }
        CollectiveTerm::NegPairwiseL1 => {
            let n = space.num_agents();
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..i {
                    for (ci, cj) in space.range(i).zip(space.range(j)) {
                        total += (x[ci] - x[cj]).abs();
                    }
                }
            }
            -total
        }
        CollectiveTerm::NegAbsSum { coords } => -coords.iter().map(|c| x[*c]).sum::<f64>().abs(),
    }
}

fn finite(v: f64, path: &str) -> Result<(), GameError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(GameError::invalid(path, "value is not finite"))
    }
}

/// A term `−weight·|Σ coeff·x|`: the nonsmooth part of the collective utility.
#[derive(Debug, Clone, PartialEq)]
pub struct Kink {
    pub coeffs: Vec<(usize, f64)>,
    pub weight: f64,
}

impl Kink {
    pub fn level(&self, x: &[f64]) -> f64 {
        self.coeffs.iter().map(|(c, a)| a * x[*c]).sum()
    }

    pub fn touches(&self, coord: usize) -> bool {
        self.coeffs.iter().any(|(c, _)| *c == coord)
    }

    /// Multiplier `u` of the superdifferential element `−weight·u·a`, `u = sign(level)` off the kink.
    pub fn multiplier(&self, x: &[f64]) -> Option<f64> {
        let s = self.level(x);
        if s > 0.0 {
            Some(1.0)
        } else if s < 0.0 {
            Some(-1.0)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegularizerTerm {
    /// `Σ_k weights_k·(x_k − center_k)²` over all coordinates.
    WeightedSqNorm { center: Vec<f64>, weights: Vec<f64> },
    /// `Σ_i coefficients_i·x_{i,coordinate}`: per-agent linear incentive.
    LinearIncentive {
        coefficients: Vec<f64>,
        #[serde(default)]
        coordinate: usize,
    },
}

/// Convex penalty `H` subtracted as `λ·H` from the collective utility.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Regularizer {
    pub terms: Vec<RegularizerTerm>,
}

impl Regularizer {
    pub fn new(terms: Vec<RegularizerTerm>) -> Self {
        Self { terms }
    }

    /// `Σ ‖x_k‖²` with unit weights around the origin.
    pub fn squared_norm(dim: usize) -> Self {
        Self::new(vec![RegularizerTerm::WeightedSqNorm {
            center: vec![0.0; dim],
            weights: vec![1.0; dim],
        }])
    }

    pub fn value(&self, space: &StrategySpace, x: &[f64]) -> f64 {
        let mut total = 0.0;
        for t in &self.terms {
            match t {
                RegularizerTerm::WeightedSqNorm { center, weights } => {
                    for ((xv, c), w) in x.iter().zip(center).zip(weights) {
                        total += w * (xv - c) * (xv - c);
                    }
                }
                RegularizerTerm::LinearIncentive { coefficients, coordinate } => {
                    for (i, lam) in coefficients.iter().enumerate() {
                        total += lam * x[space.range(i).start + coordinate];
                    }
                }
            }
        }
        total
    }

    pub fn add_gradient(&self, space: &StrategySpace, x: &[f64], scale: f64, grad: &mut [f64]) {
        for t in &self.terms {
            match t {
                RegularizerTerm::WeightedSqNorm { center, weights } => {
                    for (k, (c, w)) in center.iter().zip(weights).enumerate() {
                        grad[k] += scale * 2.0 * w * (x[k] - c);
                    }
                }
                RegularizerTerm::LinearIncentive { coefficients, coordinate } => {
                    for (i, lam) in coefficients.iter().enumerate() {
                        grad[space.range(i).start + coordinate] += scale * lam;
                    }
                }
            }
        }
    }

    /// True when some term is strictly convex in every coordinate.
    pub fn is_strictly_convex(&self) -> bool {
        self.terms
            .iter()
            .any(|t| matches!(t, RegularizerTerm::WeightedSqNorm { weights, .. } if weights.iter().all(|w| *w > 0.0)))
    }

    pub(crate) fn validate(&self, space: &StrategySpace) -> Result<(), GameError> {
        let n = space.dim();
        for (t_idx, t) in self.terms.iter().enumerate() {
            let path = format!("regularizer.terms[{t_idx}]");
            match t {
                RegularizerTerm::WeightedSqNorm { center, weights } => {
                    if center.len() != n {
                        return Err(GameError::invalid(
                            format!("{path}.center"),
                            format!("expected {n} entries, got {}", center.len()),
                        ));
                    }
                    if weights.len() != n {
                        return Err(GameError::invalid(
                            format!("{path}.weights"),
                            format!("expected {n} entries, got {}", weights.len()),
                        ));
                    }
                    if let Some(k) = center.iter().position(|c| !c.is_finite()) {
                        return Err(GameError::invalid(format!("{path}.center[{k}]"), "value is not finite"));
                    }
                    if let Some(k) = weights.iter().position(|w| !(w.is_finite() && *w > 0.0)) {
                        return Err(GameError::invalid(
                            format!("{path}.weights[{k}]"),
                            "weights must be > 0 for strict convexity",
                        ));
                    }
                }
                RegularizerTerm::LinearIncentive { coefficients, coordinate } => {
                    if coefficients.len() != space.num_agents() {
                        return Err(GameError::invalid(
                            format!("{path}.coefficients"),
                            format!("expected one coefficient per agent ({}), got {}", space.num_agents(), coefficients.len()),
                        ));
                    }
                    if let Some(k) = coefficients.iter().position(|c| !c.is_finite()) {
                        return Err(GameError::invalid(format!("{path}.coefficients[{k}]"), "value is not finite"));
                    }
                    if let Some(i) = space.blocks().iter().position(|b| *coordinate >= b.dim()) {
                        return Err(GameError::invalid(
                            format!("{path}.coordinate"),
                            format!("agent {i} has no coordinate {coordinate}"),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}
