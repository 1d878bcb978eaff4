use serde::{Deserialize, Serialize};
use std::ops::{Deref, DerefMut};

use super::GameError;

/// Slack used when checking that a point lies on a lattice or inside a box.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Grid `origin + k·step` applied to every coordinate of a block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lattice {
    pub origin: f64,
    pub step: f64,
}

impl Lattice {
    /// Index range of lattice points inside `[lo, hi]`.
    fn index_range(&self, lo: f64, hi: f64) -> (f64, f64) {
        let k_min = ((lo - self.origin) / self.step - FEASIBILITY_TOL).ceil();
        let k_max = ((hi - self.origin) / self.step + FEASIBILITY_TOL).floor();
        (k_min, k_max)
    }

    /// Nearest lattice point in `[lo, hi]`; exact halves round toward `lo`.
    pub fn snap(&self, x: f64, lo: f64, hi: f64) -> f64 {
        let (k_min, k_max) = self.index_range(lo, hi);
        let k = (x - self.origin) / self.step;
        let floor = k.floor();
        let k = if k - floor > 0.5 { floor + 1.0 } else { floor };
        self.origin + k.clamp(k_min, k_max) * self.step
    }

    pub fn points(&self, lo: f64, hi: f64) -> Vec<f64> {
        let (k_min, k_max) = self.index_range(lo, hi);
        let mut out = Vec::new();
        let mut k = k_min;
        while k <= k_max {
            out.push(self.origin + k * self.step);
            k += 1.0;
        }
        out
    }
}

/// One agent's strategy set: a box, optionally restricted to a lattice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Lattice>,
}

impl Block {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo],
            hi: vec![hi],
            lattice: None,
        }
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo; dim],
            hi: vec![hi; dim],
            lattice: None,
        }
    }

    pub fn with_lattice(mut self, origin: f64, step: f64) -> Self {
        self.lattice = Some(Lattice { origin, step });
        self
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub(crate) fn validate(&self, path: &str) -> Result<(), GameError> {
        if self.lo.is_empty() {
            return Err(GameError::invalid(format!("{path}.lo"), "block needs at least one coordinate"));
        }
        if self.lo.len() != self.hi.len() {
            return Err(GameError::invalid(
                format!("{path}.hi"),
                format!("expected {} bounds, got {}", self.lo.len(), self.hi.len()),
            ));
        }
        for (k, (lo, hi)) in self.lo.iter().zip(&self.hi).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(GameError::invalid(format!("{path}.lo[{k}]"), "bounds must be finite"));
            }
            if lo > hi {
                return Err(GameError::invalid(
                    format!("{path}.lo[{k}]"),
                    format!("lower bound {lo} exceeds upper bound {hi}"),
                ));
            }
        }
        if let Some(lat) = &self.lattice {
            if !(lat.step.is_finite() && lat.step > 0.0 && lat.origin.is_finite()) {
                return Err(GameError::invalid(format!("{path}.lattice.step"), "lattice step must be > 0"));
            }
            for (k, (lo, hi)) in self.lo.iter().zip(&self.hi).enumerate() {
                let (a, b) = lat.index_range(*lo, *hi);
                if a > b {
                    return Err(GameError::invalid(
                        format!("{path}.lattice"),
                        format!("no lattice point inside [{lo}, {hi}] for coordinate {k}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Product of the agents' blocks, laid out as one flat coordinate vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategySpace {
    blocks: Vec<Block>,
    offsets: Vec<usize>,
}

impl StrategySpace {
    pub fn new(blocks: Vec<Block>) -> Result<Self, GameError> {
        for (i, b) in blocks.iter().enumerate() {
            b.validate(&format!("agents[{i}].block"))?;
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for b in &blocks {
            acc += b.dim();
            offsets.push(acc);
        }
        Ok(Self { blocks, offsets })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn num_agents(&self) -> usize {
        self.blocks.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    /// Coordinate range of agent `i` inside the flat vector.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Agent owning flat coordinate `c`.
    pub fn owner(&self, c: usize) -> usize {
        self.offsets.partition_point(|o| *o <= c) - 1
    }

    pub fn lo(&self, c: usize) -> f64 {
        let i = self.owner(c);
        self.blocks[i].lo[c - self.offsets[i]]
    }

    pub fn hi(&self, c: usize) -> f64 {
        let i = self.owner(c);
        self.blocks[i].hi[c - self.offsets[i]]
    }

    pub fn lattice_of(&self, c: usize) -> Option<Lattice> {
        self.blocks[self.owner(c)].lattice
    }

    pub fn has_lattice(&self) -> bool {
        self.blocks.iter().any(|b| b.lattice.is_some())
    }

    pub fn project_coord(&self, c: usize, v: f64) -> f64 {
        let (lo, hi) = (self.lo(c), self.hi(c));
        match self.lattice_of(c) {
            Some(lat) => lat.snap(v, lo, hi),
            None => v.clamp(lo, hi),
        }
    }

    /// Clamp to the box, then snap lattice coordinates to the nearest feasible point.
    pub fn project(&self, raw: &[f64]) -> Result<JointStrategy, GameError> {
        if raw.len() != self.dim() {
            return Err(GameError::Dimension {
                expected: self.dim(),
                got: raw.len(),
            });
        }
        Ok(JointStrategy(
            raw.iter()
                .enumerate()
                .map(|(c, v)| self.project_coord(c, *v))
                .collect(),
        ))
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(c, v)| {
                let inside = *v >= self.lo(c) - FEASIBILITY_TOL && *v <= self.hi(c) + FEASIBILITY_TOL;
                let on_grid = match self.lattice_of(c) {
                    Some(lat) => (lat.snap(*v, self.lo(c), self.hi(c)) - v).abs() <= FEASIBILITY_TOL,
                    None => true,
                };
                inside && on_grid
            })
    }

    /// Error unless `x` is a feasible point.
    pub fn check_feasible(&self, x: &[f64]) -> Result<(), GameError> {
        if x.len() != self.dim() {
            return Err(GameError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        if let Some(c) = (0..x.len()).find(|&c| !self.contains_coord(c, x[c])) {
            return Err(GameError::Infeasible {
                coordinate: c,
                value: x[c],
            });
        }
        Ok(())
    }

    fn contains_coord(&self, c: usize, v: f64) -> bool {
        let (lo, hi) = (self.lo(c), self.hi(c));
        v.is_finite()
            && v >= lo - FEASIBILITY_TOL
            && v <= hi + FEASIBILITY_TOL
            && self
                .lattice_of(c)
                .is_none_or(|lat| (lat.snap(v, lo, hi) - v).abs() <= FEASIBILITY_TOL)
    }

    /// Feasible one-step moves of agent `i` from `x`: stay, then ±step along each axis.
    pub fn lattice_moves(&self, i: usize, x: &[f64]) -> Vec<Vec<f64>> {
        let range = self.range(i);
        let block = &self.blocks[i];
        let step = block.lattice.map(|l| l.step).unwrap_or(1.0);
        let current: Vec<f64> = x[range.clone()].to_vec();
        let mut out = vec![current.clone()];
        for k in 0..block.dim() {
            for dir in [1.0, -1.0] {
                let mut cand = current.clone();
                cand[k] += dir * step;
                if cand[k] >= block.lo[k] - FEASIBILITY_TOL && cand[k] <= block.hi[k] + FEASIBILITY_TOL {
                    out.push(cand);
                }
            }
        }
        out
    }
}

/// A point of the joint strategy space (all agents' coordinates, flattened).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointStrategy(pub Vec<f64>);

impl JointStrategy {
    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for JointStrategy {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for JointStrategy {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointStrategy {
    fn from(v: Vec<f64>) -> Self {
        JointStrategy(v)
    }
}
