//! Prospect-theoretic evaluation of finite lotteries.
//!
//! A reward lottery is scored by distorting the cumulative outcome
//! probabilities with a weighting function `π` and transforming each reward
//! with a value function `V`:
//!
//! ```text
//! q̃_1 = π(q_1),   q̃_j = π(q_1 + … + q_j) − π(q_1 + … + q_{j−1})
//! value = Σ_j q̃_j · V(R_j)
//! ```
//!
//! Rewards must be listed in increasing order of attractiveness before the
//! cumulative weighting is applied. [`pt_expected_reward`] takes care of that
//! ordering when rewards come from a reward function of the outcome.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `Σ q = 1`.
pub const PROB_SUM_TOL: f64 = 1e-12;
/// Tolerance on the weighting endpoints `π(0) = 0`, `π(1) = 1`.
pub const ENDPOINT_TOL: f64 = 1e-9;
/// Tolerance on continuity of piecewise value functions at breakpoints.
pub const CONTINUITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PtError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("reward undefined at outcome {index} (xi = {xi}, reward = {reward}, value = {value})")]
    Domain {
        index: usize,
        xi: f64,
        reward: f64,
        value: f64,
    },
}

impl PtError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        PtError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefix the field path of a validation error, e.g. `probs` → `distribution.probs`.
    pub fn within(self, parent: &str) -> Self {
        match self {
            PtError::Invalid { field, message } => PtError::Invalid {
                field: if field.is_empty() {
                    parent.to_string()
                } else {
                    format!("{parent}.{field}")
                },
                message,
            },
            other => other,
        }
    }
}

/// Finite support `ξ_1 < … < ξ_M` with probabilities `q_1..q_M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeDistribution {
    pub support: Vec<f64>,
    pub probs: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self, PtError> {
        let dist = Self { support, probs };
        dist.validate()?;
        Ok(dist)
    }

    /// Single outcome with probability one.
    pub fn degenerate(xi: f64) -> Self {
        Self {
            support: vec![xi],
            probs: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn validate(&self) -> Result<(), PtError> {
        if self.support.is_empty() {
            return Err(PtError::invalid("support", "at least one outcome is required"));
        }
        if self.support.len() != self.probs.len() {
            return Err(PtError::invalid(
                "probs",
                format!(
                    "expected {} probabilities, got {}",
                    self.support.len(),
                    self.probs.len()
                ),
            ));
        }
        if let Some(i) = self.support.iter().position(|v| !v.is_finite()) {
            return Err(PtError::invalid(format!("support[{i}]"), "outcome is not finite"));
        }
        if let Some(i) = self.support.windows(2).position(|w| w[0] >= w[1]) {
            return Err(PtError::invalid(
                format!("support[{}]", i + 1),
                "outcomes must be strictly increasing",
            ));
        }
        if let Some(i) = self
            .probs
            .iter()
            .position(|p| !p.is_finite() || *p < 0.0 || *p > 1.0)
        {
            return Err(PtError::invalid(
                format!("probs[{i}]"),
                "probability must lie in [0, 1]",
            ));
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(PtError::invalid(
                "probs",
                format!("probabilities sum to {total}, expected 1"),
            ));
        }
        Ok(())
    }

    /// Plain (undistorted) mean of the outcome.
    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(x, p)| x * p).sum()
    }
}

/// Probability weighting function `π : [0,1] → [0,1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightingFunction {
    #[default]
    Identity,
    /// `π(p) = exp(−(−ln p)^α)`.
    Prelec { alpha: f64 },
    /// Linear interpolation between `(p, π(p))` knots covering `[0, 1]`.
    Tabulated { knots: Vec<(f64, f64)> },
}

impl WeightingFunction {
    pub fn eval(&self, p: f64) -> f64 {
        let p = p.clamp(0.0, 1.0);
        match self {
            WeightingFunction::Identity => p,
            WeightingFunction::Prelec { alpha } => {
                if p <= 0.0 {
                    0.0
                } else if p >= 1.0 {
                    1.0
                } else {
                    (-(-p.ln()).powf(*alpha)).exp()
                }
            }
            WeightingFunction::Tabulated { knots } => {
                let i = knots.partition_point(|k| k.0 <= p);
                if i == 0 {
                    return knots[0].1;
                }
                if i >= knots.len() {
                    return knots[knots.len() - 1].1;
                }
                let (p0, v0) = knots[i - 1];
                let (p1, v1) = knots[i];
                v0 + (v1 - v0) * (p - p0) / (p1 - p0)
            }
        }
    }

    pub fn validate(&self) -> Result<(), PtError> {
        match self {
            WeightingFunction::Identity => Ok(()),
            WeightingFunction::Prelec { alpha } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return Err(PtError::invalid("alpha", "Prelec exponent must be > 0"));
                }
                Ok(())
            }
            WeightingFunction::Tabulated { knots } => {
                if knots.len() < 2 {
                    return Err(PtError::invalid("knots", "at least two knots are required"));
                }
                if let Some(i) = knots
                    .iter()
                    .position(|(p, v)| !p.is_finite() || !v.is_finite())
                {
                    return Err(PtError::invalid(format!("knots[{i}]"), "knot is not finite"));
                }
                if let Some(i) = knots.windows(2).position(|w| w[0].0 >= w[1].0) {
                    return Err(PtError::invalid(
                        format!("knots[{}]", i + 1),
                        "knot abscissae must be strictly increasing",
                    ));
                }
                if let Some(i) = knots.windows(2).position(|w| w[1].1 < w[0].1) {
                    return Err(PtError::invalid(
                        format!("knots[{}]", i + 1),
                        "weighting must be nondecreasing",
                    ));
                }
                let (p_first, v_first) = knots[0];
                let (p_last, v_last) = knots[knots.len() - 1];
                if p_first.abs() > ENDPOINT_TOL || (p_last - 1.0).abs() > ENDPOINT_TOL {
                    return Err(PtError::invalid("knots", "knots must span [0, 1]"));
                }
                if v_first.abs() > ENDPOINT_TOL || (v_last - 1.0).abs() > ENDPOINT_TOL {
                    return Err(PtError::invalid("knots", "weighting must satisfy π(0)=0 and π(1)=1"));
                }
                if knots.iter().any(|(_, v)| *v < -ENDPOINT_TOL || *v > 1.0 + ENDPOINT_TOL) {
                    return Err(PtError::invalid("knots", "weighting must map into [0, 1]"));
                }
                Ok(())
            }
        }
    }
}

/// One closed-form piece of a [`ValueFunction::Piecewise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum Piece {
    /// `intercept + slope·x`
    Affine { slope: f64, intercept: f64 },
    /// `intercept + scale·ln(1 + x)`, undefined for `x ≤ −1`.
    Log1p { scale: f64, intercept: f64 },
    /// `intercept + c·(1 − e^{−kx})`
    ExpSaturating { c: f64, k: f64, intercept: f64 },
}

impl Piece {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            Piece::Affine { slope, intercept } => intercept + slope * x,
            Piece::Log1p { scale, intercept } => {
                if x <= -1.0 {
                    f64::NAN
                } else {
                    intercept + scale * x.ln_1p()
                }
            }
            Piece::ExpSaturating { c, k, intercept } => intercept - c * (-k * x).exp_m1(),
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match *self {
            Piece::Affine { slope, .. } => slope,
            Piece::Log1p { scale, .. } => {
                if x <= -1.0 {
                    f64::NAN
                } else {
                    scale / (1.0 + x)
                }
            }
            Piece::ExpSaturating { c, k, .. } => c * k * (-k * x).exp(),
        }
    }
}

/// Value function `V : ℝ → ℝ` applied to realized rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueFunction {
    #[default]
    Identity,
    Linear {
        slope: f64,
    },
    /// `ln(1 + x)` for gains, `x` for losses.
    LogGainLinearLoss,
    /// `c·(1 − e^{−kx})`
    ExpSaturating {
        c: f64,
        k: f64,
    },
    /// `pieces[0]` on `(−∞, b_0)`, `pieces[i]` on `[b_{i−1}, b_i)`, last piece on `[b_last, ∞)`.
    Piecewise {
        breakpoints: Vec<f64>,
        pieces: Vec<Piece>,
    },
}

impl ValueFunction {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            ValueFunction::Identity => x,
            ValueFunction::Linear { slope } => slope * x,
            ValueFunction::LogGainLinearLoss => {
                if x >= 0.0 {
                    x.ln_1p()
                } else {
                    x
                }
            }
            ValueFunction::ExpSaturating { c, k } => -c * (-k * x).exp_m1(),
            ValueFunction::Piecewise { breakpoints, pieces } => {
                pieces[breakpoints.partition_point(|b| *b <= x)].eval(x)
            }
        }
    }

    /// Derivative; right derivative at breakpoints.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            ValueFunction::Identity => 1.0,
            ValueFunction::Linear { slope } => *slope,
            ValueFunction::LogGainLinearLoss => {
                if x >= 0.0 {
                    1.0 / (1.0 + x)
                } else {
                    1.0
                }
            }
            ValueFunction::ExpSaturating { c, k } => c * k * (-k * x).exp(),
            ValueFunction::Piecewise { breakpoints, pieces } => {
                pieces[breakpoints.partition_point(|b| *b <= x)].derivative(x)
            }
        }
    }

    pub fn validate(&self) -> Result<(), PtError> {
        match self {
            ValueFunction::Identity | ValueFunction::LogGainLinearLoss => Ok(()),
            ValueFunction::Linear { slope } => {
                if !(slope.is_finite() && *slope > 0.0) {
                    return Err(PtError::invalid("slope", "slope must be > 0 for a monotone value function"));
                }
                Ok(())
            }
            ValueFunction::ExpSaturating { c, k } => {
                if !(c.is_finite() && k.is_finite() && c * k > 0.0) {
                    return Err(PtError::invalid("c", "c·k must be > 0 for a monotone value function"));
                }
                Ok(())
            }
            ValueFunction::Piecewise { breakpoints, pieces } => {
                if pieces.len() != breakpoints.len() + 1 {
                    return Err(PtError::invalid(
                        "pieces",
                        format!(
                            "expected {} pieces for {} breakpoints, got {}",
                            breakpoints.len() + 1,
                            breakpoints.len(),
                            pieces.len()
                        ),
                    ));
                }
                if let Some(i) = breakpoints.iter().position(|b| !b.is_finite()) {
                    return Err(PtError::invalid(format!("breakpoints[{i}]"), "breakpoint is not finite"));
                }
                if let Some(i) = breakpoints.windows(2).position(|w| w[0] >= w[1]) {
                    return Err(PtError::invalid(
                        format!("breakpoints[{}]", i + 1),
                        "breakpoints must be strictly increasing",
                    ));
                }
                for (i, b) in breakpoints.iter().enumerate() {
                    let left = pieces[i].eval(*b);
                    let right = pieces[i + 1].eval(*b);
                    if !(left - right).abs().le(&CONTINUITY_TOL) {
                        return Err(PtError::invalid(
                            format!("breakpoints[{i}]"),
                            format!("discontinuous at {b}: left {left}, right {right}"),
                        ));
                    }
                }
                self.check_monotone_sampled()
            }
        }
    }

    /// Sampled monotonicity check around the breakpoints.
    fn check_monotone_sampled(&self) -> Result<(), PtError> {
        let (lo, hi) = match self {
            ValueFunction::Piecewise { breakpoints, .. } if !breakpoints.is_empty() => {
                let lo = breakpoints[0];
                let hi = breakpoints[breakpoints.len() - 1];
                let pad = 10.0 + (hi - lo);
                (lo - pad, hi + pad)
            }
            _ => (-10.0, 10.0),
        };
        let n = 2001;
        let mut prev = f64::NEG_INFINITY;
        for k in 0..n {
            let x = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let v = self.eval(x);
            if v.is_nan() {
                // outside the domain of a log piece
                continue;
            }
            if v < prev - CONTINUITY_TOL {
                return Err(PtError::invalid(
                    "pieces",
                    format!("value function decreases near x = {x}"),
                ));
            }
            prev = v;
        }
        Ok(())
    }
}

/// Individual reward `ℛ(x, ξ)` of one strategy coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardFunction {
    /// `(x − d)·ξ`
    AffineScaled { d: f64 },
    /// `x·ξ − d`
    ScaleShift { d: f64 },
    /// `e^{−k·x·ξ}`
    ExpOfProduct { k: f64 },
    /// `e^{−k·x}`, independent of ξ.
    ExpPlain { k: f64 },
    /// `c·x`, independent of ξ.
    Linear { c: f64 },
}

impl RewardFunction {
    pub fn eval(&self, x: f64, xi: f64) -> f64 {
        match *self {
            RewardFunction::AffineScaled { d } => (x - d) * xi,
            RewardFunction::ScaleShift { d } => x * xi - d,
            RewardFunction::ExpOfProduct { k } => (-k * x * xi).exp(),
            RewardFunction::ExpPlain { k } => (-k * x).exp(),
            RewardFunction::Linear { c } => c * x,
        }
    }

    /// `∂ℛ/∂x`
    pub fn dx(&self, x: f64, xi: f64) -> f64 {
        match *self {
            RewardFunction::AffineScaled { .. } | RewardFunction::ScaleShift { .. } => xi,
            RewardFunction::ExpOfProduct { k } => -k * xi * (-k * x * xi).exp(),
            RewardFunction::ExpPlain { k } => -k * (-k * x).exp(),
            RewardFunction::Linear { c } => c,
        }
    }

    pub fn validate(&self) -> Result<(), PtError> {
        let (name, v) = match *self {
            RewardFunction::AffineScaled { d } | RewardFunction::ScaleShift { d } => ("d", d),
            RewardFunction::ExpOfProduct { k } | RewardFunction::ExpPlain { k } => ("k", k),
            RewardFunction::Linear { c } => ("c", c),
        };
        if !v.is_finite() {
            return Err(PtError::invalid(name, "parameter is not finite"));
        }
        Ok(())
    }
}

/// A lottery: rewards in increasing order with their outcome distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Prospect {
    pub rewards: Vec<f64>,
    pub dist: OutcomeDistribution,
}

impl Prospect {
    pub fn validate(&self) -> Result<(), PtError> {
        self.dist.validate().map_err(|e| e.within("dist"))?;
        if self.rewards.len() != self.dist.probs.len() {
            return Err(PtError::invalid(
                "rewards",
                format!(
                    "expected {} rewards, got {}",
                    self.dist.probs.len(),
                    self.rewards.len()
                ),
            ));
        }
        if let Some(i) = self.rewards.windows(2).position(|w| w[1] < w[0]) {
            return Err(PtError::invalid(
                format!("rewards[{}]", i + 1),
                "rewards must be nondecreasing",
            ));
        }
        Ok(())
    }
}

/// Cumulative distortion of an already ordered probability sequence.
///
/// The last cumulative sum is pinned to 1 so that `Σ q̃ = π(1) = 1` holds even
/// where `π` is steep near 1 (Prelec with α < 1).
pub(crate) fn distort_sequence(probs: &[f64], w: &WeightingFunction, out: &mut Vec<f64>) {
    out.clear();
    if let WeightingFunction::Identity = w {
        out.extend_from_slice(probs);
        return;
    }
    let last = probs.len().saturating_sub(1);
    let mut cum = 0.0;
    let mut prev = 0.0;
    for (j, p) in probs.iter().enumerate() {
        cum += p;
        let now = if j == last { 1.0 } else { w.eval(cum) };
        // rounding in cum can make π(cum) dip by an ulp
        out.push((now - prev).max(0.0));
        prev = now;
    }
}

pub fn distort_probabilities(
    dist: &OutcomeDistribution,
    w: &WeightingFunction,
) -> Result<Vec<f64>, PtError> {
    dist.validate().map_err(|e| e.within("distribution"))?;
    w.validate().map_err(|e| e.within("weighting"))?;
    let mut out = Vec::with_capacity(dist.len());
    distort_sequence(&dist.probs, w, &mut out);
    Ok(out)
}

pub fn pt_value(p: &Prospect, v: &ValueFunction, w: &WeightingFunction) -> Result<f64, PtError> {
    p.validate()?;
    w.validate().map_err(|e| e.within("weighting"))?;
    let mut q = Vec::with_capacity(p.rewards.len());
    distort_sequence(&p.dist.probs, w, &mut q);
    let mut total = 0.0;
    for (j, (r, qj)) in p.rewards.iter().zip(&q).enumerate() {
        let value = v.eval(*r);
        if !value.is_finite() {
            return Err(PtError::Domain {
                index: j,
                xi: p.dist.support[j],
                reward: *r,
                value,
            });
        }
        total += qj * value;
    }
    Ok(total)
}

/// Value and x-derivative of `𝔼_q̃[V ∘ ℛ(x, ξ)]` without re-validating inputs.
///
/// Rewards are sorted ascending (stable on ties) together with their
/// probabilities before the cumulative weighting. The derivative is the one of
/// the current ordering; where two rewards cross under a nonlinear `π` it is a
/// one-sided derivative.
pub(crate) fn pt_term(
    v: &ValueFunction,
    r: &RewardFunction,
    x: f64,
    dist: &OutcomeDistribution,
    w: &WeightingFunction,
) -> Result<(f64, f64), PtError> {
    let m = dist.support.len();
    if m == 1 {
        let xi = dist.support[0];
        let reward = r.eval(x, xi);
        let value = v.eval(reward);
        if !value.is_finite() {
            return Err(PtError::Domain { index: 0, xi, reward, value });
        }
        return Ok((value, v.derivative(reward) * r.dx(x, xi)));
    }
    let mut order: Vec<(f64, usize)> = dist
        .support
        .iter()
        .enumerate()
        .map(|(j, xi)| (r.eval(x, *xi), j))
        .collect();
    // stable: ties keep outcome order
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let probs: Vec<f64> = order.iter().map(|(_, j)| dist.probs[*j]).collect();
    let mut q = Vec::with_capacity(m);
    distort_sequence(&probs, w, &mut q);
    let mut value_sum = 0.0;
    let mut deriv_sum = 0.0;
    for ((reward, j), qj) in order.iter().zip(&q) {
        let xi = dist.support[*j];
        let value = v.eval(*reward);
        if value.is_nan() {
            return Err(PtError::Domain {
                index: *j,
                xi,
                reward: *reward,
                value,
            });
        }
        value_sum += qj * value;
        deriv_sum += qj * v.derivative(*reward) * r.dx(x, xi);
    }
    if value_sum.is_nan() {
        return Err(PtError::Domain {
            index: order[0].1,
            xi: dist.support[order[0].1],
            reward: order[0].0,
            value: value_sum,
        });
    }
    Ok((value_sum, deriv_sum))
}

/// `𝔼_q̃[V ∘ ℛ(x, ξ)]` for a single strategy coordinate `x`.
pub fn pt_expected_reward(
    v: &ValueFunction,
    r: &RewardFunction,
    x: f64,
    dist: &OutcomeDistribution,
    w: &WeightingFunction,
) -> Result<f64, PtError> {
    dist.validate().map_err(|e| e.within("distribution"))?;
    w.validate().map_err(|e| e.within("weighting"))?;
    v.validate().map_err(|e| e.within("value_fn"))?;
    r.validate().map_err(|e| e.within("reward_fn"))?;
    pt_term(v, r, x, dist, w).map(|(value, _)| value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_point(q1: f64) -> OutcomeDistribution {
        OutcomeDistribution::new(vec![1.0, 5.0], vec![q1, 1.0 - q1]).unwrap()
    }

    #[test]
    fn identity_weighting_keeps_probabilities() {
        let q = distort_probabilities(&two_point(0.8), &WeightingFunction::Identity).unwrap();
        assert_eq!(q, vec![0.8, 0.19999999999999996]);
        assert!((q[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_outcome_gets_full_weight() {
        let dist = OutcomeDistribution::degenerate(3.0);
        for w in [
            WeightingFunction::Identity,
            WeightingFunction::Prelec { alpha: 0.3 },
            WeightingFunction::Tabulated {
                knots: vec![(0.0, 0.0), (0.2, 0.5), (1.0, 1.0)],
            },
        ] {
            assert_eq!(distort_probabilities(&dist, &w).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn prelec_two_point_matches_closed_form() {
        // oracle: direct evaluation of exp(−(−ln p)^α)
        let first = (-(-(0.8f64).ln()).powf(0.65)).exp();
        let q = distort_probabilities(&two_point(0.8), &WeightingFunction::Prelec { alpha: 0.65 })
            .unwrap();
        assert!((q[0] - first).abs() < 1e-15);
        assert!((q[1] - (1.0 - first)).abs() < 1e-15);
        // frozen: first = 0.6857740576...
        assert!((q[0] - 0.685_774_057_6).abs() < 1e-9, "{}", q[0]);
    }

    #[test]
    fn pt_value_of_two_point_prospect() {
        let p = Prospect {
            rewards: vec![2.0, 10.0],
            dist: two_point(0.8),
        };
        let v = pt_value(&p, &ValueFunction::Identity, &WeightingFunction::Identity).unwrap();
        assert!((v - 3.6).abs() < 1e-12);

        let single = Prospect {
            rewards: vec![7.5],
            dist: OutcomeDistribution::degenerate(1.0),
        };
        assert_eq!(
            pt_value(&single, &ValueFunction::Identity, &WeightingFunction::Identity).unwrap(),
            7.5
        );

        let zeros = Prospect {
            rewards: vec![0.0, 0.0],
            dist: two_point(0.3),
        };
        for v in [
            ValueFunction::Identity,
            ValueFunction::LogGainLinearLoss,
            ValueFunction::ExpSaturating { c: 2.0, k: 0.5 },
        ] {
            assert_eq!(pt_value(&zeros, &v, &WeightingFunction::Prelec { alpha: 0.5 }).unwrap(), 0.0);
        }
    }

    #[test]
    fn expected_reward_energy_parameters() {
        // (x − d)ξ with x=3, d=1 over ξ ∈ {1, 5}, q(5)=0.8, q(1)=0.2
        let dist = OutcomeDistribution::new(vec![1.0, 5.0], vec![0.2, 0.8]).unwrap();
        let r = RewardFunction::AffineScaled { d: 1.0 };
        let got = pt_expected_reward(&ValueFunction::Identity, &r, 3.0, &dist, &WeightingFunction::Identity)
            .unwrap();
        assert!((got - 8.4).abs() < 1e-12);
    }

    #[test]
    fn expected_reward_zero_and_loss_cases() {
        let dist = two_point(0.4);
        let r = RewardFunction::AffineScaled { d: 2.0 };
        let got = pt_expected_reward(&ValueFunction::LogGainLinearLoss, &r, 2.0, &dist, &WeightingFunction::Identity)
            .unwrap();
        assert_eq!(got, 0.0);

        let r = RewardFunction::ScaleShift { d: 1.0 };
        let got = pt_expected_reward(
            &ValueFunction::LogGainLinearLoss,
            &r,
            0.0,
            &dist,
            &WeightingFunction::Prelec { alpha: 0.7 },
        )
        .unwrap();
        assert!((got + 1.0).abs() < 1e-15);
    }

    #[test]
    fn decreasing_rewards_are_sorted_before_weighting() {
        // e^{−xξ} decreases in ξ, so the large outcome gives the smallest reward.
        let dist = OutcomeDistribution::new(vec![1.0, 3.0], vec![0.7, 0.3]).unwrap();
        let w = WeightingFunction::Prelec { alpha: 0.6 };
        let r = RewardFunction::ExpOfProduct { k: 1.0 };
        let x = 0.5;
        let got = pt_expected_reward(&ValueFunction::Identity, &r, x, &dist, &w).unwrap();
        // oracle: sorted prospect (e^{-1.5} w.p. 0.3, e^{-0.5} w.p. 0.7)
        let pi = |p: f64| w.eval(p);
        let expect = pi(0.3) * (-1.5f64).exp() + (1.0 - pi(0.3)) * (-0.5f64).exp();
        assert!((got - expect).abs() < 1e-14);
    }

    #[test]
    fn domain_error_names_the_outcome() {
        let v = ValueFunction::Piecewise {
            breakpoints: vec![0.0],
            pieces: vec![
                Piece::Log1p { scale: 1.0, intercept: 0.0 },
                Piece::Affine { slope: 1.0, intercept: 0.0 },
            ],
        };
        assert!(v.validate().is_ok());
        let dist = two_point(0.5);
        let r = RewardFunction::ScaleShift { d: 3.0 };
        // x = 0 gives rewards −3 for both outcomes; ln(1 + (−3)) is undefined
        let err = pt_expected_reward(&v, &r, 0.0, &dist, &WeightingFunction::Identity).unwrap_err();
        match err {
            PtError::Domain { index, reward, .. } => {
                assert_eq!(index, 0);
                assert_eq!(reward, -3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let bad = OutcomeDistribution {
            support: vec![1.0, 2.0],
            probs: vec![0.5, 0.4],
        };
        let err = distort_probabilities(&bad, &WeightingFunction::Identity).unwrap_err();
        assert!(matches!(err, PtError::Invalid { ref field, .. } if field == "distribution.probs"));

        let unsorted = OutcomeDistribution {
            support: vec![2.0, 1.0],
            probs: vec![0.5, 0.5],
        };
        assert!(unsorted.validate().is_err());

        let nonmono = WeightingFunction::Tabulated {
            knots: vec![(0.0, 0.0), (0.5, 0.7), (0.7, 0.6), (1.0, 1.0)],
        };
        assert!(distort_probabilities(&two_point(0.5), &nonmono).is_err());

        let unpinned = WeightingFunction::Tabulated {
            knots: vec![(0.0, 0.1), (1.0, 1.0)],
        };
        assert!(unpinned.validate().is_err());

        let jump = ValueFunction::Piecewise {
            breakpoints: vec![0.0],
            pieces: vec![
                Piece::Affine { slope: 1.0, intercept: -1.0 },
                Piece::Affine { slope: 1.0, intercept: 0.0 },
            ],
        };
        assert!(jump.validate().is_err());
        assert!(ValueFunction::Linear { slope: -1.0 }.validate().is_err());

        let unordered = Prospect {
            rewards: vec![3.0, 1.0],
            dist: two_point(0.5),
        };
        assert!(pt_value(&unordered, &ValueFunction::Identity, &WeightingFunction::Identity).is_err());
    }

    #[test]
    fn tabulated_interpolates_linearly() {
        let w = WeightingFunction::Tabulated {
            knots: vec![(0.0, 0.0), (0.5, 0.3), (1.0, 1.0)],
        };
        assert!(w.validate().is_ok());
        assert!((w.eval(0.25) - 0.15).abs() < 1e-15);
        assert!((w.eval(0.75) - 0.65).abs() < 1e-15);
        assert_eq!(w.eval(1.0), 1.0);
    }

    #[test]
    fn value_functions_are_monotone_and_continuous() {
        let fns = [
            ValueFunction::Identity,
            ValueFunction::Linear { slope: 0.4 },
            ValueFunction::LogGainLinearLoss,
            ValueFunction::ExpSaturating { c: 3.0, k: 0.2 },
            ValueFunction::Piecewise {
                breakpoints: vec![0.0, 2.0],
                pieces: vec![
                    Piece::Affine { slope: 2.0, intercept: 0.0 },
                    Piece::Log1p { scale: 1.0, intercept: 0.0 },
                    Piece::Affine { slope: 0.1, intercept: 3f64.ln() - 0.2 },
                ],
            },
        ];
        for v in &fns {
            v.validate().unwrap();
            let mut x = -20.0;
            while x < 20.0 {
                assert!(v.eval(x + 0.01) >= v.eval(x), "{v:?} at {x}");
                x += 0.01;
            }
        }
        // log-gain/linear-loss is C¹ at the reference point
        let v = ValueFunction::LogGainLinearLoss;
        assert!((v.eval(1e-9) - v.eval(-1e-9) - 2e-9).abs() < 1e-15);
        assert_eq!(v.derivative(0.0), 1.0);
    }

    fn arb_distribution() -> impl Strategy<Value = OutcomeDistribution> {
        prop::collection::vec(0.001f64..1.0, 1..8).prop_map(|raw| {
            let total: f64 = raw.iter().sum();
            let mut probs: Vec<f64> = raw.iter().map(|r| r / total).collect();
            let head: f64 = probs[..probs.len() - 1].iter().sum();
            let last = probs.len() - 1;
            probs[last] = (1.0 - head).max(0.0);
            let support = (0..probs.len()).map(|i| 1.0 + i as f64).collect();
            OutcomeDistribution { support, probs }
        })
    }

    fn arb_weighting() -> impl Strategy<Value = WeightingFunction> {
        prop_oneof![
            Just(WeightingFunction::Identity),
            (0.1f64..3.0).prop_map(|alpha| WeightingFunction::Prelec { alpha }),
            prop::collection::vec(0.0f64..1.0, 1..6).prop_map(|mut mids| {
                mids.sort_by(f64::total_cmp);
                let mut knots = vec![(0.0, 0.0)];
                let n = mids.len();
                for (i, v) in mids.into_iter().enumerate() {
                    knots.push(((i + 1) as f64 / (n + 1) as f64, v));
                }
                knots.push((1.0, 1.0));
                WeightingFunction::Tabulated { knots }
            }),
        ]
    }

    proptest! {
        #[test]
        fn distorted_probabilities_are_normalized(dist in arb_distribution(), w in arb_weighting()) {
            prop_assume!(dist.validate().is_ok());
            let q = distort_probabilities(&dist, &w).unwrap();
            prop_assert_eq!(q.len(), dist.len());
            prop_assert!(q.iter().all(|v| *v >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn dominating_prospect_has_higher_value(
            dist in arb_distribution(),
            w in arb_weighting(),
            base in prop::collection::vec(-5.0f64..5.0, 8),
            lift in prop::collection::vec(0.0f64..2.0, 8),
        ) {
            prop_assume!(dist.validate().is_ok());
            let m = dist.len();
            let mut low: Vec<f64> = base[..m].to_vec();
            low.sort_by(f64::total_cmp);
            let mut high: Vec<f64> = low.iter().zip(&lift).map(|(a, b)| a + b).collect();
            high.sort_by(f64::total_cmp);
            let v = ValueFunction::LogGainLinearLoss;
            let a = pt_value(&Prospect { rewards: high, dist: dist.clone() }, &v, &w).unwrap();
            let b = pt_value(&Prospect { rewards: low, dist }, &v, &w).unwrap();
            prop_assert!(a >= b - 1e-12);
        }

        #[test]
        fn shuffled_outcomes_give_same_expectation(
            dist in arb_distribution(),
            w in arb_weighting(),
            x in -3.0f64..3.0,
            rot in 0usize..8,
        ) {
            prop_assume!(dist.validate().is_ok());
            // the same lottery with the outcomes listed in a different order
            let r = RewardFunction::ExpOfProduct { k: 0.3 };
            let v = ValueFunction::Identity;
            let base = pt_term(&v, &r, x, &dist, &w).unwrap().0;
            let m = dist.len();
            let mut pairs: Vec<(f64, f64)> = dist.support.iter().map(|xi| r.eval(x, *xi)).zip(dist.probs.iter().copied()).collect();
            pairs.rotate_left(rot % m);
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut q = Vec::new();
            let probs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            distort_sequence(&probs, &w, &mut q);
            let again: f64 = pairs.iter().zip(&q).map(|(p, qj)| qj * p.0).sum();
            prop_assert!((base - again).abs() <= 1e-12);
        }
    }
}
