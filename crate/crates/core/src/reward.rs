//! Shaped rewards: `R = alpha * format + beta * accuracy + gamma * consistency`.
//!
//! All three components are binary. Format acts as a gate: a response that
//! fails to parse scores zero on every component.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MovementLabel;
use crate::labeling::{classify, LabeledSample};
use crate::parsing::{format_score, parse};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 2.0,
            gamma: 1.0,
        }
    }
}

impl RewardWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::domain(format!("reward weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn max_total(&self) -> f64 {
        self.alpha + self.beta + self.gamma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub accuracy: f64,
    pub consistency: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub const ZERO: RewardBreakdown = RewardBreakdown {
        format: 0.0,
        accuracy: 0.0,
        consistency: 0.0,
        total: 0.0,
    };

    fn weighted(format: f64, accuracy: f64, consistency: f64, w: &RewardWeights) -> Self {
        Self {
            format,
            accuracy,
            consistency,
            total: w.alpha * format + w.beta * accuracy + w.gamma * consistency,
        }
    }

    pub fn is_fully_correct(&self) -> bool {
        self.format == 1.0 && self.accuracy == 1.0 && self.consistency == 1.0
    }
}

pub fn accuracy_score(predicted: MovementLabel, truth: MovementLabel) -> f64 {
    if predicted == truth {
        1.0
    } else {
        0.0
    }
}

/// 1 when the stated label is the one the stated percentage implies.
/// Non-finite percentages are never consistent.
pub fn consistency_score(change_pct: f64, answer: MovementLabel) -> f64 {
    match classify(change_pct) {
        Ok(l) if l == answer => 1.0,
        _ => 0.0,
    }
}

pub fn shape(text: &str, truth: MovementLabel, weights: &RewardWeights) -> RewardBreakdown {
    let (parsed, report) = parse(text);
    match parsed {
        Some(p) => RewardBreakdown::weighted(
            format_score(&report),
            accuracy_score(p.answer, truth),
            consistency_score(p.change_pct, p.answer),
            weights,
        ),
        None => RewardBreakdown::ZERO,
    }
}

/// Order-preserving parallel [`shape`] over `(text, truth)` pairs.
pub fn shape_batch<S: AsRef<str> + Sync>(
    items: &[(S, MovementLabel)],
    weights: &RewardWeights,
) -> Vec<RewardBreakdown> {
    items
        .par_iter()
        .map(|(text, truth)| shape(text.as_ref(), *truth, weights))
        .collect()
}

/// Rejection-sampling filter for cold-start data: keep only well-formed,
/// correct and self-consistent candidates. Returns the accepted indices.
pub fn filter_for_sft<S: AsRef<str>>(candidates: &[S], truth: &LabeledSample) -> Vec<usize> {
    let weights = RewardWeights::default();
    candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| shape(c.as_ref(), truth.label, &weights).is_fully_correct())
        .map(|(i, _)| i)
        .collect()
}

/// What counts as a "correct" rollout when estimating sample difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectnessRule {
    /// Well-formed and the answer matches the truth.
    #[default]
    FormatAndAccuracy,
    /// All three components are 1.
    FullyCorrect,
}

impl CorrectnessRule {
    pub fn is_correct(self, b: &RewardBreakdown) -> bool {
        match self {
            CorrectnessRule::FormatAndAccuracy => b.format == 1.0 && b.accuracy == 1.0,
            CorrectnessRule::FullyCorrect => b.is_fully_correct(),
        }
    }
}
