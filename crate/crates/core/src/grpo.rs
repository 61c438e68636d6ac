//! Group-relative policy optimisation kernels.
//!
//! For a group of `G` responses to one prompt with outcome rewards `r`, every
//! token of response `i` shares the advantage `(r_i - mean(r)) / std(r)`. The
//! per-group objective is
//!
//! ```text
//! J = 1/G * sum_i 1/|o_i| * sum_t [ min(rho * A_i, clip(rho, 1-eps, 1+eps) * A_i)
//!                                   - kl_coef * KL_t ]
//! ```
//!
//! with `rho = exp(current - old)` and the non-negative per-token estimator
//! `KL_t = exp(ref - current) - (ref - current) - 1`. Old and reference
//! log-probabilities are constants; gradients are taken with respect to the
//! current log-probabilities only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest exponent argument with a finite result.
const MAX_EXP_ARG: f64 = 709.782_712_893_384;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoConfig {
    pub epsilon: f64,
    pub kl_coef: f64,
    pub std_guard: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            kl_coef: 0.001,
            std_guard: 1e-8,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::domain(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if !(self.kl_coef.is_finite() && self.kl_coef >= 0.0) {
            return Err(Error::domain(format!("kl_coef must be >= 0, got {}", self.kl_coef)));
        }
        if !(self.std_guard.is_finite() && self.std_guard > 0.0) {
            return Err(Error::domain(format!("std_guard must be > 0, got {}", self.std_guard)));
        }
        Ok(())
    }
}

/// Per-token log-probabilities for every response of a group, `[response][token]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenLogProbs {
    pub current: Vec<Vec<f64>>,
    pub old: Vec<Vec<f64>>,
    #[serde(rename = "ref")]
    pub reference: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupObjective {
    pub advantages: Vec<f64>,
    pub objective: f64,
    /// d objective / d current log-prob, same shape as the inputs.
    pub gradients: Vec<Vec<f64>>,
}

/// Normalise rewards within a group using the population standard deviation.
/// Groups whose spread is below `std_guard` get all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_guard: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::domain(format!("a group needs at least 2 rewards, got {}", rewards.len())));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::domain(format!("rewards must be finite, got {bad}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < std_guard {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

fn checked_exp(x: f64, what: &str) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!("{what}: non-finite log-probability difference {x}")));
    }
    if x > MAX_EXP_ARG {
        return Err(Error::Overflow(format!("{what}: exp({x}) exceeds f64 range")));
    }
    Ok(x.exp())
}

/// Probability ratio `exp(current - old)`.
pub fn ratio(current_lp: f64, old_lp: f64) -> Result<f64> {
    checked_exp(current_lp - old_lp, "ratio")
}

/// `min(rho * A, clip(rho, 1-eps, 1+eps) * A)`.
pub fn clipped_surrogate(advantage: f64, current_lp: f64, old_lp: f64, epsilon: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::domain(format!("epsilon must be > 0, got {epsilon}")));
    }
    let rho = ratio(current_lp, old_lp)?;
    Ok(surrogate_and_slope(advantage, rho, epsilon).0)
}

/// Surrogate value and its derivative with respect to the current log-prob.
/// At the clip boundary the unclipped branch wins.
fn surrogate_and_slope(advantage: f64, rho: f64, epsilon: f64) -> (f64, f64) {
    let unclipped = rho * advantage;
    let clipped = rho.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    if unclipped <= clipped {
        // d(rho)/d(current) = rho
        (unclipped, unclipped)
    } else {
        (clipped, 0.0)
    }
}

/// Per-token KL estimator `exp(ref - current) - (ref - current) - 1`.
pub fn kl_penalty(current_lp: f64, ref_lp: f64) -> Result<f64> {
    let delta = ref_lp - current_lp;
    let e = checked_exp(delta, "kl_penalty")?;
    Ok((e - delta - 1.0).max(0.0))
}

/// Objective value and analytic gradient for one group.
pub fn group_objective(rewards: &[f64], logprobs: &TokenLogProbs, config: &GrpoConfig) -> Result<GroupObjective> {
    config.validate()?;
    let advantages = group_advantages(rewards, config.std_guard)?;
    let g = rewards.len();
    let TokenLogProbs {
        current,
        old,
        reference,
    } = logprobs;
    if current.len() != g || old.len() != g || reference.len() != g {
        return Err(Error::validation(format!(
            "expected {g} responses of log-probs, got current={} old={} ref={}",
            current.len(),
            old.len(),
            reference.len()
        )));
    }

    let group_scale = 1.0 / g as f64;
    let mut objective = 0.0;
    let mut gradients = Vec::with_capacity(g);
    for i in 0..g {
        let (cur, old, refp) = (&current[i], &old[i], &reference[i]);
        let len = cur.len();
        if len == 0 || old.len() != len || refp.len() != len {
            return Err(Error::validation(format!(
                "response {i}: token vectors must be non-empty and equal length (current={len}, old={}, ref={})",
                old.len(),
                refp.len()
            )));
        }
        let scale = group_scale / len as f64;
        let mut response_sum = 0.0;
        let mut grad = Vec::with_capacity(len);
        for t in 0..len {
            if !(cur[t].is_finite() && old[t].is_finite() && refp[t].is_finite()) {
                return Err(Error::domain(format!("response {i} token {t}: non-finite log-probability")));
            }
            let rho = ratio(cur[t], old[t])?;
            let (surrogate, d_surrogate) = surrogate_and_slope(advantages[i], rho, config.epsilon);
            let delta = refp[t] - cur[t];
            let e = checked_exp(delta, "kl_penalty")?;
            let kl = (e - delta - 1.0).max(0.0);
            // d KL / d current = 1 - exp(ref - current)
            let d_kl = 1.0 - e;
            response_sum += surrogate - config.kl_coef * kl;
            grad.push(scale * (d_surrogate - config.kl_coef * d_kl));
        }
        objective += response_sum / len as f64;
        gradients.push(grad);
    }
    Ok(GroupObjective {
        advantages,
        objective: objective * group_scale,
        gradients,
    })
}
