//! JSON wire types for batch scoring, shared by the HTTP service, its client
//! and the file-based CLI.
//!
//! The `process_*` functions hold the whole request semantics (validation,
//! defaults, ordering). The service only adds transport, so results are
//! bit-identical to in-process calls. Requests are rejected atomically: one bad
//! item fails the whole batch.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::eval::{majority_vote, Ballot};
use crate::grpo::{group_advantages, group_objective, GrpoConfig, TokenLogProbs};
use crate::label::MovementLabel;
use crate::reward::{shape_batch, RewardBreakdown, RewardWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub id: String,
    pub text: String,
    pub truth_label: MovementLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub items: Vec<ScoreItem>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<RewardWeights>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub id: String,
    #[serde(flatten)]
    pub reward: RewardBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub results: Vec<ScoreResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageGroup {
    pub group_id: String,
    pub rewards: Vec<f64>,
    /// When present, the objective and its gradient are computed too.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_logprobs: Option<TokenLogProbs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrpoOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kl_coef: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_guard: Option<f64>,
}

impl GrpoOverrides {
    pub fn apply(&self, base: GrpoConfig) -> GrpoConfig {
        GrpoConfig {
            epsilon: self.epsilon.unwrap_or(base.epsilon),
            kl_coef: self.kl_coef.unwrap_or(base.kl_coef),
            std_guard: self.std_guard.unwrap_or(base.std_guard),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageRequest {
    pub groups: Vec<AdvantageGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<GrpoOverrides>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageResult {
    pub group_id: String,
    pub advantages: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradients: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageResponse {
    pub results: Vec<AdvantageResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRequest {
    pub ballots: Vec<Ballot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub sample_id: String,
    pub winner: MovementLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResponse {
    pub results: Vec<VoteResult>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
    pub config_digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    ValidationFailed,
    Overloaded,
    Internal,
}

impl ErrorCode {
    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::BadRequest => 400,
            ErrorCode::ValidationFailed => 422,
            ErrorCode::Overloaded => 413,
            ErrorCode::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
}

impl ServiceError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            id: None,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    fn validation(message: impl Into<String>, id: &str) -> Self {
        Self::new(ErrorCode::ValidationFailed, message).with_id(id)
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)?;
        if let Some(id) = &self.id {
            write!(f, " (id {id})")?;
        }
        Ok(())
    }
}

impl std::error::Error for ServiceError {}

/// Body of every non-success response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ServiceError,
}

fn first_duplicate<'a>(ids: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let mut seen = HashSet::new();
    ids.into_iter().find(|id| !seen.insert(*id))
}

pub fn process_score(req: &ScoreRequest, default_weights: &RewardWeights) -> Result<ScoreResponse, ServiceError> {
    let weights = req.weights.unwrap_or(*default_weights);
    weights
        .validate()
        .map_err(|e| ServiceError::new(ErrorCode::ValidationFailed, e.to_string()))?;
    if let Some(dup) = first_duplicate(req.items.iter().map(|i| i.id.as_str())) {
        return Err(ServiceError::validation(format!("duplicate id {dup:?}"), dup));
    }
    let pairs: Vec<(&str, MovementLabel)> = req.items.iter().map(|i| (i.text.as_str(), i.truth_label)).collect();
    let rewards = shape_batch(&pairs, &weights);
    Ok(ScoreResponse {
        results: req
            .items
            .iter()
            .zip(rewards)
            .map(|(item, reward)| ScoreResult {
                id: item.id.clone(),
                reward,
            })
            .collect(),
    })
}

pub fn process_advantage(req: &AdvantageRequest, defaults: &GrpoConfig) -> Result<AdvantageResponse, ServiceError> {
    let config = req.config.unwrap_or_default().apply(*defaults);
    config
        .validate()
        .map_err(|e| ServiceError::new(ErrorCode::ValidationFailed, e.to_string()))?;
    if let Some(dup) = first_duplicate(req.groups.iter().map(|g| g.group_id.as_str())) {
        return Err(ServiceError::validation(format!("duplicate group_id {dup:?}"), dup));
    }
    let results = req
        .groups
        .iter()
        .map(|g| {
            let fail = |e: crate::Error| ServiceError::validation(format!("group {}: {e}", g.group_id), &g.group_id);
            match &g.token_logprobs {
                None => Ok(AdvantageResult {
                    group_id: g.group_id.clone(),
                    advantages: group_advantages(&g.rewards, config.std_guard).map_err(fail)?,
                    objective: None,
                    gradients: None,
                }),
                Some(lp) => {
                    let out = group_objective(&g.rewards, lp, &config).map_err(fail)?;
                    Ok(AdvantageResult {
                        group_id: g.group_id.clone(),
                        advantages: out.advantages,
                        objective: Some(out.objective),
                        gradients: Some(out.gradients),
                    })
                }
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(AdvantageResponse { results })
}

pub fn process_vote(req: &VoteRequest) -> Result<VoteResponse, ServiceError> {
    let results = req
        .ballots
        .iter()
        .map(|b| {
            majority_vote(&b.votes)
                .map(|winner| VoteResult {
                    sample_id: b.sample_id.clone(),
                    winner,
                })
                .map_err(|e| ServiceError::validation(e.to_string(), &b.sample_id))
        })
        .collect::<Result<_, _>>()?;
    Ok(VoteResponse { results })
}
