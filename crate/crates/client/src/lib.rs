//! Async client for the scoring service.
//!
//! Transport failures and 5xx responses are retried with exponential backoff.
//! 4xx responses are returned as the service's own [`ServiceError`].
//!
//! Inside a GRPO loop the client replaces the reward step: score the group's
//! rollouts, then turn the totals into advantages.
//!
//! ```no_run
//! use smp_client::{ClientConfig, ClientError, ScoringClient};
//! use smp_core::api::{AdvantageGroup, ScoreItem};
//! use smp_core::MovementLabel;
//!
//! async fn rewards_for_group(
//!     client: &ScoringClient,
//!     prompt_id: &str,
//!     completions: &[String],
//!     truth: MovementLabel,
//! ) -> Result<Vec<f64>, ClientError> {
//!     let items = completions
//!         .iter()
//!         .enumerate()
//!         .map(|(j, text)| ScoreItem {
//!             id: format!("{prompt_id}#{j}"),
//!             text: text.clone(),
//!             truth_label: truth,
//!         })
//!         .collect();
//!     let scored = client.score_batch(items, None).await?;
//!     let group = AdvantageGroup {
//!         group_id: prompt_id.to_string(),
//!         rewards: scored.results.iter().map(|r| r.reward.total).collect(),
//!         token_logprobs: None,
//!     };
//!     let adv = client.advantages_for_groups(vec![group], None).await?;
//!     Ok(adv.results.into_iter().next().map(|r| r.advantages).unwrap_or_default())
//! }
//!
//! let client = ScoringClient::new(ClientConfig::from_env("http://127.0.0.1:8080")).unwrap();
//! # let _ = rewards_for_group(&client, "p", &[], MovementLabel::Up);
//! ```

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use smp_core::api::{
    AdvantageGroup, AdvantageRequest, AdvantageResponse, ErrorBody, GrpoOverrides, Health, ScoreItem, ScoreRequest,
    ScoreResponse, ServiceError, VoteRequest, VoteResponse,
};
use smp_core::config::DEFAULT_BATCH_CAP;
use smp_core::eval::Ballot;
use smp_core::reward::RewardWeights;

pub const URL_ENV: &str = "SMP_SERVICE_URL";

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub batch_cap: usize,
}

impl ClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            max_attempts: 4,
            backoff_base: Duration::from_millis(100),
            batch_cap: DEFAULT_BATCH_CAP,
        }
    }

    /// `SMP_SERVICE_URL` wins over `default_url` when set.
    pub fn from_env(default_url: &str) -> Self {
        Self::new(std::env::var(URL_ENV).unwrap_or_else(|_| default_url.to_string()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("service rejected request ({status}): {error}")]
    Service { status: u16, error: ServiceError },
    #[error("batch of {len} exceeds the cap of {cap}")]
    BatchTooLarge { len: usize, cap: usize },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server error after {attempts} attempt(s) ({status}): {body}")]
    Server { attempts: u32, status: u16, body: String },
    #[error("cannot decode response: {0}")]
    Decode(String),
}

pub struct ScoringClient {
    http: reqwest::Client,
    config: ClientConfig,
    retries: AtomicU64,
}

impl ScoringClient {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ClientError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            http,
            config,
            retries: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    /// Retries performed over the client's lifetime.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub async fn score_batch(
        &self,
        items: Vec<ScoreItem>,
        weights: Option<RewardWeights>,
    ) -> Result<ScoreResponse, ClientError> {
        self.check_cap(items.len())?;
        self.post("/v1/score", &ScoreRequest { items, weights }).await
    }

    pub async fn advantages_for_groups(
        &self,
        groups: Vec<AdvantageGroup>,
        config: Option<GrpoOverrides>,
    ) -> Result<AdvantageResponse, ClientError> {
        self.check_cap(groups.len())?;
        self.post("/v1/advantage", &AdvantageRequest { groups, config }).await
    }

    pub async fn vote(&self, ballots: Vec<Ballot>) -> Result<VoteResponse, ClientError> {
        self.check_cap(ballots.len())?;
        self.post("/v1/vote", &VoteRequest { ballots }).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.send(|| self.http.get(self.url("/health"))).await
    }

    fn check_cap(&self, len: usize) -> Result<(), ClientError> {
        if len > self.config.batch_cap {
            return Err(ClientError::BatchTooLarge {
                len,
                cap: self.config.batch_cap,
            });
        }
        Ok(())
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.base_url)
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let bytes = serde_json::to_vec(body).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.send(|| {
            self.http
                .post(self.url(path))
                .header(reqwest::header::CONTENT_TYPE, "application/json")
                .body(bytes.clone())
        })
        .await
    }

    async fn send<T, F>(&self, build: F) -> Result<T, ClientError>
    where
        T: DeserializeOwned,
        F: Fn() -> reqwest::RequestBuilder,
    {
        let max = self.config.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let last = attempt >= max;
            let failure = match build().send().await {
                Err(e) => ClientError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
                Ok(resp) => {
                    let status = resp.status();
                    let body = resp.bytes().await.map_err(|e| ClientError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    });
                    match body {
                        Err(e) => e,
                        Ok(body) if status.is_success() => {
                            // Response numbers must parse back bit-exactly.
                            return serde_json::from_slice(&body).map_err(|e| ClientError::Decode(e.to_string()));
                        }
                        Ok(body) if status.is_server_error() => ClientError::Server {
                            attempts: attempt,
                            status: status.as_u16(),
                            body: String::from_utf8_lossy(&body).into_owned(),
                        },
                        Ok(body) => return Err(client_error(status, &body)),
                    }
                }
            };
            if last {
                return Err(failure);
            }
            let delay = self.config.backoff_base * 2u32.saturating_pow(attempt - 1);
            tracing::warn!(attempt, error = %failure, ?delay, "retrying");
            self.retries.fetch_add(1, Ordering::Relaxed);
            tokio::time::sleep(delay).await;
        }
    }
}

fn client_error(status: StatusCode, body: &[u8]) -> ClientError {
    match serde_json::from_slice::<ErrorBody>(body) {
        Ok(b) => ClientError::Service {
            status: status.as_u16(),
            error: b.error,
        },
        Err(_) => ClientError::Decode(format!("{status}: {}", String::from_utf8_lossy(body))),
    }
}
