//! Stateless HTTP/JSON front end for batch scoring.
//!
//! Routes:
//!
//! | method | path            | body                | response            |
//! |--------|-----------------|---------------------|---------------------|
//! | POST   | `/v1/score`     | `ScoreRequest`      | `ScoreResponse`     |
//! | POST   | `/v1/advantage` | `AdvantageRequest`  | `AdvantageResponse` |
//! | POST   | `/v1/vote`      | `VoteRequest`       | `VoteResponse`      |
//! | GET    | `/health`       |                     | `Health`            |
//!
//! Failures return an `ErrorBody` with the status given by its code. All
//! semantics live in `smp_core::api`; this crate only moves bytes.

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;
use smp_core::api::{
    process_advantage, process_score, process_vote, AdvantageRequest, ErrorBody, ErrorCode, Health, ScoreRequest,
    ServiceError, VoteRequest,
};
use smp_core::config::RunConfig;
use smp_core::grpo::GrpoConfig;
use smp_core::reward::RewardWeights;
use tokio::net::TcpListener;

const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct AppState {
    pub weights: RewardWeights,
    pub grpo: GrpoConfig,
    pub batch_cap: usize,
    pub config_digest: String,
}

impl AppState {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            weights: cfg.weights,
            grpo: cfg.grpo,
            batch_cap: cfg.service.batch_cap,
            config_digest: cfg.digest(),
        }
    }
}

struct ApiError(ServiceError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.code.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorBody { error: self.0 })).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

type Shared = Arc<AppState>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/score", post(score))
        .route("/v1/advantage", post(advantage))
        .route("/v1/vote", post(vote))
        .route("/health", get(health))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(middleware::from_fn(log_request))
        .with_state(Arc::new(state))
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(
        %method,
        path,
        status = resp.status().as_u16(),
        elapsed_ms = started.elapsed().as_secs_f64() * 1e3,
        "request"
    );
    resp
}

fn decode<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::new(ErrorCode::BadRequest, e.to_string())))
}

fn check_cap(len: usize, cap: usize, what: &str) -> Result<(), ApiError> {
    if len > cap {
        return Err(ApiError(ServiceError::new(
            ErrorCode::Overloaded,
            format!("{len} {what} exceeds the batch cap of {cap}"),
        )));
    }
    Ok(())
}

/// Run CPU-bound work off the async executor.
async fn compute<T, F>(f: F) -> Result<Json<T>, ApiError>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => Ok(Json(result?)),
        Err(e) => Err(ApiError(ServiceError::new(ErrorCode::Internal, format!("worker failed: {e}")))),
    }
}

async fn score(State(state): State<Shared>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: ScoreRequest = decode(&body)?;
    check_cap(req.items.len(), state.batch_cap, "items")?;
    compute(move || process_score(&req, &state.weights)).await
}

async fn advantage(State(state): State<Shared>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: AdvantageRequest = decode(&body)?;
    check_cap(req.groups.len(), state.batch_cap, "groups")?;
    compute(move || process_advantage(&req, &state.grpo)).await
}

async fn vote(State(state): State<Shared>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: VoteRequest = decode(&body)?;
    check_cap(req.ballots.len(), state.batch_cap, "ballots")?;
    compute(move || process_vote(&req)).await
}

async fn health(State(state): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_digest: state.config_digest.clone(),
    })
}

async fn not_found() -> ApiError {
    ApiError(ServiceError::new(ErrorCode::BadRequest, "no such route"))
}

/// A bound listener, so callers can learn the port before serving.
pub struct Server {
    listener: TcpListener,
    app: Router,
}

impl Server {
    pub async fn bind(addr: &str, state: AppState) -> std::io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr).await?,
            app: router(state),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serve until `shutdown` resolves, then drain in-flight requests.
    pub async fn run_until<F>(self, shutdown: F) -> std::io::Result<()>
    where
        F: std::future::Future<Output = ()> + Send + 'static,
    {
        axum::serve(self.listener, self.app).with_graceful_shutdown(shutdown).await
    }

    /// Serve until Ctrl-C.
    pub async fn run(self) -> std::io::Result<()> {
        self.run_until(async {
            if let Err(e) = tokio::signal::ctrl_c().await {
                tracing::warn!(error = %e, "cannot listen for ctrl-c; serving until killed");
                std::future::pending::<()>().await;
            }
            tracing::info!("shutting down");
        })
        .await
    }
}

/// Bind an ephemeral local port and serve in the background. Returns the base
/// URL and a handle; aborting the handle stops the server.
pub async fn spawn_local(state: AppState) -> std::io::Result<(String, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let server = Server::bind("127.0.0.1:0", state).await?;
    let url = format!("http://{}", server.local_addr()?);
    let handle = tokio::spawn(server.run_until(std::future::pending()));
    Ok((url, handle))
}
