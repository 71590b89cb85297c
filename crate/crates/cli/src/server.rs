//! Mock annealer speaking the remote sampler wire protocol.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use duom::problem::EffectiveQubo;
use duom::samplers::remote::{ErrorResponse, SampleRequest, SampleResponse, SAMPLE_PATH};
use duom::samplers::{mh_sample, SamplerConfig};

use crate::error::CliError;

#[derive(Debug, Clone)]
pub enum MockMode {
    /// Answers every valid request with the same response.
    Fixed(SampleResponse),
    /// Samples locally with Metropolis-Hastings. `beta` and sweeps come from
    /// the config; reads and seed come from each request (seed 0 if absent).
    ProxyMh(SamplerConfig),
}

impl MockMode {
    pub fn fixed_from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let resp = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("fixture {}: {e}", path.display())))?;
        Ok(MockMode::Fixed(resp))
    }
}

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(ErrorResponse { error: msg.into() })).into_response()
}

async fn sample(State(mode): State<Arc<MockMode>>, body: Bytes) -> Response {
    let req: SampleRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let q = match EffectiveQubo::try_from(req.qubo) {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("invalid qubo: {e}")),
    };
    if req.num_reads == 0 {
        return error(StatusCode::BAD_REQUEST, "num_reads must be positive");
    }
    match mode.as_ref() {
        MockMode::Fixed(resp) => Json(resp.clone()).into_response(),
        MockMode::ProxyMh(base) => {
            let mut cfg = *base;
            cfg.num_reads = req.num_reads;
            cfg.seed = req.seed.unwrap_or(0);
            let result = tokio::task::spawn_blocking(move || mh_sample(&q, &cfg)).await;
            match result {
                Ok(Ok(s)) => Json(SampleResponse::from_sample_set(&s)).into_response(),
                Ok(Err(e)) => error(StatusCode::BAD_REQUEST, e.to_string()),
                Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            }
        }
    }
}

pub fn router(mode: MockMode) -> Router {
    Router::new()
        .route(SAMPLE_PATH, post(sample))
        .with_state(Arc::new(mode))
}

/// Serves until the process is stopped.
pub fn serve_blocking(addr: SocketAddr, mode: MockMode) -> Result<(), CliError> {
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Config(format!("cannot bind {addr}: {e}")))?;
        log::info!("mock annealer listening on http://{}", listener.local_addr().unwrap_or(addr));
        axum::serve(listener, router(mode))
            .await
            .map_err(CliError::io(addr.to_string()))
    })
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(CliError::io("tokio runtime"))
}

/// A server on a background thread, stopped on drop.
pub struct MockServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl MockServer {
    /// Binds `127.0.0.1` on an ephemeral port.
    pub fn spawn(mode: MockMode) -> Result<Self, CliError> {
        let rt = runtime()?;
        let listener = rt
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .map_err(CliError::io("127.0.0.1:0"))?;
        let addr = listener.local_addr().map_err(CliError::io("127.0.0.1:0"))?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let _ = axum::serve(listener, router(mode))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
