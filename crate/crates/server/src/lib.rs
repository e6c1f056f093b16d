//! HTTP/JSON front end over deepmap stores. Handlers hand each request to a
//! blocking worker; responses are the `deepmap-api` types.

mod ops;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, State as Shared};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use deepmap_api::{routes, ApiError, ErrorKind, Health};

pub use ops::{OpResult, State, QUERY_CACHE_BYTES};

/// Request bodies carry whole key and row lists.
pub const MAX_BODY_BYTES: usize = 512 << 20;

struct HttpError(ApiError);

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let status = match self.0.kind {
            ErrorKind::Invalid => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict | ErrorKind::ReadOnly => StatusCode::CONFLICT,
            ErrorKind::AnswerMismatch => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.0)).into_response()
    }
}

type Reply<T> = Result<Json<T>, HttpError>;

async fn blocking<T, F>(state: Arc<State>, f: F) -> Reply<T>
where
    T: Send + 'static,
    F: FnOnce(&State) -> OpResult<T> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| {
            HttpError(ApiError {
                kind: ErrorKind::Internal,
                message: format!("worker failed: {e}"),
            })
        })?
        .map(Json)
        .map_err(|e| {
            tracing::warn!(error = %e, "request failed");
            HttpError(e)
        })
}

macro_rules! handler {
    ($name:ident, $req:ty, $resp:ty) => {
        async fn $name(Shared(state): Shared<Arc<State>>, Json(req): Json<$req>) -> Reply<$resp> {
            blocking(state, move |s| s.$name(req)).await
        }
    };
}

handler!(generate, deepmap_api::GenerateRequest, deepmap_api::DatasetSummary);
handler!(ingest, deepmap_api::IngestRequest, deepmap_api::DatasetSummary);
handler!(build, deepmap_api::BuildRequest, deepmap_api::StoreSummary);
handler!(search, deepmap_api::SearchRequest, deepmap_api::SearchSummary);
handler!(query, deepmap_api::QueryRequest, deepmap_api::QueryResponse);
handler!(insert, deepmap_api::MutateRequest, deepmap_api::MutationSummary);
handler!(delete, deepmap_api::MutateRequest, deepmap_api::MutationSummary);
handler!(update, deepmap_api::MutateRequest, deepmap_api::MutationSummary);
handler!(compact, deepmap_api::CompactRequest, deepmap_api::MutationSummary);
handler!(bench, deepmap_api::BenchRequest, deepmap_api::Report);
handler!(compare, deepmap_api::CompareRequest, deepmap_api::Comparison);

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

pub fn app(state: Arc<State>) -> Router {
    Router::new()
        .route(routes::HEALTH, get(health))
        .route(routes::GENERATE, post(generate))
        .route(routes::INGEST, post(ingest))
        .route(routes::BUILD, post(build))
        .route(routes::SEARCH, post(search))
        .route(routes::QUERY, post(query))
        .route(routes::INSERT, post(insert))
        .route(routes::DELETE, post(delete))
        .route(routes::UPDATE, post(update))
        .route(routes::COMPACT, post(compact))
        .route(routes::BENCH, post(bench))
        .route(routes::COMPARE, post(compare))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, app(Arc::new(State::default()))).await
}

/// Binds `addr` (port 0 picks a free one) and serves in the background.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener))))
}
