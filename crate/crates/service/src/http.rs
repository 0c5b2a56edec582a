use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use eagle_core::{Embedding, ModelId, ModelRegistry, RoutingDecision};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::error::ApiError;
use crate::state::{
    FeedbackRequest, FeedbackResponse, ModelUpdate, RatingsFile, RestoreRequest, RouteRequest,
    Service, SnapshotInfo, SnapshotRequest,
};

type Shared = State<Arc<Service>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn app(service: Arc<Service>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/route", post(route))
        .route("/v1/feedback", post(feedback))
        .route("/v1/models", get(models))
        .route("/v1/models/{id}", put(put_model).delete(delete_model))
        .route("/v1/ratings", get(ratings))
        .route("/v1/snapshot", post(snapshot))
        .route("/v1/restore", post(restore))
        .with_state(service)
}

pub async fn serve(
    listener: TcpListener,
    service: Arc<Service>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app(service))
        .with_graceful_shutdown(shutdown)
        .await
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_json", e.to_string()))
}

/// Runs state access off the async workers: routing scans and fsyncs both
/// block.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn embedding_for(
    svc: &Service,
    values: Option<Vec<f64>>,
    text: Option<&str>,
) -> Result<Embedding, ApiError> {
    match (values, text) {
        (Some(v), _) => svc.embedding_from(v),
        (None, Some(t)) => match svc.embedder() {
            Some(client) => Ok(client.embed(t).await?),
            None => Err(ApiError::bad_request(
                "embedding_client_not_configured",
                "text input needs an embedding service; set EAGLE_EMBED_URL or send an embedding",
            )),
        },
        (None, None) => Err(ApiError::bad_request(
            "missing_embedding",
            "request needs an embedding or text",
        )),
    }
}

async fn healthz(State(svc): Shared) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "records": svc.record_count(),
        "models": svc.registry().len(),
        "dim": svc.config().dim,
    }))
}

async fn route(State(svc): Shared, body: Bytes) -> ApiResult<RoutingDecision> {
    let req: RouteRequest = parse(&body)?;
    let embedding = embedding_for(&svc, req.embedding, req.text.as_deref()).await?;
    let decision = blocking(move || svc.route(embedding, req.budget, req.request_id)).await?;
    Ok(Json(decision))
}

async fn feedback(State(svc): Shared, body: Bytes) -> ApiResult<FeedbackResponse> {
    let mut req: FeedbackRequest = parse(&body)?;
    let embedding = embedding_for(&svc, req.embedding.take(), req.query_text.as_deref()).await?;
    Ok(Json(blocking(move || svc.feedback(req, embedding)).await?))
}

async fn models(State(svc): Shared) -> Json<ModelRegistry> {
    Json(svc.registry())
}

async fn put_model(State(svc): Shared, Path(id): Path<String>, body: Bytes) -> ApiResult<Value> {
    let update: ModelUpdate = parse(&body)?;
    let entry = blocking(move || {
        svc.put_model(ModelId::new(id.clone()), update)
            .map(|e| (id, e))
    })
    .await?;
    Ok(Json(json!({
        "id": entry.0,
        "cost_per_query": entry.1.cost_per_query,
        "available": entry.1.available,
    })))
}

async fn delete_model(State(svc): Shared, Path(id): Path<String>) -> ApiResult<Value> {
    let entry = blocking(move || svc.delete_model(&id).map(|e| (id, e))).await?;
    Ok(Json(json!({
        "id": entry.0,
        "cost_per_query": entry.1.cost_per_query,
        "available": entry.1.available,
        "deleted": true,
    })))
}

async fn ratings(State(svc): Shared) -> Json<RatingsFile> {
    Json(svc.ratings())
}

async fn snapshot(State(svc): Shared, body: Bytes) -> ApiResult<SnapshotInfo> {
    let req: SnapshotRequest = if body.iter().all(u8::is_ascii_whitespace) {
        SnapshotRequest::default()
    } else {
        parse(&body)?
    };
    Ok(Json(blocking(move || svc.snapshot(req)).await?))
}

async fn restore(State(svc): Shared, body: Bytes) -> ApiResult<SnapshotInfo> {
    let req: RestoreRequest = parse(&body)?;
    Ok(Json(blocking(move || svc.restore(req)).await?))
}
