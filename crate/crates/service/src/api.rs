//! HTTP/JSON routes under `/api/campaigns`.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;

use crate::error::ServiceError;
use crate::service::{parse_grid, CampaignService, CreateRequest, ObservationInput};

pub type AppState = Arc<CampaignService>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Validation { .. } => StatusCode::BAD_REQUEST,
            ServiceError::Numerical(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(self.body())).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct GridQuery {
    grid: Option<String>,
}

// model work runs off the async executor
async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Storage(format!("worker panicked: {e}")))?
}

fn grid_of(q: GridQuery) -> Result<Vec<Vec<f64>>, ServiceError> {
    let text = q.grid.ok_or_else(|| ServiceError::field("grid", "missing grid parameter"))?;
    parse_grid(&text)
}

async fn list(State(svc): State<AppState>) -> Response {
    Json(svc.list()).into_response()
}

async fn create(State(svc): State<AppState>, body: Result<Json<CreateRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return ServiceError::validation(e.body_text()).into_response(),
    };
    match blocking(move || svc.create(req)).await {
        Ok(c) => (StatusCode::CREATED, Json(c)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn fetch(State(svc): State<AppState>, Path(id): Path<String>) -> Response {
    match svc.get(&id) {
        Ok(l) => Json(l.campaign.clone()).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn observe(
    State(svc): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<ObservationInput>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(input) = match body {
        Ok(b) => b,
        Err(e) => return ServiceError::validation(e.body_text()).into_response(),
    };
    match blocking(move || svc.submit(&id, input)).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn proposal(State(svc): State<AppState>, Path(id): Path<String>) -> Response {
    match blocking(move || svc.proposal(&id)).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn predictions(State(svc): State<AppState>, Path(id): Path<String>, Query(q): Query<GridQuery>) -> Response {
    let run = move || {
        let grid = grid_of(q)?;
        svc.predictions(&id, &grid)
    };
    match blocking(run).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn criterion(State(svc): State<AppState>, Path(id): Path<String>, Query(q): Query<GridQuery>) -> Response {
    let run = move || {
        let grid = grid_of(q)?;
        svc.criterion(&id, &grid)
    };
    match blocking(run).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

pub fn router(svc: AppState) -> Router {
    Router::new()
        .route("/api/campaigns", get(list).post(create))
        .route("/api/campaigns/{id}", get(fetch))
        .route("/api/campaigns/{id}/observations", post(observe))
        .route("/api/campaigns/{id}/proposal", get(proposal))
        .route("/api/campaigns/{id}/predictions", get(predictions))
        .route("/api/campaigns/{id}/criterion", get(criterion))
        .with_state(svc)
}

/// Serves the API on `addr` until interrupted.
pub async fn serve(svc: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
