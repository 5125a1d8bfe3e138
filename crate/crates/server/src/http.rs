//! The HTTP surface. Every error body is `{"error": <code>, "message": ...}`.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::ws::rejection::WebSocketUpgradeRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use tokio::sync::broadcast::{self, error::RecvError};
use tokio_util::io::ReaderStream;
use tower_http::services::ServeDir;

use crate::api::{CreateSession, Event, ResultMsg};
use crate::error::ApiError;
use crate::manager::SessionManager;
use evoarena_core::evolution::ParamsPatch;

type Shared = State<Arc<SessionManager>>;

pub fn router(manager: Arc<SessionManager>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/sessions", post(create).get(list))
        .route("/api/sessions/{id}", get(info))
        .route("/api/sessions/{id}/task", get(next_task))
        .route("/api/sessions/{id}/results", post(submit))
        .route("/api/sessions/{id}/params", axum::routing::patch(update_params))
        .route("/api/sessions/{id}/history", get(history))
        .route("/api/sessions/{id}/best", get(best))
        .route("/api/sessions/{id}/logs/{eval_index}", get(log))
        .route("/api/sessions/{id}/events", get(events))
        .route("/api/sessions/{id}/close", post(close))
        .with_state(manager);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// JSON bodies parsed by hand so malformed input gets the standard error
/// body rather than the framework's plain-text rejection.
fn parse<T: DeserializeOwned>(body: &Bytes, invalid: fn(String) -> ApiError) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| invalid(format!("malformed request body: {e}")))
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn create(State(m): Shared, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateSession = parse(&body, ApiError::InvalidArgument)?;
    Ok((StatusCode::CREATED, Json(m.create(req).await?)))
}

async fn list(State(m): Shared) -> impl IntoResponse {
    Json(m.list().await)
}

async fn info(State(m): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(m.info(&id).await?))
}

async fn next_task(
    State(m): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Result<impl IntoResponse, ApiError> {
    let worker = q.get("worker").ok_or_else(|| ApiError::InvalidArgument("missing ?worker=ID".into()))?;
    Ok(Json(m.next_task(&id, worker).await?))
}

async fn submit(State(m): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let msg: ResultMsg = parse(&body, ApiError::InvalidArgument)?;
    Ok(Json(m.submit(&id, msg).await?))
}

async fn update_params(State(m): Shared, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let patch: ParamsPatch = parse(&body, ApiError::InvalidParams)?;
    Ok(Json(m.update_params(&id, patch).await?.params))
}

async fn history(State(m): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(m.history(&id).await?))
}

async fn best(State(m): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(m.best(&id).await?))
}

async fn close(State(m): Shared, Path(id): Path<String>) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(m.close(&id).await?))
}

async fn log(State(m): Shared, Path((id, index)): Path<(String, String)>) -> Result<Response, ApiError> {
    let index: u64 = index
        .parse()
        .map_err(|_| ApiError::InvalidArgument(format!("eval index must be a non-negative integer, got {index:?}")))?;
    let path = m.log_path(&id, index).await?;
    let file = tokio::fs::File::open(path).await?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(ReaderStream::new(file)),
    )
        .into_response())
}

/// Server-sent events by default; a WebSocket when the request asks for an
/// upgrade. Both carry the same JSON event objects.
async fn events(
    State(m): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
    ws: Result<WebSocketUpgrade, WebSocketUpgradeRejection>,
) -> Result<Response, ApiError> {
    let since = match q.get("since") {
        Some(s) => s.parse().map_err(|_| ApiError::InvalidArgument(format!("bad since={s:?}")))?,
        None => 0,
    };
    let (snapshot, rx) = m.subscribe(&id, since).await?;
    Ok(match ws {
        Ok(upgrade) => upgrade.on_upgrade(move |socket| pump_socket(socket, snapshot, rx)).into_response(),
        Err(_) => {
            let stream = event_stream(snapshot, rx);
            Sse::new(stream_sse(stream)).keep_alive(KeepAlive::default()).into_response()
        }
    })
}

/// The snapshot, then live events until the session closes or the
/// subscriber falls too far behind (which ends with a `dropped` marker).
pub fn event_stream(snapshot: Event, rx: broadcast::Receiver<Event>) -> impl Stream<Item = Event> {
    stream::unfold((Some(snapshot), Some(rx)), |(first, rx)| async move {
        if let Some(event) = first {
            return Some((event, (None, rx)));
        }
        let mut rx = rx?;
        match rx.recv().await {
            Ok(event @ Event::SessionClosed { .. }) => Some((event, (None, None))),
            Ok(event) => Some((event, (None, Some(rx)))),
            Err(RecvError::Lagged(missed)) => Some((Event::Dropped { missed }, (None, None))),
            Err(RecvError::Closed) => None,
        }
    })
}

fn stream_sse(events: impl Stream<Item = Event>) -> impl Stream<Item = Result<SseEvent, Infallible>> {
    use futures::StreamExt;
    events.map(|e| {
        let json = serde_json::to_string(&e).expect("events serialize");
        Ok(SseEvent::default().event(e.name()).data(json))
    })
}

async fn pump_socket(mut socket: WebSocket, snapshot: Event, rx: broadcast::Receiver<Event>) {
    use futures::StreamExt;
    let events = event_stream(snapshot, rx);
    futures::pin_mut!(events);
    loop {
        tokio::select! {
            next = events.next() => match next {
                Some(event) => {
                    let json = serde_json::to_string(&event).expect("events serialize");
                    if socket.send(Message::Text(json.into())).await.is_err() {
                        return;
                    }
                }
                None => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
