use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use thiserror::Error;

use crate::api::ErrorBody;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApiError {
    #[error("{0}")]
    InvalidArgument(String),
    #[error("{0}")]
    InvalidParams(String),
    #[error("no session {0:?}")]
    UnknownSession(String),
    #[error("no open task {0:?}")]
    UnknownTask(String),
    #[error("the lease on task {0:?} expired")]
    TaskExpired(String),
    #[error("no stored log for evaluation {0}")]
    LogUnavailable(u64),
    #[error("session {0:?} is closed")]
    SessionClosed(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::InvalidArgument(_) => "invalid-argument",
            ApiError::InvalidParams(_) => "invalid-params",
            ApiError::UnknownSession(_) => "unknown-session",
            ApiError::UnknownTask(_) => "unknown-task",
            ApiError::TaskExpired(_) => "task-expired",
            ApiError::LogUnavailable(_) => "log-unavailable",
            ApiError::SessionClosed(_) => "session-closed",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::InvalidArgument(_) | ApiError::InvalidParams(_) => StatusCode::BAD_REQUEST,
            ApiError::UnknownSession(_) | ApiError::UnknownTask(_) | ApiError::LogUnavailable(_) => {
                StatusCode::NOT_FOUND
            }
            ApiError::TaskExpired(_) => StatusCode::GONE,
            ApiError::SessionClosed(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { error: self.code().into(), message: self.to_string() }
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::Internal(format!("storage: {e}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if let ApiError::Internal(m) = &self {
            tracing::error!("{m}");
        }
        (self.status(), Json(self.body())).into_response()
    }
}
