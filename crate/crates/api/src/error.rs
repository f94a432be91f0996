use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;
use vizmet_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("unauthorized: {0}")]
    Unauthorized(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("bad request body: {0}")]
    Body(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl ApiError {
    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::Core(e) => match e {
                CoreError::NotFound { .. } => StatusCode::NOT_FOUND,
                CoreError::IllegalTransition { .. }
                | CoreError::Conflict { .. }
                | CoreError::AlreadyDecided(_)
                | CoreError::AlreadyExists { .. } => StatusCode::CONFLICT,
                CoreError::InvalidInput(_)
                | CoreError::Validation(_)
                | CoreError::UndefinedMetric(_)
                | CoreError::NoMajority(_)
                | CoreError::IncompleteData(_)
                | CoreError::InsufficientLabels { .. }
                | CoreError::Parse(_) => StatusCode::UNPROCESSABLE_ENTITY,
                CoreError::ParseExhausted { .. } | CoreError::Gateway { .. } => StatusCode::BAD_GATEWAY,
                CoreError::Blob(_) | CoreError::Config(_) | CoreError::Io(_) | CoreError::Json(_) => {
                    StatusCode::INTERNAL_SERVER_ERROR
                }
            },
            ApiError::Unauthorized(_) => StatusCode::UNAUTHORIZED,
            ApiError::Forbidden(_) => StatusCode::FORBIDDEN,
            ApiError::Body(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Config(_) | ApiError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ApiError::Core(e) => e.code(),
            ApiError::Unauthorized(_) => "unauthorized",
            ApiError::Forbidden(_) => "forbidden",
            ApiError::Body(_) => "invalid_body",
            ApiError::Config(_) => "config",
            ApiError::Io(_) => "io",
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let message = match &self {
            ApiError::Core(e) => e.to_string(),
            other => other.to_string(),
        };
        if self.status().is_server_error() {
            log::error!("{message}");
        }
        (self.status(), Json(json!({ "error": message, "code": self.code() }))).into_response()
    }
}
