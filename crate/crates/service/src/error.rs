use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use eagle_core::Error;
use serde_json::{json, Value};

use crate::embed::EmbedError;

/// Error body `{"error": code, "message": text, ...}` with an HTTP status.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub extra: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            extra: None,
        }
    }

    pub fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn body(&self) -> Value {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(Value::Object(extra)) = &self.extra {
            body.as_object_mut().unwrap().extend(extra.clone());
        }
        body
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {}",
            self.status.as_u16(),
            self.code,
            self.message
        )
    }
}

impl std::error::Error for ApiError {}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::InvalidArgument(_)
            | Error::InvalidConfig(_)
            | Error::EmptyTrainingSet
            | Error::Parse { .. } => ApiError::bad_request("invalid_request", message),
            Error::DimensionMismatch { expected, actual } => ApiError {
                extra: Some(json!({ "expected_dim": expected, "actual_dim": actual })),
                ..ApiError::bad_request("dimension_mismatch", message)
            },
            Error::ZeroVector => ApiError::bad_request("zero_vector", message),
            Error::DuplicateRecord(id) => ApiError {
                extra: Some(json!({ "record_id": id })),
                ..ApiError::new(StatusCode::CONFLICT, "duplicate_record", message)
            },
            Error::StaleFeedback {
                ts_ms, last_ts_ms, ..
            } => ApiError {
                extra: Some(json!({ "ts_ms": ts_ms, "last_ts_ms": last_ts_ms })),
                ..ApiError::new(StatusCode::CONFLICT, "stale_feedback", message)
            },
            Error::BudgetExhausted {
                budget,
                cheapest_cost,
            } => ApiError {
                extra: Some(json!({ "budget": budget, "cheapest_cost": cheapest_cost })),
                ..ApiError::new(StatusCode::PAYMENT_REQUIRED, "budget_exhausted", message)
            },
            Error::NoAvailableModels => ApiError::new(
                StatusCode::SERVICE_UNAVAILABLE,
                "no_available_models",
                message,
            ),
            Error::UnknownModel(_) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_model", message)
            }
            Error::InvariantViolated(_) | Error::Io { .. } => ApiError::internal(message),
        }
    }
}

impl From<EmbedError> for ApiError {
    fn from(e: EmbedError) -> Self {
        ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "embedding_unavailable",
            e.to_string(),
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}
