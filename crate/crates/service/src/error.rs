use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

/// Error body: `{code, message, details}`.
#[derive(Debug, Clone, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Vec<String>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into(), details: Vec::new() }
    }

    pub fn with_details(mut self, details: Vec<String>) -> Self {
        self.details = details;
        self
    }

    pub fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no trial with id {id}"))
    }

    pub fn busy() -> Self {
        Self::new(StatusCode::CONFLICT, "busy", "another request is updating this trial")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

/// Engine errors raised while applying a mutation.
impl From<lse_dose::Error> for ApiError {
    fn from(e: lse_dose::Error) -> Self {
        use lse_dose::Error as E;
        match e {
            E::State(m) => Self::new(StatusCode::CONFLICT, "conflict", m),
            E::InvalidParameter(m) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_cohort", m),
            E::InvalidConfig(v) => {
                Self::new(StatusCode::BAD_REQUEST, "invalid_config", "configuration is invalid").with_details(v)
            }
            other => Self::internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self)).into_response()
    }
}
