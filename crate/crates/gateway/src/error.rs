use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use policyguard_core::session::SessionError;
use serde_json::json;

/// Error reply: `{"error": {"code": "...", "message": "..."}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::UnknownSession(_) => Self::new(StatusCode::NOT_FOUND, "unknown_session", message),
            SessionError::Closed(_) => Self::new(StatusCode::CONFLICT, "session_closed", message),
            SessionError::Invalid(_) => Self::bad_request(message),
            SessionError::Metrics(_) => Self::new(StatusCode::CONFLICT, "no_records", message),
            SessionError::Enhancement(ref inner) => match inner {
                policyguard_core::enhancement::EnhancementError::EmptyDocument(_)
                | policyguard_core::enhancement::EnhancementError::UnsupportedKind(_) => Self::bad_request(message),
                policyguard_core::enhancement::EnhancementError::Backend(_) => {
                    Self::new(StatusCode::BAD_GATEWAY, "backend_unavailable", message)
                }
                _ => Self::internal(message),
            },
            SessionError::Update(_) | SessionError::Database(_) => Self::internal(message),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        let status = match r {
            JsonRejection::MissingJsonContentType(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            JsonRejection::JsonDataError(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, "malformed_body", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        Self::bad_request(r.body_text())
    }
}
