use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

use pilework_core::corpus::CorpusError;
use pilework_core::kg_query::QueryError;
use pilework_core::piles::PileError;
use pilework_core::providers::ProviderError;
use pilework_core::search::SearchError;
use pilework_core::validate::ValidateError;
use pilework_core::SCHEMA_VERSION;

/// Error body: `{"schemaVersion": 1, "error": {"code": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }

    pub fn timeout() -> Self {
        Self::new(
            StatusCode::GATEWAY_TIMEOUT,
            "provider_timeout",
            "provider call timed out",
        )
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({
            "schemaVersion": SCHEMA_VERSION,
            "error": { "code": self.code, "message": self.message },
        });
        (self.status, Json(body)).into_response()
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::InvalidRequest(_) => Self::bad_request(e.to_string()),
            _ => Self::new(StatusCode::BAD_GATEWAY, "provider_error", e.to_string()),
        }
    }
}

impl From<PileError> for ApiError {
    fn from(e: PileError) -> Self {
        match e {
            PileError::UnknownPile(_) | PileError::UnknownEvidence { .. } => Self::not_found(e.to_string()),
            PileError::UnknownDocument(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_document", e.to_string())
            }
            PileError::Provider(p) => p.into(),
            PileError::Io(_) => Self::internal(e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<SearchError> for ApiError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Provider(p) => p.into(),
            SearchError::UnknownDocument(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_document", e.to_string())
            }
            SearchError::EmptyQuery | SearchError::InvalidK => Self::bad_request(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl From<ValidateError> for ApiError {
    fn from(e: ValidateError) -> Self {
        match e {
            ValidateError::Provider(p) => p.into(),
            ValidateError::Search(s) => s.into(),
            ValidateError::UnknownDocument(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unknown_document", e.to_string())
            }
            _ => Self::bad_request(e.to_string()),
        }
    }
}

impl From<QueryError> for ApiError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::UnknownFact(_) => Self::not_found(e.to_string()),
            QueryError::Provider(p) => p.into(),
            QueryError::DanglingSource { .. } => Self::internal(e.to_string()),
        }
    }
}

impl From<CorpusError> for ApiError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::UnknownDocument(_) => Self::not_found(e.to_string()),
            CorpusError::EmptyQuery => Self::bad_request(e.to_string()),
            _ => Self::internal(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        let e: ApiError = PileError::UnknownPile("p9".into()).into();
        assert_eq!((e.status, e.code), (StatusCode::NOT_FOUND, "not_found"));
        let e: ApiError = PileError::UnknownDocument("d9".into()).into();
        assert_eq!(
            (e.status, e.code),
            (StatusCode::UNPROCESSABLE_ENTITY, "unknown_document")
        );
        let e: ApiError = PileError::EmptyName.into();
        assert_eq!(e.status, StatusCode::BAD_REQUEST);
        let e: ApiError = PileError::Provider(ProviderError::Transport("down".into())).into();
        assert_eq!((e.status, e.code), (StatusCode::BAD_GATEWAY, "provider_error"));
        let e: ApiError = ProviderError::InvalidRequest("temperature".into()).into();
        assert_eq!(e.status, StatusCode::BAD_REQUEST);
        let e: ApiError = SearchError::EmptyQuery.into();
        assert_eq!(e.status, StatusCode::BAD_REQUEST);
        let e: ApiError = QueryError::UnknownFact("f".into()).into();
        assert_eq!(e.status, StatusCode::NOT_FOUND);
        assert_eq!(ApiError::timeout().status, StatusCode::GATEWAY_TIMEOUT);
    }

    #[test]
    fn error_converts_to_its_status() {
        let res = ApiError::bad_request("nope").into_response();
        assert_eq!(res.status(), StatusCode::BAD_REQUEST);
    }
}
