use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use radlabel_core::extract::Violation;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{TaskStatus, UncertainCell};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("task {report_id} is at version {current}, not {expected}")]
    VersionConflict { report_id: String, expected: u64, current: u64 },
    #[error("label {label:?} is {current}, not {claimed}")]
    StaleState { label: String, claimed: String, current: String },
    #[error("label {0:?} is not in the template")]
    UnknownLabel(String),
    #[error("label {0:?} appears more than once in one submission")]
    DuplicateLabel(String),
    #[error("result violates {} hierarchy edge(s)", .0.len())]
    HierarchyViolation(Vec<Violation>),
    #[error("task {report_id} is {from}; cannot move to {to}")]
    InvalidTransition { report_id: String, from: &'static str, to: &'static str },
    #[error("{} Uncertain cell(s) remain", .0.len())]
    UnresolvedUncertain(Vec<UncertainCell>),
    #[error("{} task(s) are not done", .0.len())]
    TasksNotDone(Vec<String>),
    #[error("missing or unknown bearer token")]
    Unauthorized,
    #[error("admin token required")]
    Forbidden,
    #[error("{0}")]
    BadRequest(String),
    #[error("storage: {0}")]
    Storage(String),
}

impl ReviewError {
    pub fn code(&self) -> &'static str {
        match self {
            ReviewError::NotFound(_) => "not_found",
            ReviewError::VersionConflict { .. } => "version_conflict",
            ReviewError::StaleState { .. } => "stale_state",
            ReviewError::UnknownLabel(_) => "unknown_label",
            ReviewError::DuplicateLabel(_) => "duplicate_label",
            ReviewError::HierarchyViolation(_) => "hierarchy_violation",
            ReviewError::InvalidTransition { .. } => "invalid_transition",
            ReviewError::UnresolvedUncertain(_) => "unresolved_uncertain",
            ReviewError::TasksNotDone(_) => "tasks_not_done",
            ReviewError::Unauthorized => "unauthorized",
            ReviewError::Forbidden => "forbidden",
            ReviewError::BadRequest(_) => "bad_request",
            ReviewError::Storage(_) => "storage",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::VersionConflict { .. } | ReviewError::StaleState { .. } | ReviewError::InvalidTransition { .. } => {
                StatusCode::CONFLICT
            }
            ReviewError::UnknownLabel(_)
            | ReviewError::DuplicateLabel(_)
            | ReviewError::HierarchyViolation(_)
            | ReviewError::UnresolvedUncertain(_)
            | ReviewError::TasksNotDone(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Unauthorized => StatusCode::UNAUTHORIZED,
            ReviewError::Forbidden => StatusCode::FORBIDDEN,
            ReviewError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ReviewError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn details(&self) -> Value {
        match self {
            ReviewError::NotFound(id) => json!({ "report_id": id }),
            ReviewError::VersionConflict { report_id, expected, current } => {
                json!({ "report_id": report_id, "expected": expected, "current": current })
            }
            ReviewError::StaleState { label, claimed, current } => {
                json!({ "label": label, "claimed": claimed, "current": current })
            }
            ReviewError::UnknownLabel(l) | ReviewError::DuplicateLabel(l) => json!({ "label": l }),
            ReviewError::HierarchyViolation(v) => json!({
                "violations": v.iter().map(|v| json!({
                    "child": v.child, "parent": v.parent,
                    "child_state": v.child_state, "parent_state": v.parent_state,
                })).collect::<Vec<_>>()
            }),
            ReviewError::InvalidTransition { report_id, from, to } => {
                json!({ "report_id": report_id, "from": from, "to": to })
            }
            ReviewError::UnresolvedUncertain(cells) => json!({ "cells": cells }),
            ReviewError::TasksNotDone(ids) => json!({ "report_ids": ids }),
            _ => Value::Null,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code().to_string(), message: self.to_string(), details: self.details() }
    }

    pub(crate) fn transition(report_id: &str, from: TaskStatus, to: TaskStatus) -> Self {
        ReviewError::InvalidTransition { report_id: report_id.to_string(), from: from.as_str(), to: to.as_str() }
    }
}

/// Wire form of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        if matches!(self, ReviewError::Storage(_)) {
            tracing::error!(error = %self, "storage failure");
        }
        (self.status(), Json(self.body())).into_response()
    }
}

impl From<radlabel_core::corpus::CorpusError> for ReviewError {
    fn from(e: radlabel_core::corpus::CorpusError) -> Self {
        ReviewError::Storage(e.to_string())
    }
}

impl From<std::io::Error> for ReviewError {
    fn from(e: std::io::Error) -> Self {
        ReviewError::Storage(e.to_string())
    }
}
