//! Adjudication backend: task queue, versioned corrections, audit log and export.

pub mod api;
pub mod audit;
pub mod error;
pub mod model;
pub mod store;

pub use error::{ErrorBody, ReviewError};
pub use store::{ReviewConfig, ReviewStore, Reviewer, TokenTable};
