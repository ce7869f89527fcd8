//! Live task sessions over HTTP.
//!
//! | method | path                     | body              | result                          |
//! |--------|--------------------------|-------------------|---------------------------------|
//! | POST   | `/sessions`              | [`CreateRequest`] | 201 [`SessionView`]             |
//! | GET    | `/sessions/{id}`         |                   | 200 [`SessionView`]             |
//! | POST   | `/sessions/{id}/choice`  | [`ChoiceRequest`] | 200 [`Feedback`]                |
//! | GET    | `/sessions/{id}/export`  |                   | 200 `RunRecord` (finished only) |
//!
//! Live payloads carry only labels, coins and counters. The latent state,
//! win probabilities and segment structure stay on the server until the
//! session is finished; the export of a finished session is the full
//! `RunRecord`, which is also appended to the configured JSONL file.
//!
//! Errors are `{"error": "..."}` with 404 (unknown session), 422 (invalid
//! label or body) or 409 (trial already answered, or session finished).

mod api;
mod session;

pub use api::{router, serve, AppState, ServiceConfig};
pub use session::{ChoiceRequest, CreateRequest, Feedback, HistoryItem, SessionView};
