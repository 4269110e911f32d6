//! Command-line front end and HTTP service for `medner`.

pub mod cli;
pub mod service;

/// Machine-readable error line written to stderr on failure.
pub fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}
