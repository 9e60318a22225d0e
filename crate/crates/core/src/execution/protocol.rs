//! Line-delimited JSON protocol spoken with sandbox workers.
//!
//! On start the worker writes one handshake line:
//! `{"kind":"handshake","protocol_version":1,"worker":"..."}`.
//! The orchestrator then writes one `{"kind":"exec",...}` request per line
//! and reads exactly one `{"kind":"result",...}` line back for each.

use serde::{Deserialize, Serialize};

use crate::model::{ExecStatus, ExecutionRecord, VariableSnapshot, ROW_CAP};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecRequest {
    pub request_id: String,
    pub preamble_code: String,
    pub candidate_code: String,
    pub timeout_ms: u64,
    pub trace: bool,
    pub row_cap: usize,
}

impl ExecRequest {
    pub fn new(request_id: impl Into<String>, preamble_code: impl Into<String>, candidate_code: impl Into<String>, timeout_ms: u64) -> Self {
        Self {
            request_id: request_id.into(),
            preamble_code: preamble_code.into(),
            candidate_code: candidate_code.into(),
            timeout_ms,
            trace: true,
            row_cap: ROW_CAP,
        }
    }
}

/// Lines written to a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ToWorker {
    Exec(ExecRequest),
    Shutdown,
}

/// Lines read from a worker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FromWorker {
    Handshake {
        protocol_version: u32,
        #[serde(default)]
        worker: Option<String>,
    },
    Result(WorkerResponse),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Error,
    SyntaxError,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub request_id: String,
    pub outcome: Outcome,
    #[serde(default)]
    pub error_type: Option<String>,
    #[serde(default)]
    pub error_message: Option<String>,
    #[serde(default)]
    pub input_vars: Vec<VariableSnapshot>,
    #[serde(default)]
    pub output_vars: Vec<VariableSnapshot>,
    #[serde(default)]
    pub mutated_vars: Vec<String>,
    #[serde(default)]
    pub api_calls: Vec<String>,
    #[serde(default)]
    pub stdout_excerpt: String,
    #[serde(default)]
    pub duration_ms: u64,
}

const SYNTAX_ERRORS: &[&str] = &["SyntaxError", "IndentationError", "TabError"];
const SCHEMA_ERRORS: &[&str] = &["KeyError", "AttributeError", "UndefinedVariableError"];

/// Maps a worker outcome onto the status taxonomy. Total: every input
/// yields exactly one status.
pub fn classify_error(outcome: Outcome, error_type: &str, error_message: &str, outputs: &[VariableSnapshot]) -> ExecStatus {
    let short = error_type.rsplit('.').next().unwrap_or(error_type);
    match outcome {
        Outcome::SyntaxError => ExecStatus::SyntaxError,
        Outcome::Timeout => ExecStatus::Timeout,
        Outcome::Ok if outputs.iter().any(|v| v.kind.is_meaningful()) => ExecStatus::Ok,
        Outcome::Ok => ExecStatus::NoOutput,
        Outcome::Error if SYNTAX_ERRORS.contains(&short) => ExecStatus::SyntaxError,
        Outcome::Error if SCHEMA_ERRORS.contains(&short) => ExecStatus::SchemaError,
        Outcome::Error if short.is_empty() && error_message.contains("not in index") => ExecStatus::SchemaError,
        Outcome::Error => ExecStatus::RuntimeError,
    }
}

/// Converts a response into a record for `candidate_id`. Failed records
/// keep their inputs and API calls but never carry outputs.
pub fn record_from_response(candidate_id: &str, response: WorkerResponse) -> ExecutionRecord {
    let error_type = response.error_type.clone().unwrap_or_default();
    let message = response.error_message.clone().unwrap_or_default();
    let status = classify_error(response.outcome, &error_type, &message, &response.output_vars);
    let error_message = match status {
        ExecStatus::Ok => None,
        ExecStatus::NoOutput => Some("no meaningful output variable".to_string()),
        _ if error_type.is_empty() => Some(message),
        _ => Some(format!("{error_type}: {message}")),
    };
    let mut record = ExecutionRecord {
        candidate_id: candidate_id.to_string(),
        status,
        error_message,
        input_vars: response.input_vars,
        output_vars: if status == ExecStatus::Ok { response.output_vars } else { Vec::new() },
        mutated_vars: response.mutated_vars,
        api_calls: response.api_calls,
        stdout_excerpt: response.stdout_excerpt,
        duration_ms: response.duration_ms,
    };
    if let Err(e) = record.validate() {
        record = ExecutionRecord {
            duration_ms: record.duration_ms,
            ..ExecutionRecord::failure(candidate_id, ExecStatus::RuntimeError, format!("malformed worker response: {e}"))
        };
    }
    record
}
