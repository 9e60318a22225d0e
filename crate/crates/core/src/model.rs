//! Shared domain types passed between pipeline stages.
//!
//! Every type here is an immutable value once constructed and round-trips
//! through the newline-delimited record format in [`crate::ndr`]. Identifiers
//! are derived from content, so rerunning a stage over identical inputs yields
//! identical ids.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::table;

/// Maximum number of rows a snapshot may carry in `cells`.
pub const ROW_CAP: usize = 1000;

/// Name of the hash used for every digest and content-derived id.
pub const DIGEST_ALGORITHM: &str = "sha256";

/// Name given to the value of a trailing expression statement.
pub const OUTPUT_VAR: &str = "__output__";

/// Hex digest of a canonical byte representation.
pub fn canonical_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content-derived identifier: `prefix-` followed by 16 hex digits of the
/// digest over the unit-separated parts.
pub fn content_id(prefix: &str, parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (i, part) in parts.iter().enumerate() {
        if i > 0 {
            hasher.update([0x1f]);
        }
        hasher.update(part.as_bytes());
    }
    let digest = hex::encode(hasher.finalize());
    format!("{prefix}-{}", &digest[..16])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dtype {
    Int,
    Float,
    String,
    Bool,
    Datetime,
}

impl Dtype {
    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::Int => "int",
            Dtype::Float => "float",
            Dtype::String => "string",
            Dtype::Bool => "bool",
            Dtype::Datetime => "datetime",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One column of a mined dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnProfile {
    pub name: String,
    pub inferred_dtype: Dtype,
    /// Up to three already-truncated example values.
    pub example_values: Vec<String>,
}

/// Code and data preceding an intent: a load statement plus a rendered
/// description of the loaded table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgrammaticContext {
    pub context_id: String,
    pub source_path: String,
    pub preamble_code: String,
    pub schema_text: String,
    pub column_count: usize,
    /// Name of the table variable bound by the preamble.
    pub table_var: String,
    pub columns: Vec<ColumnProfile>,
}

impl ProgrammaticContext {
    pub fn new(
        source_path: impl Into<String>,
        table_var: impl Into<String>,
        preamble_code: impl Into<String>,
        schema_text: impl Into<String>,
        columns: Vec<ColumnProfile>,
    ) -> Result<Self> {
        let source_path = source_path.into();
        let table_var = table_var.into();
        let preamble_code = preamble_code.into();
        let schema_text = schema_text.into();
        if preamble_code.trim().is_empty() {
            return Err(Error::Invalid(format!("empty preamble for {source_path}")));
        }
        if schema_text.trim().is_empty() {
            return Err(Error::Invalid(format!("empty schema text for {source_path}")));
        }
        let context_id = content_id("ctx", &[&source_path, &preamble_code, &schema_text]);
        Ok(Self {
            context_id,
            source_path,
            preamble_code,
            schema_text,
            column_count: columns.len(),
            table_var,
            columns,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpecType {
    TypeDesc,
    IoExamples,
    IoSummary,
}

impl SpecType {
    pub const ALL: [SpecType; 3] = [SpecType::TypeDesc, SpecType::IoExamples, SpecType::IoSummary];

    pub fn as_str(self) -> &'static str {
        match self {
            SpecType::TypeDesc => "type_desc",
            SpecType::IoExamples => "io_examples",
            SpecType::IoSummary => "io_summary",
        }
    }
}

impl fmt::Display for SpecType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SpecType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SpecType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown spec type {s:?}")))
    }
}

/// Extra semantic constraints appended to an intent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IOSpecification {
    pub spec_type: SpecType,
    pub rendered: String,
    pub noisy: bool,
}

impl IOSpecification {
    pub fn new(spec_type: SpecType, rendered: impl Into<String>, noisy: bool) -> Result<Self> {
        let rendered = rendered.into();
        if rendered.trim().is_empty() {
            return Err(Error::Invalid("empty specification text".into()));
        }
        if noisy && spec_type != SpecType::IoSummary {
            return Err(Error::Invalid(format!("{spec_type} specifications cannot be noisy")));
        }
        Ok(Self {
            spec_type,
            rendered,
            noisy,
        })
    }
}

/// A natural-language task, optionally augmented with a specification.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub intent_id: String,
    pub context_id: String,
    pub ordinal: u32,
    pub text: String,
    #[serde(default)]
    pub spec: Option<IOSpecification>,
}

impl Intent {
    pub fn new(context_id: impl Into<String>, ordinal: u32, text: impl Into<String>) -> Result<Self> {
        let context_id = context_id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Invalid("empty intent text".into()));
        }
        if ordinal == 0 {
            return Err(Error::Invalid("intent ordinals start at 1".into()));
        }
        let intent_id = content_id("int", &[&context_id, &ordinal.to_string(), &text]);
        Ok(Self {
            intent_id,
            context_id,
            ordinal,
            text,
            spec: None,
        })
    }

    /// Intent text followed by the specification, one newline apart.
    pub fn augmented_text(&self) -> String {
        match &self.spec {
            Some(spec) => format!("{}\n{}", self.text, spec.rendered),
            None => self.text.clone(),
        }
    }
}

/// One sampled solution for an intent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeCandidate {
    pub candidate_id: String,
    pub intent_id: String,
    pub source: String,
    pub sample_index: u32,
    pub temperature: f64,
}

impl CodeCandidate {
    pub fn new(
        intent_id: impl Into<String>,
        sample_index: u32,
        source: impl Into<String>,
        temperature: f64,
    ) -> Result<Self> {
        let intent_id = intent_id.into();
        let source = source.into();
        if source.trim().is_empty() {
            return Err(Error::Invalid("empty candidate source".into()));
        }
        if !(0.0..=2.0).contains(&temperature) {
            return Err(Error::Invalid(format!("temperature {temperature} outside [0, 2]")));
        }
        let candidate_id = content_id("cand", &[&intent_id, &sample_index.to_string(), &source]);
        Ok(Self {
            candidate_id,
            intent_id,
            source,
            sample_index,
            temperature,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarKind {
    Tabular,
    Column,
    Array,
    Tensor,
    Scalar,
    Container,
    Other,
}

impl VarKind {
    /// Kinds that count as a meaningful execution output.
    pub fn is_meaningful(self) -> bool {
        matches!(
            self,
            VarKind::Tabular | VarKind::Column | VarKind::Array | VarKind::Tensor | VarKind::Scalar
        )
    }
}

/// A single scalar value inside a snapshot.
///
/// Non-finite floats serialize as the string tokens `NaN`, `Infinity` and
/// `-Infinity`, which parse back to floats.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(i) => Some(*i as f64),
            Cell::Float(f) => Some(*f),
            _ => None,
        }
    }

    /// Stable tagged form used for digests.
    pub fn canonical(&self) -> String {
        match self {
            Cell::Null => "n:".to_string(),
            Cell::Bool(b) => format!("b:{b}"),
            Cell::Int(i) => format!("i:{i}"),
            Cell::Float(f) if f.is_nan() => "f:nan".to_string(),
            Cell::Float(f) => format!("f:{f:?}"),
            Cell::Text(s) => format!("s:{}", s.escape_default()),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Null => serializer.serialize_unit(),
            Cell::Bool(b) => serializer.serialize_bool(*b),
            Cell::Int(i) => serializer.serialize_i64(*i),
            Cell::Float(f) if f.is_nan() => serializer.serialize_str("NaN"),
            Cell::Float(f) if f.is_infinite() && *f > 0.0 => serializer.serialize_str("Infinity"),
            Cell::Float(f) if f.is_infinite() => serializer.serialize_str("-Infinity"),
            Cell::Float(f) => serializer.serialize_f64(*f),
            Cell::Text(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        Ok(match value {
            serde_json::Value::Null => Cell::Null,
            serde_json::Value::Bool(b) => Cell::Bool(b),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => Cell::Int(i),
                None => Cell::Float(n.as_f64().unwrap_or(f64::NAN)),
            },
            serde_json::Value::String(s) => match s.as_str() {
                "NaN" => Cell::Float(f64::NAN),
                "Infinity" => Cell::Float(f64::INFINITY),
                "-Infinity" => Cell::Float(f64::NEG_INFINITY),
                _ => Cell::Text(s),
            },
            other => Cell::Text(other.to_string()),
        })
    }
}

/// Traced state of one guest variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSnapshot {
    pub name: String,
    pub type_name: String,
    pub kind: VarKind,
    pub rendered: String,
    #[serde(default)]
    pub columns: Option<Vec<(String, String)>>,
    #[serde(default)]
    pub shape: Option<Vec<u64>>,
    /// Column-major cell values, at most [`ROW_CAP`] rows.
    #[serde(default)]
    pub cells: Option<Vec<Vec<Cell>>>,
    pub digest: String,
}

impl VariableSnapshot {
    /// Builds a tabular-like snapshot from column-major cells, computing the
    /// prompt rendering and the canonical digest.
    pub fn from_table(
        name: impl Into<String>,
        type_name: impl Into<String>,
        kind: VarKind,
        columns: Vec<(String, String)>,
        cells: Vec<Vec<Cell>>,
    ) -> Result<Self> {
        let rows = cells.first().map_or(0, Vec::len);
        let digest = canonical_digest(canonical_table_bytes(&columns, &cells).as_bytes());
        let capped: Vec<Vec<Cell>> = cells.into_iter().map(|c| c.into_iter().take(ROW_CAP).collect()).collect();
        let rendered = table::render_snapshot_table(&columns, &capped);
        let shape = if kind == VarKind::Column {
            vec![rows as u64]
        } else {
            vec![rows as u64, columns.len() as u64]
        };
        let snapshot = Self {
            name: name.into(),
            type_name: type_name.into(),
            kind,
            rendered,
            columns: Some(columns),
            shape: Some(shape),
            cells: Some(capped),
            digest,
        };
        snapshot.validate()?;
        Ok(snapshot)
    }

    pub fn scalar(name: impl Into<String>, type_name: impl Into<String>, value: Cell) -> Self {
        let rendered = table::format_cell(&value);
        let digest = canonical_digest(value.canonical().as_bytes());
        Self {
            name: name.into(),
            type_name: type_name.into(),
            kind: VarKind::Scalar,
            rendered,
            columns: None,
            shape: None,
            cells: Some(vec![vec![value]]),
            digest,
        }
    }

    /// The scalar value, when this snapshot holds exactly one cell.
    pub fn scalar_value(&self) -> Option<&Cell> {
        match self.cells.as_deref() {
            Some([col]) if col.len() == 1 && self.kind == VarKind::Scalar => col.first(),
            _ => None,
        }
    }

    pub fn row_count(&self) -> usize {
        self.cells
            .as_ref()
            .and_then(|c| c.first())
            .map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rendered.is_empty() {
            return Err(Error::Invalid(format!("snapshot {} has empty rendering", self.name)));
        }
        if let Some(cells) = &self.cells {
            if self.kind != VarKind::Scalar {
                let columns = self.columns.as_ref().ok_or_else(|| {
                    Error::Invalid(format!("snapshot {} has cells but no columns", self.name))
                })?;
                if columns.len() != cells.len() {
                    return Err(Error::Invalid(format!(
                        "snapshot {} declares {} columns but carries {}",
                        self.name,
                        columns.len(),
                        cells.len()
                    )));
                }
            }
            let rows = cells.first().map_or(0, Vec::len);
            if cells.iter().any(|c| c.len() != rows) {
                return Err(Error::Invalid(format!("snapshot {} has ragged columns", self.name)));
            }
            if rows > ROW_CAP {
                return Err(Error::Invalid(format!(
                    "snapshot {} carries {rows} rows, cap is {ROW_CAP}",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Row-major serialization with dtype tags, the input to table digests.
pub fn canonical_table_bytes(columns: &[(String, String)], cells: &[Vec<Cell>]) -> String {
    let mut out = String::from("cols:");
    for (name, dtype) in columns {
        out.push_str(&format!("{}\t{}\u{1f}", name.escape_default(), dtype));
    }
    out.push('\n');
    let rows = cells.first().map_or(0, Vec::len);
    for r in 0..rows {
        let row: Vec<String> = cells.iter().map(|col| col[r].canonical()).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    SyntaxError,
    SchemaError,
    RuntimeError,
    Timeout,
    NoOutput,
}

impl ExecStatus {
    pub const ALL: [ExecStatus; 6] = [
        ExecStatus::Ok,
        ExecStatus::SyntaxError,
        ExecStatus::SchemaError,
        ExecStatus::RuntimeError,
        ExecStatus::Timeout,
        ExecStatus::NoOutput,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::SyntaxError => "syntax_error",
            ExecStatus::SchemaError => "schema_error",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::NoOutput => "no_output",
        }
    }
}

impl fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of running one candidate after its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub candidate_id: String,
    pub status: ExecStatus,
    #[serde(default)]
    pub error_message: Option<String>,
    pub input_vars: Vec<VariableSnapshot>,
    pub output_vars: Vec<VariableSnapshot>,
    /// Input variables whose digest changed during execution.
    #[serde(default)]
    pub mutated_vars: Vec<String>,
    pub api_calls: Vec<String>,
    pub stdout_excerpt: String,
    pub duration_ms: u64,
}

impl ExecutionRecord {
    /// A failed record with no traced variables.
    pub fn failure(candidate_id: impl Into<String>, status: ExecStatus, message: impl Into<String>) -> Self {
        Self {
            candidate_id: candidate_id.into(),
            status,
            error_message: Some(message.into()),
            input_vars: Vec::new(),
            output_vars: Vec::new(),
            mutated_vars: Vec::new(),
            api_calls: Vec::new(),
            stdout_excerpt: String::new(),
            duration_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.status, self.output_vars.is_empty()) {
            (ExecStatus::Ok, true) => Err(Error::Invalid(format!(
                "record {} is ok but has no outputs",
                self.candidate_id
            ))),
            (status, false) if status != ExecStatus::Ok => Err(Error::Invalid(format!(
                "record {} has status {status} but carries outputs",
                self.candidate_id
            ))),
            _ => {
                for var in self.input_vars.iter().chain(&self.output_vars) {
                    var.validate()?;
                }
                Ok(())
            }
        }
    }
}

/// Why a solution made it into the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub candidate_id: String,
    pub executable: bool,
    pub api_calls: Vec<String>,
    pub selection_reason: String,
}

/// A filtered `(context, intent, solution)` fine-tuning example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub context: ProgrammaticContext,
    pub intent: Intent,
    pub solution: String,
    pub provenance: Provenance,
}

impl SyntheticExample {
    /// Fails unless `record` is an ok execution of `candidate`.
    pub fn new(
        context: ProgrammaticContext,
        intent: Intent,
        candidate: &CodeCandidate,
        record: &ExecutionRecord,
        selection_reason: impl Into<String>,
    ) -> Result<Self> {
        if record.candidate_id != candidate.candidate_id {
            return Err(Error::Invalid(format!(
                "record {} does not belong to candidate {}",
                record.candidate_id, candidate.candidate_id
            )));
        }
        if record.status != ExecStatus::Ok {
            return Err(Error::NotExecutable(candidate.candidate_id.clone()));
        }
        Ok(Self {
            context,
            intent,
            solution: candidate.source.clone(),
            provenance: Provenance {
                candidate_id: candidate.candidate_id.clone(),
                executable: true,
                api_calls: record.api_calls.clone(),
                selection_reason: selection_reason.into(),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_digest_is_the_sha256_constant() {
        assert_eq!(
            canonical_digest(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(canonical_digest(b"abc"), canonical_digest(b"abc"));
        assert_eq!(canonical_digest(b"abc").len(), 64);
    }

    #[test]
    fn ids_are_content_derived() {
        let a = Intent::new("ctx-1", 1, "count rows").unwrap();
        let b = Intent::new("ctx-1", 1, "count rows").unwrap();
        let c = Intent::new("ctx-1", 2, "count rows").unwrap();
        assert_eq!(a.intent_id, b.intent_id);
        assert_ne!(a.intent_id, c.intent_id);
        assert!(a.intent_id.starts_with("int-"));
    }

    #[test]
    fn intent_rejects_empty_text_and_zero_ordinal() {
        assert!(Intent::new("c", 1, "  ").is_err());
        assert!(Intent::new("c", 0, "x").is_err());
    }

    #[test]
    fn candidate_temperature_range() {
        assert!(CodeCandidate::new("i", 0, "x = 1", 2.5).is_err());
        assert!(CodeCandidate::new("i", 0, "", 0.8).is_err());
        assert!(CodeCandidate::new("i", 0, "x = 1", 0.8).is_ok());
    }

    #[test]
    fn only_io_summary_may_be_noisy() {
        assert!(IOSpecification::new(SpecType::TypeDesc, "x", true).is_err());
        assert!(IOSpecification::new(SpecType::IoSummary, "x", true).is_ok());
        assert!(IOSpecification::new(SpecType::IoSummary, " ", false).is_err());
    }

    #[test]
    fn nan_cells_round_trip_through_token() {
        let cells = vec![Cell::Float(f64::NAN), Cell::Float(1.5), Cell::Int(3), Cell::Null];
        let json = serde_json::to_string(&cells).unwrap();
        assert_eq!(json, r#"["NaN",1.5,3,null]"#);
        let back: Vec<Cell> = serde_json::from_str(&json).unwrap();
        assert!(matches!(back[0], Cell::Float(f) if f.is_nan()));
        assert_eq!(back[1..], cells[1..]);
    }

    #[test]
    fn unmutated_table_digest_is_stable() {
        let build = || {
            VariableSnapshot::from_table(
                "df",
                "pandas.core.frame.DataFrame",
                VarKind::Tabular,
                vec![("a".into(), "int64".into()), ("b".into(), "float64".into())],
                vec![vec![Cell::Int(1), Cell::Int(2)], vec![Cell::Float(f64::NAN), Cell::Float(0.5)]],
            )
            .unwrap()
        };
        let before = build();
        let after = build();
        assert_eq!(before.digest, after.digest);

        let mutated = VariableSnapshot::from_table(
            "df",
            "pandas.core.frame.DataFrame",
            VarKind::Tabular,
            vec![("a".into(), "int64".into()), ("b".into(), "float64".into())],
            vec![vec![Cell::Int(1), Cell::Int(2)], vec![Cell::Float(f64::NAN), Cell::Float(0.25)]],
        )
        .unwrap();
        assert_ne!(before.digest, mutated.digest);
    }

    #[test]
    fn row_cap_is_enforced() {
        let col: Vec<Cell> = (0..10_000).map(Cell::Int).collect();
        let snap = VariableSnapshot::from_table(
            "df",
            "pandas.core.frame.DataFrame",
            VarKind::Tabular,
            vec![("a".into(), "int64".into())],
            vec![col],
        )
        .unwrap();
        assert_eq!(snap.row_count(), ROW_CAP);
        assert_eq!(snap.shape, Some(vec![10_000, 1]));
        assert_eq!(snap.rendered.lines().count(), 5);
    }

    #[test]
    fn record_status_output_invariant() {
        let mut rec = ExecutionRecord::failure("c", ExecStatus::Ok, "");
        assert!(rec.validate().is_err());
        rec.status = ExecStatus::RuntimeError;
        assert!(rec.validate().is_ok());
        rec.output_vars.push(VariableSnapshot::scalar("x", "int", Cell::Int(1)));
        assert!(rec.validate().is_err());
    }

    #[test]
    fn synthetic_example_rejects_failed_records() {
        let ctx = ProgrammaticContext::new("a.csv", "df", "df = 1", "| a (int) |", vec![]).unwrap();
        let intent = Intent::new(&ctx.context_id, 1, "x").unwrap();
        let cand = CodeCandidate::new(&intent.intent_id, 0, "df.a", 0.8).unwrap();
        let rec = ExecutionRecord::failure(&cand.candidate_id, ExecStatus::SchemaError, "KeyError");
        let err = SyntheticExample::new(ctx, intent, &cand, &rec, "x").unwrap_err();
        assert!(matches!(err, Error::NotExecutable(_)));
    }
}
