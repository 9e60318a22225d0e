//! Turns local tabular files into programmatic contexts.
//!
//! A context is the load statement for one file plus a pipe-table rendering
//! of its header and first three rows, with the inferred dtype of every
//! column in parentheses.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, Result};
use crate::model::{ColumnProfile, Dtype, ProgrammaticContext};
use crate::table::{self, MAX_ROWS};

/// Variable the preamble binds the loaded table to.
pub const TABLE_VAR: &str = "df";

const DATE_PATTERNS: &[&str] = &["%d-%b-%y", "%Y-%m-%d", "%m/%d/%Y", "%d-%b-%Y"];
const DATETIME_PATTERNS: &[&str] = &["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"];

/// Display token for blank cells, matching how the guest shows missing values.
const MISSING: &str = "nan";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedFile {
    pub path: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct MineOutcome {
    pub contexts: Vec<ProgrammaticContext>,
    pub skipped: Vec<SkippedFile>,
}

pub fn infer_dtype(values: &[&str]) -> Dtype {
    let present: Vec<&str> = values.iter().map(|v| v.trim()).filter(|v| !v.is_empty()).collect();
    if present.is_empty() {
        return Dtype::String;
    }
    if present.iter().all(|v| v.parse::<i64>().is_ok()) {
        Dtype::Int
    } else if present.iter().all(|v| v.parse::<f64>().is_ok()) {
        Dtype::Float
    } else if present
        .iter()
        .all(|v| v.eq_ignore_ascii_case("true") || v.eq_ignore_ascii_case("false"))
    {
        Dtype::Bool
    } else if present.iter().all(|v| is_datetime(v)) {
        Dtype::Datetime
    } else {
        Dtype::String
    }
}

fn is_datetime(value: &str) -> bool {
    DATE_PATTERNS
        .iter()
        .any(|p| NaiveDate::parse_from_str(value, p).is_ok())
        || DATETIME_PATTERNS
            .iter()
            .any(|p| NaiveDateTime::parse_from_str(value, p).is_ok())
}

/// Header line of `name (dtype)` labels, a dash separator, then the rows.
/// Callers pass at most three rows; extra rows are ignored.
pub fn render_schema(columns: &[ColumnProfile], rows: &[Vec<String>]) -> String {
    let headers: Vec<String> = columns
        .iter()
        .map(|c| format!("{} ({})", c.name, c.inferred_dtype))
        .collect();
    let rows: Vec<Vec<String>> = rows
        .iter()
        .take(MAX_ROWS)
        .map(|r| {
            r.iter()
                .map(|v| if v.trim().is_empty() { MISSING.to_string() } else { v.clone() })
                .collect()
        })
        .collect();
    table::render_pipe_table(&headers, &rows)
}

fn python_str(s: &str) -> String {
    format!("'{}'", s.replace('\\', "\\\\").replace('\'', "\\'"))
}

fn sniff_delimiter(first_line: &str) -> u8 {
    if first_line.matches('\t').count() > first_line.matches(',').count() {
        b'\t'
    } else {
        b','
    }
}

/// Parses one file into a context. `relative` is the path recorded in the
/// context and used in the load statement.
pub fn mine_file(path: &Path, relative: &str) -> Result<ProgrammaticContext> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let first_line = text.lines().next().unwrap_or_default();
    if first_line.trim().is_empty() {
        return Err(Error::Invalid(format!("{relative}: missing header row")));
    }
    let delimiter = sniff_delimiter(first_line);
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Invalid(format!("{relative}: {e}")))?
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let h = h.trim();
            if h.is_empty() {
                format!("Unnamed: {i}")
            } else {
                h.to_string()
            }
        })
        .collect();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Invalid(format!("{relative}: {e}")))?;
        let mut row: Vec<String> = record.iter().map(str::to_string).collect();
        if row.len() > headers.len() {
            return Err(Error::Invalid(format!(
                "{relative}: row with {} fields under {} headers",
                row.len(),
                headers.len()
            )));
        }
        row.resize(headers.len(), String::new());
        rows.push(row);
    }

    let columns: Vec<ColumnProfile> = headers
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let values: Vec<&str> = rows.iter().map(|r| r[i].as_str()).collect();
            ColumnProfile {
                name: name.clone(),
                inferred_dtype: infer_dtype(&values),
                example_values: rows
                    .iter()
                    .take(MAX_ROWS)
                    .map(|r| {
                        let v = r[i].trim();
                        table::truncate_cell(if v.is_empty() { MISSING } else { v })
                    })
                    .collect(),
            }
        })
        .collect();

    let schema_text = render_schema(&columns, &rows[..rows.len().min(MAX_ROWS)]);
    let load = if delimiter == b'\t' {
        format!("{TABLE_VAR} = pd.read_csv({}, sep='\\t')", python_str(relative))
    } else {
        format!("{TABLE_VAR} = pd.read_csv({})", python_str(relative))
    };
    let preamble = format!("import pandas as pd\n{load}");
    ProgrammaticContext::new(relative, TABLE_VAR, preamble, schema_text, columns)
}

fn is_tabular(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("csv" | "tsv")
    )
}

/// Mines every `.csv`/`.tsv` file directly under `input_dir`, in
/// lexicographic order. Unparseable files are skipped and reported.
pub fn mine_contexts(input_dir: &Path, limit: Option<usize>) -> Result<MineOutcome> {
    let entries = fs::read_dir(input_dir).map_err(|e| Error::io(input_dir, e))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_tabular(p))
        .collect();
    files.sort();

    let results: Vec<(String, Result<ProgrammaticContext>)> = files
        .par_iter()
        .map(|path| {
            let relative = path
                .strip_prefix(input_dir)
                .unwrap_or(path)
                .to_string_lossy()
                .replace('\\', "/");
            let mined = mine_file(path, &relative);
            (relative, mined)
        })
        .collect();

    let mut contexts = Vec::new();
    let mut skipped = Vec::new();
    for (relative, mined) in results {
        match mined {
            Ok(ctx) => {
                debug!(file = %relative, columns = ctx.column_count, "mined context");
                contexts.push(ctx);
            }
            Err(e) => {
                warn!(file = %relative, error = %e, "skipping unparseable file");
                skipped.push(SkippedFile {
                    path: relative,
                    reason: e.to_string(),
                });
            }
        }
    }
    if contexts.is_empty() {
        return Err(Error::EmptyCorpus(input_dir.to_path_buf()));
    }
    if let Some(limit) = limit {
        contexts.truncate(limit);
    }
    Ok(MineOutcome { contexts, skipped })
}
