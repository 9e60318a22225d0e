//! Synthetic inputs and recorded executions for tests and benches.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use crate::error::{Error, Result};
use crate::model::{
    canonical_digest, Cell, CodeCandidate, ExecStatus, ExecutionRecord, ProgrammaticContext, VarKind,
    VariableSnapshot, OUTPUT_VAR,
};

const CITIES: &[&str] = &["Oslo", "Lima", "Pune", "Kyiv", "Doha", "Rome", "Baku"];
const PRODUCTS: &[&str] = &["tea", "coffee", "juice", "water", "soda"];

/// Writes `count` small CSV files with varied columns into `dir`.
pub fn write_synthetic_csvs(dir: &Path, count: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let extra = i % 3;
        let mut header = vec!["id", "city", "product", "units", "price"];
        header.extend(["rating", "in_stock", "sold_on"].iter().take(extra));
        let mut text = header.join(",");
        text.push('\n');
        for row in 0..(5 + i % 4) {
            let mut cells = vec![
                (row + 1).to_string(),
                CITIES[rng.gen_range(0..CITIES.len())].to_string(),
                PRODUCTS[rng.gen_range(0..PRODUCTS.len())].to_string(),
                rng.gen_range(1..40).to_string(),
                format!("{:.2}", rng.gen_range(0.5..20.0)),
            ];
            let tail = [
                format!("{:.1}", rng.gen_range(1.0..5.0)),
                if rng.gen_bool(0.5) { "true" } else { "false" }.to_string(),
                format!("2023-{:02}-{:02}", rng.gen_range(1..13), rng.gen_range(1..29)),
            ];
            cells.extend(tail.into_iter().take(extra));
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let path = dir.join(format!("sales_{i:03}.csv"));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn method_calls() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\.([A-Za-z_][A-Za-z0-9_]*)\(").expect("valid regex"))
}

/// Dotted call paths in `code`, rooted at the table variable.
pub fn api_calls_of(code: &str, table_var: &str) -> Vec<String> {
    let mut calls: Vec<String> = method_calls()
        .captures_iter(code)
        .map(|c| format!("{table_var}.{}", &c[1]))
        .collect();
    calls.dedup();
    calls
}

/// Snapshot of the context's table as the worker would trace it.
pub fn input_snapshot(context: &ProgrammaticContext) -> Result<VariableSnapshot> {
    let columns = context
        .columns
        .iter()
        .map(|c| (c.name.clone(), c.inferred_dtype.as_str().to_string()))
        .collect();
    let cells = context
        .columns
        .iter()
        .map(|c| c.example_values.iter().map(|v| Cell::Text(v.clone())).collect())
        .collect();
    VariableSnapshot::from_table(&context.table_var, "pandas.core.frame.DataFrame", VarKind::Tabular, columns, cells)
}

/// A two-column output table whose values derive from the candidate id.
pub fn output_snapshot(candidate: &CodeCandidate) -> Result<VariableSnapshot> {
    let seed = u64::from_str_radix(&canonical_digest(candidate.candidate_id.as_bytes())[..16], 16).unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = 3;
    let labels: Vec<Cell> = (0..rows).map(|_| Cell::Text(CITIES[rng.gen_range(0..CITIES.len())].into())).collect();
    let values: Vec<Cell> = (0..rows).map(|_| Cell::Int(rng.gen_range(0..100))).collect();
    VariableSnapshot::from_table(
        OUTPUT_VAR,
        "pandas.core.frame.DataFrame",
        VarKind::Tabular,
        vec![("label".into(), "object".into()), ("value".into(), "int64".into())],
        vec![labels, values],
    )
}

const FAILURES: [(ExecStatus, &str); 4] = [
    (ExecStatus::SyntaxError, "SyntaxError: invalid syntax"),
    (ExecStatus::SchemaError, "KeyError: 'missing_column'"),
    (ExecStatus::RuntimeError, "ZeroDivisionError: division by zero"),
    (ExecStatus::NoOutput, "no meaningful output variable"),
];

/// Fabricates one record per candidate. Candidates for which `ok` holds get
/// an ok record with a table output; the rest cycle through failure kinds.
pub fn fabricate_records(
    candidates: &[CodeCandidate],
    context_of: impl Fn(&CodeCandidate) -> Option<ProgrammaticContext>,
    ok: impl Fn(&CodeCandidate) -> bool,
) -> Result<Vec<ExecutionRecord>> {
    let mut failures = 0usize;
    let mut records = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let context = context_of(candidate)
            .ok_or_else(|| Error::Invalid(format!("no context for candidate {}", candidate.candidate_id)))?;
        let api_calls = api_calls_of(&candidate.source, &context.table_var);
        let record = if ok(candidate) {
            ExecutionRecord {
                candidate_id: candidate.candidate_id.clone(),
                status: ExecStatus::Ok,
                error_message: None,
                input_vars: vec![input_snapshot(&context)?],
                output_vars: vec![output_snapshot(candidate)?],
                mutated_vars: Vec::new(),
                api_calls,
                stdout_excerpt: String::new(),
                duration_ms: 12,
            }
        } else {
            let (status, message) = FAILURES[failures % FAILURES.len()];
            failures += 1;
            ExecutionRecord {
                api_calls: if status == ExecStatus::SyntaxError { Vec::new() } else { api_calls },
                duration_ms: 5,
                ..ExecutionRecord::failure(&candidate.candidate_id, status, message)
            }
        };
        records.push(record);
    }
    records.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(records)
}
