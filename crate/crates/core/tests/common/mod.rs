#![allow(dead_code)]

use std::path::PathBuf;

use specforge_core::model::{Cell, ExecStatus, ExecutionRecord, Intent, VarKind, VariableSnapshot};

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

/// Compares `actual` with a golden file; `SPECFORGE_BLESS=1` rewrites it.
pub fn golden(name: &str, actual: &str) -> bool {
    let path = golden_dir().join(name);
    if std::env::var_os("SPECFORGE_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
    }
    match std::fs::read_to_string(&path) {
        Ok(expected) => expected == actual,
        Err(_) => false,
    }
}

fn text(values: &[&str]) -> Vec<Cell> {
    values.iter().map(|v| Cell::Text(v.to_string())).collect()
}

/// An executed average-price solution with a table output and a scalar.
pub fn spec_record() -> ExecutionRecord {
    let input = VariableSnapshot::from_table(
        "df",
        "pandas.core.frame.DataFrame",
        VarKind::Tabular,
        vec![
            ("city".into(), "object".into()),
            ("units".into(), "int64".into()),
            ("price".into(), "float64".into()),
        ],
        vec![
            text(&["Oslo", "Lima", "Oslo", "Pune"]),
            vec![Cell::Int(3), Cell::Int(5), Cell::Int(11), Cell::Int(20)],
            vec![Cell::Float(2.5), Cell::Float(4.0), Cell::Float(6.5), Cell::Float(1.25)],
        ],
    )
    .unwrap();
    let table = VariableSnapshot::from_table(
        "avg_price",
        "pandas.core.frame.DataFrame",
        VarKind::Tabular,
        vec![("city".into(), "object".into()), ("price".into(), "float64".into())],
        vec![text(&["Lima", "Oslo", "Pune"]), vec![Cell::Float(12.75), Cell::Float(8.4), Cell::Float(3.1)]],
    )
    .unwrap();
    let total = VariableSnapshot::scalar("total", "int", Cell::Int(57));
    ExecutionRecord {
        candidate_id: "cand-0000000000000001".into(),
        status: ExecStatus::Ok,
        error_message: None,
        input_vars: vec![input],
        output_vars: vec![table, total],
        mutated_vars: Vec::new(),
        api_calls: vec!["df.groupby".into(), "df.mean".into(), "df.sum".into()],
        stdout_excerpt: String::new(),
        duration_ms: 9,
    }
}

pub const SPEC_SOLUTION: &str =
    "avg_price = df.groupby('city')[['price']].mean().reset_index()\ntotal = df['units'].sum()";

pub fn spec_intent() -> Intent {
    Intent::new("ctx-0000000000000001", 1, "What is the average price per city, and how many units were sold?").unwrap()
}
