//! Few-shot prompt assembly for the three prompt families.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExecutionRecord, IOSpecification, Intent, ProgrammaticContext, SpecType, VarKind, VariableSnapshot};
use crate::ndr;
use crate::table::{self, format_cell};

pub const DATASET_HEADER_PREFIX: &str = "First 3 rows from dataset ";
pub const TASKS_HEADER: &str =
    "Here are a series of contextually dependent data wrangling and exploratory data\nanalysis tasks for the dataset:";
pub const CELL_MARKER: &str = "# In[ ]:";
pub const END_MARKER: &str = "[END]";
pub const SCHEMA_HEADER: &str = "Schema of Dataframes:";
pub const SOLUTION_HEADER: &str = "# The Python solution is:";
pub const EXEC_OUTPUT_HEADER: &str = "# The execution output is:";
pub const INTENT_HEADER: &str = "# The user intent is:";
pub const IO_SPEC_HEADER: &str = "# The I/O specification is:";
pub const SUMMARY_TRAILER: &str = "Here is my code solution:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExemplarKind {
    IntentGen,
    SolutionGen,
    IoSummary,
}

impl ExemplarKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExemplarKind::IntentGen => "intent_gen",
            ExemplarKind::SolutionGen => "solution_gen",
            ExemplarKind::IoSummary => "io_summary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExemplar {
    pub kind: ExemplarKind,
    pub body: String,
    pub terminator: String,
}

impl FewShotExemplar {
    pub fn new(kind: ExemplarKind, body: impl Into<String>, terminator: impl Into<String>) -> Result<Self> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(Error::Invalid("empty exemplar body".into()));
        }
        Ok(Self {
            kind,
            body,
            terminator: terminator.into(),
        })
    }

    fn render(&self) -> String {
        let body = self.body.trim_end_matches('\n');
        if self.terminator.is_empty() {
            format!("{body}\n\n")
        } else {
            format!("{body}\n{}\n\n", self.terminator)
        }
    }
}

/// Built-in exemplar for each prompt family.
pub fn default_exemplars(kind: ExemplarKind) -> Vec<FewShotExemplar> {
    let (body, terminator) = match kind {
        ExemplarKind::IntentGen => (include_str!("../assets/exemplars/intent_gen.txt"), END_MARKER),
        ExemplarKind::SolutionGen => (include_str!("../assets/exemplars/solution_gen.txt"), CELL_MARKER),
        ExemplarKind::IoSummary => (include_str!("../assets/exemplars/io_summary.txt"), END_MARKER),
    };
    vec![FewShotExemplar {
        kind,
        body: body.to_string(),
        terminator: terminator.to_string(),
    }]
}

/// Reads an exemplar record file and keeps those of `kind`.
pub fn load_exemplars(path: &Path, kind: ExemplarKind) -> Result<Vec<FewShotExemplar>> {
    let (_, all): (_, Vec<FewShotExemplar>) = ndr::read_records(path)?;
    Ok(all.into_iter().filter(|e| e.kind == kind).collect())
}

/// Exemplar bodies, each followed by its terminator, then the payload.
pub fn assemble_prompt(kind: ExemplarKind, exemplars: &[FewShotExemplar], payload: &str) -> Result<String> {
    let mut out = String::new();
    for exemplar in exemplars {
        if exemplar.kind != kind {
            return Err(Error::MixedExemplarKinds {
                expected: kind.as_str().into(),
                found: exemplar.kind.as_str().into(),
            });
        }
        out.push_str(&exemplar.render());
    }
    out.push_str(payload);
    Ok(out)
}

/// Payload asking for a numbered task list about one dataset.
pub fn intent_payload(context: &ProgrammaticContext) -> String {
    format!(
        "{DATASET_HEADER_PREFIX}{} (column data types in parentheses)\n{}\n\n{TASKS_HEADER}\n",
        context.source_path, context.schema_text
    )
}

/// `a (1), b (x)` pairs of column names and first example values.
pub fn example_values(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(name, value)| format!("{name} ({value})"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn context_example_pairs(context: &ProgrammaticContext) -> Vec<(String, String)> {
    context
        .columns
        .iter()
        .take(table::MAX_COLUMNS)
        .map(|c| {
            let value = c.example_values.first().cloned().unwrap_or_else(|| "nan".into());
            (c.name.clone(), value)
        })
        .collect()
}

fn spec_heading(spec_type: SpecType) -> &'static str {
    match spec_type {
        SpecType::TypeDesc => "Variable types:",
        SpecType::IoExamples => "Input-output Examples:",
        SpecType::IoSummary => "Input-output Summary:",
    }
}

/// Docstring block that carries a specification inside a notebook prompt.
pub fn spec_block(spec: &IOSpecification) -> String {
    let body = match spec.spec_type {
        SpecType::IoSummary => format!("{} {SUMMARY_TRAILER}", spec.rendered),
        _ => spec.rendered.clone(),
    };
    format!("\"\"\"\n{}\n{body}\n\"\"\"", spec_heading(spec.spec_type))
}

/// Notebook-style rendering of a context followed by an intent (and its
/// specification, when present), ending with an open cell for the solution.
pub fn notebook_prompt(context: &ProgrammaticContext, intent: &Intent) -> String {
    let mut out = String::new();
    out.push_str(&format!("{CELL_MARKER}\n{}\n", context.preamble_code));
    out.push_str(&format!(
        "{CELL_MARKER}\n# {SCHEMA_HEADER}\n# Columns in {} with example values:\n# {}\n",
        context.table_var,
        example_values(&context_example_pairs(context))
    ));
    out.push_str(&format!("{CELL_MARKER}\n{}\n", intent.text));
    if let Some(spec) = &intent.spec {
        out.push_str(&spec_block(spec));
        out.push('\n');
    }
    out.push_str(CELL_MARKER);
    out.push('\n');
    out
}

fn input_schema_lines(inputs: &[VariableSnapshot]) -> Vec<String> {
    let mut lines = Vec::new();
    for var in inputs {
        match (&var.columns, &var.cells) {
            (Some(columns), Some(cells)) if var.kind == VarKind::Tabular || var.kind == VarKind::Column => {
                let pairs: Vec<(String, String)> = columns
                    .iter()
                    .zip(cells)
                    .take(table::MAX_COLUMNS)
                    .map(|((name, _), col)| {
                        let value = col.first().map(format_cell).unwrap_or_else(|| "nan".into());
                        (name.clone(), table::truncate_cell(&value))
                    })
                    .collect();
                lines.push(format!("Columns in {} with example values:", var.name));
                lines.push(example_values(&pairs));
            }
            _ => lines.push(format!("{}: {}", var.name, var.type_name)),
        }
    }
    lines
}

/// Execution-output section: every output variable by name, followed by
/// its rendering, or by its type name alone when `noisy`.
pub fn execution_output_section(outputs: &[VariableSnapshot], noisy: bool) -> String {
    outputs
        .iter()
        .map(|var| {
            let body = if noisy { &var.type_name } else { &var.rendered };
            format!("{}:\n{body}", var.name)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Payload asking for an I/O summary of one execution.
pub fn io_summary_payload(record: &ExecutionRecord, solution: &str, intent_text: &str, noisy: bool) -> String {
    let mut schema = vec!["The input dataframe schema is:".to_string(), SCHEMA_HEADER.to_string()];
    schema.extend(input_schema_lines(&record.input_vars));
    format!(
        "\"\"\"\n{}\n\"\"\"\n\n{SOLUTION_HEADER}\n{}\n\n{EXEC_OUTPUT_HEADER}\n{}\n\n{INTENT_HEADER}\n{}\n\n{IO_SPEC_HEADER}\n",
        schema.join("\n"),
        solution.trim_end(),
        execution_output_section(&record.output_vars, noisy),
        intent_text.trim_end()
    )
}

/// Digit-bearing output cell values that appear in the execution-output
/// section of `prompt`. Empty for a well-formed noisy prompt.
pub fn leaked_output_values(prompt: &str, record: &ExecutionRecord) -> Vec<String> {
    let section = prompt
        .rfind(EXEC_OUTPUT_HEADER)
        .map(|start| {
            let rest = &prompt[start..];
            let end = rest.find(INTENT_HEADER).unwrap_or(rest.len());
            &rest[..end]
        })
        .unwrap_or("");
    let mut leaks: Vec<String> = record
        .output_vars
        .iter()
        .filter_map(|v| v.cells.as_ref())
        .flatten()
        .flatten()
        .map(format_cell)
        .filter(|v| v.chars().any(|c| c.is_ascii_digit()))
        .filter(|v| section.contains(v.as_str()))
        .collect();
    leaks.sort();
    leaks.dedup();
    leaks
}
