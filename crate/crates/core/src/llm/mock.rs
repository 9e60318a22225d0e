//! Deterministic offline backend.
//!
//! In persona mode the reply depends on the role and the shape of the
//! prompt: the generalist either writes a numbered task list or an I/O
//! summary, the coder writes a fenced solution over the prompt's columns.
//! Every completion is a pure function of (prompt, seed, sample index).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{Backend, ModelRole, PromptRequest};
use crate::error::{Error, Result};
use crate::prompt::{
    CELL_MARKER, DATASET_HEADER_PREFIX, END_MARKER, EXEC_OUTPUT_HEADER, INTENT_HEADER, IO_SPEC_HEADER,
};

const SUMMARY_SCHEMA_MARKER: &str = "The input dataframe schema is:";
const NOTEBOOK_COLUMNS_MARKER: &str = "# Columns in ";

#[derive(Debug, Clone)]
enum Mode {
    Personas,
    Scripted(Vec<String>),
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    mode: Mode,
}

impl MockBackend {
    /// Role- and prompt-aware replies; used by the offline pipeline.
    pub fn personas() -> Self {
        Self { mode: Mode::Personas }
    }

    /// Replies with `script[i % len]` for sample `i`.
    pub fn scripted(script: Vec<String>) -> Self {
        Self {
            mode: Mode::Scripted(script),
        }
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn generate(&self, request: &PromptRequest) -> Result<Vec<String>> {
        (0..request.n_samples)
            .map(|i| match &self.mode {
                Mode::Scripted(script) if script.is_empty() => Err(Error::Backend("empty mock script".into())),
                Mode::Scripted(script) => Ok(script[i as usize % script.len()].clone()),
                Mode::Personas => Ok(persona_reply(request, i)),
            })
            .collect()
    }
}

fn sample_rng(prompt: &str, seed: u64, index: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(prompt.as_bytes());
    hasher.update(seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

fn persona_reply(request: &PromptRequest, index: u32) -> String {
    let mut rng = sample_rng(&request.prompt_text, request.seed, index);
    match request.role {
        ModelRole::Coder => coder_reply(&request.prompt_text, &mut rng),
        ModelRole::Generalist if request.prompt_text.trim_end().ends_with(IO_SPEC_HEADER) => {
            summary_reply(&request.prompt_text)
        }
        ModelRole::Generalist => intent_reply(&request.prompt_text, &mut rng),
    }
}

/// Column names from the last `| name (dtype) | ...` header after the
/// final dataset marker.
fn payload_columns(prompt: &str) -> Vec<String> {
    let tail = prompt.rfind(DATASET_HEADER_PREFIX).map_or(prompt, |i| &prompt[i..]);
    tail.lines()
        .find(|l| l.starts_with('|'))
        .map(header_names)
        .unwrap_or_default()
}

fn header_names(header: &str) -> Vec<String> {
    header
        .trim()
        .trim_matches('|')
        .split(" | ")
        .map(|cell| {
            let cell = cell.trim();
            match cell.rfind(" (") {
                Some(i) if cell.ends_with(')') => cell[..i].to_string(),
                _ => cell.to_string(),
            }
        })
        .filter(|c| !c.is_empty() && c != "...")
        .collect()
}

/// Names out of an `a (1), b (x)` example-values line.
fn example_value_names(line: &str) -> Vec<String> {
    line.split("), ")
        .filter_map(|part| part.rfind(" (").map(|i| part[..i].trim().to_string()))
        .filter(|n| !n.is_empty())
        .collect()
}

const TASK_TEMPLATES: &[&str] = &[
    "How many rows does the dataset contain?",
    "Show the distinct values of {a} and how often each occurs.",
    "What is the average {b} for each {a}?",
    "List the five records with the largest {b}.",
    "Drop every row that has a missing {c}.",
    "Which {a} appears most frequently?",
    "Compute summary statistics of {b} grouped by {c}.",
    "Create a new column flagging rows where {b} exceeds its median.",
    "Sort the table by {c} in descending order and keep the first ten.",
    "Count the unique values in every column.",
    "Pivot the data so each {a} is a row and each {c} is a column.",
    "Find the correlation between {b} and {c}.",
];

fn intent_reply(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let mut columns = payload_columns(prompt);
    if columns.is_empty() {
        columns.push("value".into());
    }
    let pick = |i: usize| columns[i % columns.len()].clone();
    let (a, b, c) = (pick(0), pick(1), pick(2));
    let mut order: Vec<usize> = (0..TASK_TEMPLATES.len()).collect();
    order.shuffle(rng);
    let mut out = String::new();
    for (k, t) in order.iter().take(10).enumerate() {
        let text = TASK_TEMPLATES[*t].replace("{a}", &a).replace("{b}", &b).replace("{c}", &c);
        out.push_str(&format!("Task {}: {text}\n", k + 1));
    }
    out.push_str(END_MARKER);
    out.push_str("\n\nFirst 3 rows from dataset unrelated.csv (column data types in parentheses)\n");
    out
}

fn coder_reply(prompt: &str, rng: &mut ChaCha8Rng) -> String {
    let tail = prompt.rfind(NOTEBOOK_COLUMNS_MARKER).map_or("", |i| &prompt[i..]);
    let mut lines = tail.lines();
    let var = lines
        .next()
        .and_then(|l| l.strip_prefix(NOTEBOOK_COLUMNS_MARKER))
        .and_then(|l| l.split_whitespace().next())
        .unwrap_or("df")
        .to_string();
    let columns = lines
        .next()
        .map(|l| example_value_names(l.trim_start_matches('#').trim()))
        .unwrap_or_default();
    let column = if columns.is_empty() {
        "value".to_string()
    } else {
        columns[rng.gen_range(0..columns.len())].clone()
    };
    let template = rng.gen_range(0..5u32);
    let code = match template {
        0 => format!("{var}['{column}'].value_counts()"),
        1 => format!("{var}.groupby('{column}').size()"),
        2 => format!("{var}.sort_values('{column}').head(5)"),
        3 => format!("{var}.describe()"),
        _ => format!("{var}.dropna()"),
    };
    format!("```python\n{code}\n```\n{CELL_MARKER}\nprint('done')\n")
}

fn summary_reply(prompt: &str) -> String {
    let tail = prompt.rfind(SUMMARY_SCHEMA_MARKER).map_or(prompt, |i| &prompt[i..]);
    let mut input_columns: Vec<String> = Vec::new();
    let mut lines = tail.lines().peekable();
    while let Some(line) = lines.next() {
        if line.starts_with("Columns in ") && line.ends_with("with example values:") {
            if let Some(values) = lines.peek() {
                input_columns.extend(example_value_names(values));
            }
        }
        if line.starts_with('#') {
            break;
        }
    }
    input_columns.sort();
    input_columns.dedup();
    input_columns.truncate(3);

    let section = tail
        .find(EXEC_OUTPUT_HEADER)
        .map(|i| {
            let rest = &tail[i + EXEC_OUTPUT_HEADER.len()..];
            &rest[..rest.find(INTENT_HEADER).unwrap_or(rest.len())]
        })
        .unwrap_or("");
    let section_lines: Vec<&str> = section.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut sentences = Vec::new();
    let mut output_columns: Vec<String> = Vec::new();
    let mut i = 0;
    while i < section_lines.len() {
        let line = section_lines[i];
        if let Some(name) = line.strip_suffix(':').filter(|n| !n.contains(' ') && !n.starts_with('|')) {
            let body = section_lines.get(i + 1).copied().unwrap_or("");
            if body.starts_with('|') {
                sentences.push(format!("{name}: a table."));
                if output_columns.is_empty() {
                    output_columns = header_names(body);
                    output_columns.truncate(3);
                }
            } else {
                sentences.push(format!("{name}: a {}.", body.trim()));
            }
            i += 2;
            while i < section_lines.len() && section_lines[i].starts_with('|') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    let mut out = sentences.join(" ");
    if !input_columns.is_empty() {
        out.push_str(&format!(
            " Given the user intent and the code, the salient columns (at most given 3) in the input dataframe are {}.",
            input_columns.join(", ")
        ));
    }
    if !output_columns.is_empty() {
        out.push_str(&format!(
            " The output dataframe has columns (at most given 3) such as {}.",
            output_columns.join(", ")
        ));
    }
    format!("{}\n{END_MARKER}\n", out.trim())
}
