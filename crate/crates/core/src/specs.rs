//! I/O specifications derived from execution records.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::llm::{complete, Backend, ModelRole, PromptRequest};
use crate::model::{
    CodeCandidate, ExecStatus, ExecutionRecord, IOSpecification, Intent, SpecType, VarKind, VariableSnapshot,
};
use crate::prompt::{self, ExemplarKind, FewShotExemplar, END_MARKER};
use crate::table;

/// Joins intent text and specification text.
pub const SPEC_SEPARATOR: &str = "\n";

fn ok_outputs(record: &ExecutionRecord) -> Result<&[VariableSnapshot]> {
    if record.status != ExecStatus::Ok {
        return Err(Error::NotExecutable(record.candidate_id.clone()));
    }
    if record.output_vars.is_empty() {
        return Err(Error::EmptyOutputs(record.candidate_id.clone()));
    }
    Ok(&record.output_vars)
}

pub fn derive_type_desc(record: &ExecutionRecord) -> Result<IOSpecification> {
    let text = ok_outputs(record)?
        .iter()
        .map(|v| format!("Generate a variable with name {} and type {}", v.name, v.type_name))
        .collect::<Vec<_>>()
        .join("; ");
    IOSpecification::new(SpecType::TypeDesc, text, false)
}

/// Prompt rendering of a snapshot, re-rendered from cells when available so
/// the row and column caps always apply.
fn example_rendering(var: &VariableSnapshot) -> String {
    match (&var.columns, &var.cells, var.kind) {
        (Some(columns), Some(cells), VarKind::Tabular | VarKind::Column) => {
            table::render_snapshot_table(columns, cells)
        }
        _ => var.rendered.clone(),
    }
}

fn example_entry(label: &str, var: &VariableSnapshot) -> String {
    let body = example_rendering(var);
    if body.contains('\n') || body.starts_with('|') {
        format!("{label} variable {}:\n{body}", var.name)
    } else {
        format!("{label} variable {}: {body}", var.name)
    }
}

pub fn derive_io_examples(record: &ExecutionRecord, include_inputs: bool) -> Result<IOSpecification> {
    let outputs = ok_outputs(record)?;
    let mut entries = Vec::new();
    if include_inputs {
        entries.extend(record.input_vars.iter().map(|v| example_entry("Input", v)));
    }
    entries.extend(outputs.iter().map(|v| example_entry("Output", v)));
    IOSpecification::new(SpecType::IoExamples, entries.join("\n"), false)
}

#[derive(Debug, Clone)]
pub struct SummarySettings {
    pub exemplars: Vec<FewShotExemplar>,
    pub noisy: bool,
    pub seed: u64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for SummarySettings {
    fn default() -> Self {
        Self {
            exemplars: prompt::default_exemplars(ExemplarKind::IoSummary),
            noisy: false,
            seed: 0,
            temperature: 0.0,
            max_tokens: 256,
        }
    }
}

pub fn io_summary_prompt(
    record: &ExecutionRecord,
    solution: &str,
    intent: &Intent,
    settings: &SummarySettings,
) -> Result<String> {
    let payload = prompt::io_summary_payload(record, solution, &intent.text, settings.noisy);
    prompt::assemble_prompt(ExemplarKind::IoSummary, &settings.exemplars, &payload)
}

/// Asks the generalist to summarize the execution. A summary that leaves
/// out an output variable name is retried once, then rejected.
pub fn derive_io_summary(
    record: &ExecutionRecord,
    solution: &str,
    intent: &Intent,
    backend: &dyn Backend,
    settings: &SummarySettings,
) -> Result<IOSpecification> {
    let outputs = ok_outputs(record)?;
    let mut request = PromptRequest::new(ModelRole::Generalist, io_summary_prompt(record, solution, intent, settings)?);
    request.temperature = settings.temperature;
    request.max_tokens = settings.max_tokens;
    request.stop_sequences = vec![END_MARKER.to_string()];
    for attempt in 0..2u64 {
        request.seed = settings.seed.wrapping_add(attempt);
        let text = complete(&request, backend)?.remove(0);
        let text = text.trim();
        if !text.is_empty() && outputs.iter().all(|v| text.contains(v.name.as_str())) {
            return IOSpecification::new(SpecType::IoSummary, text, settings.noisy);
        }
    }
    Err(Error::SpecRejected(record.candidate_id.clone()))
}

/// Attaches `spec`; an intent carries at most one specification.
pub fn augment_intent(intent: &Intent, spec: IOSpecification) -> Result<Intent> {
    if intent.spec.is_some() {
        return Err(Error::AlreadyAugmented(intent.intent_id.clone()));
    }
    Ok(Intent {
        spec: Some(spec),
        ..intent.clone()
    })
}

/// One derived specification, keyed by the candidate it was derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecRecord {
    pub candidate_id: String,
    pub intent_id: String,
    pub spec: IOSpecification,
}

#[derive(Debug, Clone, Default)]
pub struct DeriveOptions {
    pub include_inputs: bool,
    pub summary: SummarySettings,
}

/// Derives a `spec_type` specification for every ok record. Summaries that
/// are rejected twice are skipped. Output is sorted by candidate id.
pub fn derive_specs(
    records: &[ExecutionRecord],
    candidates: &[CodeCandidate],
    intents: &[Intent],
    spec_type: SpecType,
    backend: &dyn Backend,
    options: &DeriveOptions,
) -> Result<Vec<SpecRecord>> {
    let candidates: HashMap<&str, &CodeCandidate> =
        candidates.iter().map(|c| (c.candidate_id.as_str(), c)).collect();
    let intents: HashMap<&str, &Intent> = intents.iter().map(|i| (i.intent_id.as_str(), i)).collect();
    let ok: Vec<&ExecutionRecord> = records.iter().filter(|r| r.status == ExecStatus::Ok).collect();
    let results: Vec<Result<Option<SpecRecord>>> = ok
        .par_iter()
        .map(|record| {
            let candidate = candidates
                .get(record.candidate_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("no candidate for record {}", record.candidate_id)))?;
            let intent = intents
                .get(candidate.intent_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("no intent {}", candidate.intent_id)))?;
            let spec = match spec_type {
                SpecType::TypeDesc => derive_type_desc(record),
                SpecType::IoExamples => derive_io_examples(record, options.include_inputs),
                SpecType::IoSummary => derive_io_summary(record, &candidate.source, intent, backend, &options.summary),
            };
            match spec {
                Ok(spec) => Ok(Some(SpecRecord {
                    candidate_id: record.candidate_id.clone(),
                    intent_id: intent.intent_id.clone(),
                    spec,
                })),
                Err(Error::SpecRejected(id)) => {
                    warn!(candidate = %id, "summary rejected");
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect();
    let mut specs: Vec<SpecRecord> = results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect();
    specs.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::model::Cell;

    fn ok_record(outputs: Vec<VariableSnapshot>) -> ExecutionRecord {
        ExecutionRecord {
            status: ExecStatus::Ok,
            error_message: None,
            output_vars: outputs,
            ..ExecutionRecord::failure("cand-1", ExecStatus::Ok, "")
        }
    }

    fn table_var(name: &str, ncols: usize) -> VariableSnapshot {
        let columns = (0..ncols).map(|i| (format!("c{i}"), "int64".to_string())).collect();
        let cells = (0..ncols).map(|i| (0..5).map(|r| Cell::Int((i * 10 + r) as i64)).collect()).collect();
        VariableSnapshot::from_table(name, "pandas.core.frame.DataFrame", VarKind::Tabular, columns, cells).unwrap()
    }

    #[test]
    fn type_desc_sentences() {
        let rec = ok_record(vec![
            VariableSnapshot::scalar("a", "int", Cell::Int(1)),
            VariableSnapshot::scalar("b", "float", Cell::Float(0.5)),
        ]);
        assert_eq!(
            derive_type_desc(&rec).unwrap().rendered,
            "Generate a variable with name a and type int; Generate a variable with name b and type float"
        );
    }

    #[test]
    fn failed_records_yield_no_spec() {
        let rec = ExecutionRecord::failure("c", ExecStatus::SchemaError, "KeyError");
        assert!(matches!(derive_type_desc(&rec), Err(Error::NotExecutable(_))));
        assert!(matches!(derive_io_examples(&rec, false), Err(Error::NotExecutable(_))));
        let empty = ok_record(vec![]);
        assert!(matches!(derive_type_desc(&empty), Err(Error::EmptyOutputs(_))));
    }

    #[test]
    fn scalar_example_is_one_line() {
        let rec = ok_record(vec![VariableSnapshot::scalar("x", "float", Cell::Float(0.6))]);
        assert_eq!(derive_io_examples(&rec, false).unwrap().rendered, "Output variable x: 0.6");
    }

    #[test]
    fn wide_table_is_capped() {
        let rec = ok_record(vec![table_var("out", 50)]);
        let text = derive_io_examples(&rec, false).unwrap().rendered;
        let header = text.lines().nth(1).unwrap();
        assert_eq!(header.matches(" (int)").count(), 20);
        assert!(header.ends_with("| ... |"));
        assert_eq!(text.lines().count(), 1 + 2 + 3);
    }

    #[test]
    fn augmenting_twice_fails() {
        let intent = Intent::new("ctx-1", 1, "Count rows").unwrap();
        let spec = IOSpecification::new(SpecType::TypeDesc, "Generate a variable", false).unwrap();
        let once = augment_intent(&intent, spec.clone()).unwrap();
        assert!(once.augmented_text().ends_with("Generate a variable"));
        assert!(matches!(augment_intent(&once, spec), Err(Error::AlreadyAugmented(_))));
    }

    #[test]
    fn summary_must_name_outputs() {
        let rec = ok_record(vec![table_var("__output__", 2)]);
        let intent = Intent::new("ctx-1", 1, "Show it").unwrap();
        let good = derive_io_summary(&rec, "df", &intent, &MockBackend::personas(), &SummarySettings::default()).unwrap();
        assert!(good.rendered.starts_with("__output__: a table."));
        let bad = MockBackend::scripted(vec!["something else".into()]);
        assert!(matches!(
            derive_io_summary(&rec, "df", &intent, &bad, &SummarySettings::default()),
            Err(Error::SpecRejected(_))
        ));
    }
}
