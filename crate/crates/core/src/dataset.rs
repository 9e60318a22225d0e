//! Solution sampling, example selection and fine-tuning dataset output.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::debug;

use crate::error::{Error, Result};
use crate::execution::status_histogram;
use crate::llm::{complete, Backend, ModelRole, PromptRequest};
use crate::model::{
    canonical_digest, content_id, CodeCandidate, ExecStatus, ExecutionRecord, Intent, ProgrammaticContext,
    SpecType, SyntheticExample,
};
use crate::ndr;
use crate::prompt::{self, ExemplarKind, FewShotExemplar, CELL_MARKER};
use crate::specs::{augment_intent, SpecRecord};

pub const DEFAULT_SAMPLES: u32 = 5;
pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_CAP: usize = 2;
/// Label used in statistics and metadata for examples without a spec.
pub const NO_SPEC: &str = "none";

/// Guest code inside the first fenced block, or else everything before
/// the first cell marker. `None` when nothing non-blank remains.
pub fn extract_code(completion: &str) -> Option<String> {
    let code = if let Some(start) = completion.find("```") {
        let after = &completion[start + 3..];
        let body = match after.find('\n') {
            Some(nl) if after[..nl].trim().chars().all(|c| c.is_alphanumeric()) => &after[nl + 1..],
            _ => after,
        };
        body.find("```").map_or(body, |end| &body[..end])
    } else {
        completion.find(CELL_MARKER).map_or(completion, |end| &completion[..end])
    };
    let code = code.trim_matches('\n').trim_end();
    (!code.trim().is_empty()).then(|| code.to_string())
}

#[derive(Debug, Clone)]
pub struct SamplingSettings {
    pub exemplars: Vec<FewShotExemplar>,
    pub samples: u32,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for SamplingSettings {
    fn default() -> Self {
        Self {
            exemplars: prompt::default_exemplars(ExemplarKind::SolutionGen),
            samples: DEFAULT_SAMPLES,
            temperature: DEFAULT_TEMPERATURE,
            max_tokens: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SamplingOutcome {
    pub candidates: Vec<CodeCandidate>,
    /// Completions from which no code could be extracted.
    pub extraction_failed: usize,
}

pub fn solution_prompt(context: &ProgrammaticContext, intent: &Intent, exemplars: &[FewShotExemplar]) -> Result<String> {
    prompt::assemble_prompt(ExemplarKind::SolutionGen, exemplars, &prompt::notebook_prompt(context, intent))
}

/// Draws `samples` completions per intent. Sample indices run 0..samples;
/// a completion without code is dropped and counted, leaving a gap.
pub fn sample_solutions(
    intents: &[Intent],
    contexts: &[ProgrammaticContext],
    backend: &dyn Backend,
    settings: &SamplingSettings,
) -> Result<SamplingOutcome> {
    if settings.samples == 0 {
        return Err(Error::Invalid("samples per intent must be at least 1".into()));
    }
    let by_id: HashMap<&str, &ProgrammaticContext> = contexts.iter().map(|c| (c.context_id.as_str(), c)).collect();
    let per_intent: Vec<Result<(Vec<CodeCandidate>, usize)>> = intents
        .par_iter()
        .map(|intent| {
            let context = by_id
                .get(intent.context_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("intent {} references unknown context", intent.intent_id)))?;
            let mut request =
                PromptRequest::new(ModelRole::Coder, solution_prompt(context, intent, &settings.exemplars)?);
            request.n_samples = settings.samples;
            request.temperature = settings.temperature;
            request.max_tokens = settings.max_tokens;
            request.stop_sequences = vec![CELL_MARKER.to_string()];
            request.seed = settings.seed;
            let mut out = Vec::new();
            let mut failed = 0;
            for (i, completion) in complete(&request, backend)?.iter().enumerate() {
                match extract_code(completion) {
                    Some(code) => out.push(CodeCandidate::new(&intent.intent_id, i as u32, code, settings.temperature)?),
                    None => {
                        debug!(intent = %intent.intent_id, sample = i, "no code in completion");
                        failed += 1;
                    }
                }
            }
            Ok((out, failed))
        })
        .collect();
    let mut outcome = SamplingOutcome::default();
    for result in per_intent {
        let (candidates, failed) = result?;
        outcome.candidates.extend(candidates);
        outcome.extraction_failed += failed;
    }
    Ok(outcome)
}

/// Greedy choice of up to `cap` items, each maximizing the number of API
/// calls not yet covered, ties to the earlier item. Returns positions in
/// `calls` paired with their marginal gain.
pub fn greedy_api_selection(calls: &[BTreeSet<String>], cap: usize) -> Vec<(usize, usize)> {
    let mut covered: BTreeSet<&str> = BTreeSet::new();
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    while chosen.len() < cap {
        let best = (0..calls.len())
            .filter(|i| !chosen.iter().any(|(c, _)| c == i))
            .map(|i| (i, calls[i].iter().filter(|c| !covered.contains(c.as_str())).count()))
            .fold(None, |best: Option<(usize, usize)>, (i, gain)| match best {
                Some((_, g)) if g >= gain => best,
                _ => Some((i, gain)),
            });
        let Some((i, gain)) = best else { break };
        covered.extend(calls[i].iter().map(String::as_str));
        chosen.push((i, gain));
    }
    chosen
}

/// Keeps ok executions and, within each intent, up to `cap` candidates
/// chosen for API-call diversity. Intents come out in input order.
pub fn select_examples(
    records: &[ExecutionRecord],
    candidates: &[CodeCandidate],
    intents: &[Intent],
    contexts: &[ProgrammaticContext],
    cap: usize,
) -> Result<Vec<SyntheticExample>> {
    let records: HashMap<&str, &ExecutionRecord> = records.iter().map(|r| (r.candidate_id.as_str(), r)).collect();
    let contexts: HashMap<&str, &ProgrammaticContext> = contexts.iter().map(|c| (c.context_id.as_str(), c)).collect();
    let mut by_intent: HashMap<&str, Vec<(&CodeCandidate, &ExecutionRecord)>> = HashMap::new();
    for candidate in candidates {
        let record = records
            .get(candidate.candidate_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("no execution record for {}", candidate.candidate_id)))?;
        if record.status == ExecStatus::Ok {
            by_intent.entry(candidate.intent_id.as_str()).or_default().push((candidate, record));
        }
    }
    let mut examples = Vec::new();
    for intent in intents {
        let Some(mut pool) = by_intent.remove(intent.intent_id.as_str()) else { continue };
        let context = contexts
            .get(intent.context_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("intent {} references unknown context", intent.intent_id)))?;
        pool.sort_by_key(|(c, _)| (c.sample_index, c.candidate_id.clone()));
        let calls: Vec<BTreeSet<String>> = pool.iter().map(|(_, r)| r.api_calls.iter().cloned().collect()).collect();
        for (rank, (i, gain)) in greedy_api_selection(&calls, cap).into_iter().enumerate() {
            let (candidate, record) = pool[i];
            let reason = format!("api_diversity rank {} of {cap}, {gain} new api calls", rank + 1);
            examples.push(SyntheticExample::new((*context).clone(), intent.clone(), candidate, record, reason)?);
        }
    }
    Ok(examples)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub example_id: String,
    pub context_id: String,
    pub intent_id: String,
    pub candidate_id: String,
    pub spec_type: String,
    pub provenance: crate::model::Provenance,
}

/// One fine-tuning pair: the notebook prompt and the solution to emit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuningRecord {
    pub input: String,
    pub target: String,
    pub meta: RecordMeta,
}

pub fn spec_label(example: &SyntheticExample) -> &'static str {
    example.intent.spec.as_ref().map_or(NO_SPEC, |s| s.spec_type.as_str())
}

pub fn to_finetuning_record(example: &SyntheticExample) -> FineTuningRecord {
    let input = prompt::notebook_prompt(&example.context, &example.intent);
    let example_id = content_id("ex", &[&example.provenance.candidate_id, &input]);
    FineTuningRecord {
        input,
        target: example.solution.clone(),
        meta: RecordMeta {
            example_id,
            context_id: example.context.context_id.clone(),
            intent_id: example.intent.intent_id.clone(),
            candidate_id: example.provenance.candidate_id.clone(),
            spec_type: spec_label(example).to_string(),
            provenance: example.provenance.clone(),
        },
    }
}

/// Attaches the spec derived from each example's own candidate. Examples
/// without one stay unaugmented.
pub fn attach_specs(examples: Vec<SyntheticExample>, specs: &[SpecRecord]) -> Result<Vec<SyntheticExample>> {
    let by_candidate: HashMap<&str, &SpecRecord> = specs.iter().map(|s| (s.candidate_id.as_str(), s)).collect();
    examples
        .into_iter()
        .map(|mut example| {
            if let Some(spec) = by_candidate.get(example.provenance.candidate_id.as_str()) {
                example.intent = augment_intent(&example.intent, spec.spec.clone())?;
            }
            Ok(example)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSource {
    pub path: String,
    pub weight: f64,
    pub records: usize,
    pub digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub schema_version: u32,
    pub sources: Vec<MixtureSource>,
}

fn describe_source(path: &Path, weight: f64) -> Result<MixtureSource> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8_lossy(&bytes);
    let (_, records): (_, Vec<Value>) = ndr::from_str(&text, path)?;
    Ok(MixtureSource {
        path: path.to_string_lossy().into_owned(),
        weight,
        records: records.len(),
        digest: canonical_digest(&bytes),
    })
}

/// Manifest interleaving the synthetic file with an auxiliary corpus.
/// `ratio` is the synthetic share in (0, 1].
pub fn build_mixture(synthetic: &Path, auxiliary: Option<&Path>, ratio: f64) -> Result<MixtureManifest> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Invalid(format!("mixture ratio {ratio} outside (0, 1]")));
    }
    let mut sources = vec![describe_source(synthetic, ratio)?];
    if ratio < 1.0 {
        let auxiliary = auxiliary.ok_or(Error::MissingAuxiliary(ratio))?;
        sources.push(describe_source(auxiliary, 1.0 - ratio)?);
    }
    Ok(MixtureManifest {
        schema_version: ndr::SCHEMA_VERSION,
        sources,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub example_count: usize,
    pub record_count: usize,
    pub execution_rate: f64,
    pub status_histogram: BTreeMap<String, usize>,
    pub distinct_api_calls: usize,
    pub spec_type_counts: BTreeMap<String, usize>,
}

pub fn corpus_stats(examples: &[SyntheticExample], records: &[ExecutionRecord]) -> CorpusStats {
    let ok = records.iter().filter(|r| r.status == ExecStatus::Ok).count();
    let execution_rate = if records.is_empty() { 0.0 } else { ok as f64 / records.len() as f64 };
    let status_histogram = status_histogram(records)
        .into_iter()
        .map(|(s, n)| (s.as_str().to_string(), n))
        .collect();
    let distinct_api_calls = examples
        .iter()
        .flat_map(|e| e.provenance.api_calls.iter())
        .collect::<BTreeSet<_>>()
        .len();
    let mut spec_type_counts: BTreeMap<String, usize> = SpecType::ALL
        .iter()
        .map(|t| t.as_str())
        .chain([NO_SPEC])
        .map(|t| (t.to_string(), 0))
        .collect();
    for example in examples {
        *spec_type_counts.entry(spec_label(example).to_string()).or_default() += 1;
    }
    CorpusStats {
        example_count: examples.len(),
        record_count: records.len(),
        execution_rate,
        status_histogram,
        distinct_api_calls,
        spec_type_counts,
    }
}
