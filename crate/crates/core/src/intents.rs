//! Intent generation and the ROUGE-L diversity filter.

use std::collections::HashSet;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::llm::{complete, Backend, ModelRole, PromptRequest};
use crate::model::{Intent, ProgrammaticContext};
use crate::prompt::{self, ExemplarKind, FewShotExemplar, END_MARKER};

pub const DEFAULT_THRESHOLD: f64 = 0.7;
pub const DEFAULT_INTENTS: usize = 6;

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RougeMode {
    #[default]
    F,
    P,
    R,
}

impl FromStr for RougeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f" => Ok(RougeMode::F),
            "p" => Ok(RougeMode::P),
            "r" => Ok(RougeMode::R),
            other => Err(Error::Invalid(format!("unknown rouge mode {other:?}"))),
        }
    }
}

/// ROUGE-L F-measure with equal weighting of precision and recall.
pub fn rouge_l<T: PartialEq>(a: &[T], b: &[T]) -> f64 {
    rouge_l_mode(a, b, RougeMode::F)
}

pub fn rouge_l_mode<T: PartialEq>(a: &[T], b: &[T], mode: RougeMode) -> f64 {
    let lcs = lcs_len(a, b);
    if lcs == 0 {
        return 0.0;
    }
    let p = lcs as f64 / a.len() as f64;
    let r = lcs as f64 / b.len() as f64;
    match mode {
        RougeMode::F => 2.0 * p * r / (p + r),
        RougeMode::P => p,
        RougeMode::R => r,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Duplicate,
    RougeOverlap,
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub threshold: f64,
    pub mode: RougeMode,
    /// When set, the first kept item is drawn uniformly with this seed
    /// instead of being the first candidate.
    pub random_seed: Option<u64>,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            mode: RougeMode::F,
            random_seed: None,
        }
    }
}

/// Per-candidate verdict of the greedy filter: `None` means kept.
pub fn filter_decisions(candidates: &[String], config: &FilterConfig) -> Result<Vec<Option<DropReason>>> {
    if !(config.threshold > 0.0 && config.threshold <= 1.0) {
        return Err(Error::Invalid(format!("rouge threshold {} outside (0, 1]", config.threshold)));
    }
    let tokens: Vec<Vec<String>> = candidates.iter().map(|c| tokenize(c)).collect();
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    if let (Some(seed), false) = (config.random_seed, candidates.is_empty()) {
        let first = ChaCha8Rng::seed_from_u64(seed).gen_range(0..candidates.len());
        order.remove(first);
        order.insert(0, first);
    }
    let mut decisions = vec![None; candidates.len()];
    let mut seen: HashSet<&str> = HashSet::new();
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let text = candidates[i].trim();
        decisions[i] = if text.is_empty() || tokens[i].is_empty() {
            Some(DropReason::Unparseable)
        } else if !seen.insert(text) {
            Some(DropReason::Duplicate)
        } else if kept
            .iter()
            .any(|&k| rouge_l_mode(&tokens[i], &tokens[k], config.mode) >= config.threshold)
        {
            Some(DropReason::RougeOverlap)
        } else {
            kept.push(i);
            None
        };
    }
    Ok(decisions)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedIntent {
    pub text: String,
    pub reason: DropReason,
}

/// Greedy filter seeded with the first candidate. Kept items keep their
/// input order.
pub fn diversity_filter(candidates: &[String], threshold: f64) -> Result<(Vec<String>, Vec<DroppedIntent>)> {
    let config = FilterConfig {
        threshold,
        ..FilterConfig::default()
    };
    let decisions = filter_decisions(candidates, &config)?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (text, decision) in candidates.iter().zip(decisions) {
        match decision {
            None => kept.push(text.clone()),
            Some(reason) => dropped.push(DroppedIntent {
                text: text.clone(),
                reason,
            }),
        }
    }
    Ok((kept, dropped))
}

fn task_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*Task\s+(\d+)\s*:\s*(.*)$").expect("valid regex"))
}

/// Task texts in order of appearance. Indented or wrapped lines directly
/// after a task continue it; a blank line ends it.
pub fn parse_tasks(completion: &str) -> Vec<String> {
    let mut tasks: Vec<String> = Vec::new();
    let mut open = false;
    for line in completion.lines() {
        if let Some(caps) = task_line().captures(line) {
            tasks.push(caps[2].trim().to_string());
            open = true;
        } else if line.trim().is_empty() {
            open = false;
        } else if open {
            let last = tasks.last_mut().expect("open implies a task");
            if !last.is_empty() {
                last.push(' ');
            }
            last.push_str(line.trim());
        }
    }
    tasks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentBatch {
    pub context_id: String,
    pub raw: Vec<String>,
    pub kept: Vec<Intent>,
    pub dropped: Vec<DroppedIntent>,
}

#[derive(Debug, Clone)]
pub struct IntentSettings {
    pub exemplars: Vec<FewShotExemplar>,
    pub filter: FilterConfig,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for IntentSettings {
    fn default() -> Self {
        Self {
            exemplars: prompt::default_exemplars(ExemplarKind::IntentGen),
            filter: FilterConfig::default(),
            temperature: 0.8,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

pub fn intent_prompt(context: &ProgrammaticContext, exemplars: &[FewShotExemplar]) -> Result<String> {
    prompt::assemble_prompt(ExemplarKind::IntentGen, exemplars, &prompt::intent_payload(context))
}

/// Asks the generalist for a task list, keeps the first `n` tasks and runs
/// the diversity filter over them. Ordinals are 1-based positions in the
/// parsed list, so dropped tasks leave gaps.
pub fn generate_intents(
    context: &ProgrammaticContext,
    n: usize,
    backend: &dyn Backend,
    settings: &IntentSettings,
) -> Result<IntentBatch> {
    if n == 0 {
        return Err(Error::Invalid("number of intents must be at least 1".into()));
    }
    let mut request = PromptRequest::new(ModelRole::Generalist, intent_prompt(context, &settings.exemplars)?);
    request.temperature = settings.temperature;
    request.max_tokens = settings.max_tokens;
    request.stop_sequences = vec![END_MARKER.to_string()];
    request.seed = settings.seed;
    let completion = complete(&request, backend)?.remove(0);
    let mut raw = parse_tasks(&completion);
    if raw.is_empty() {
        return Err(Error::UnparseableCompletion);
    }
    raw.truncate(n);
    let decisions = filter_decisions(&raw, &settings.filter)?;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, (text, decision)) in raw.iter().zip(decisions).enumerate() {
        match decision {
            None => kept.push(Intent::new(&context.context_id, i as u32 + 1, text)?),
            Some(reason) => dropped.push(DroppedIntent {
                text: text.clone(),
                reason,
            }),
        }
    }
    Ok(IntentBatch {
        context_id: context.context_id.clone(),
        raw,
        kept,
        dropped,
    })
}

/// Runs [`generate_intents`] over every context concurrently. Contexts whose
/// completion holds no task line are skipped with a warning; any other
/// error aborts.
pub fn generate_all(
    contexts: &[ProgrammaticContext],
    n: usize,
    backend: &dyn Backend,
    settings: &IntentSettings,
) -> Result<Vec<IntentBatch>> {
    let results: Vec<Result<IntentBatch>> = contexts
        .par_iter()
        .map(|ctx| generate_intents(ctx, n, backend, settings))
        .collect();
    let mut batches = Vec::new();
    for (ctx, result) in contexts.iter().zip(results) {
        match result {
            Ok(batch) => batches.push(batch),
            Err(Error::UnparseableCompletion) => {
                warn!(context = %ctx.context_id, "completion has no task lines");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockBackend;
    use crate::model::{ColumnProfile, Dtype};

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tokenizer_lowercases_and_splits() {
        assert_eq!(tokenize("Show df['Price'] > 3!"), s(&["show", "df", "price", "3"]));
    }

    #[test]
    fn rouge_hand_example() {
        let a = tokenize("the cat sat on mat");
        let b = tokenize("the cat ran on mat");
        assert_eq!(lcs_len(&a, &b), 4);
        assert!((rouge_l(&a, &b) - 0.8).abs() < 1e-12);
        assert_eq!(rouge_l::<String>(&[], &a), 0.0);
        assert_eq!(rouge_l(&a, &a), 1.0);
    }

    #[test]
    fn rouge_modes() {
        let a = tokenize("a b");
        let b = tokenize("a b c d");
        assert_eq!(rouge_l_mode(&a, &b, RougeMode::P), 1.0);
        assert_eq!(rouge_l_mode(&a, &b, RougeMode::R), 0.5);
    }

    #[test]
    fn duplicate_then_disjoint() {
        let (kept, dropped) = diversity_filter(&s(&["alpha beta", "alpha beta", "gamma"]), 0.7).unwrap();
        assert_eq!(kept, s(&["alpha beta", "gamma"]));
        assert_eq!(dropped.len(), 1);
        assert_eq!(dropped[0].reason, DropReason::Duplicate);
    }

    #[test]
    fn single_candidate_is_kept() {
        let (kept, dropped) = diversity_filter(&s(&["only one"]), 0.7).unwrap();
        assert_eq!(kept, s(&["only one"]));
        assert!(dropped.is_empty());
    }

    #[test]
    fn bad_threshold_is_rejected() {
        assert!(diversity_filter(&s(&["a"]), 0.0).is_err());
        assert!(diversity_filter(&s(&["a"]), 1.5).is_err());
    }

    #[test]
    fn random_seeding_keeps_the_drawn_item() {
        let cands = s(&["count the rows", "count the rows please", "plot it"]);
        let config = FilterConfig {
            random_seed: Some(3),
            ..FilterConfig::default()
        };
        let d = filter_decisions(&cands, &config).unwrap();
        assert_eq!(d.iter().filter(|x| x.is_none()).count(), 2);
        assert_eq!(d, filter_decisions(&cands, &config).unwrap());
    }

    #[test]
    fn task_lines_with_continuations() {
        let text = "preamble\nTask 1: Load the data.\nTask 2: Group by year\n  and count.\n\nnoise\nTask 10: Show a list of words\n";
        assert_eq!(
            parse_tasks(text),
            s(&["Load the data.", "Group by year and count.", "Show a list of words"])
        );
    }

    #[test]
    fn mock_generates_six_ordinals() {
        let columns = ["a", "b", "c"]
            .iter()
            .map(|n| ColumnProfile {
                name: n.to_string(),
                inferred_dtype: Dtype::Int,
                example_values: vec!["1".into()],
            })
            .collect();
        let ctx = ProgrammaticContext::new(
            "t.csv",
            "df",
            "import pandas as pd\ndf = pd.read_csv('t.csv')",
            "| a (int) | b (int) | c (int) |\n|---|\n| 1 | 1 | 1 |",
            columns,
        )
        .unwrap();
        let batch = generate_intents(&ctx, 6, &MockBackend::personas(), &IntentSettings::default()).unwrap();
        assert_eq!(batch.raw.len(), 6);
        assert_eq!(batch.kept.len() + batch.dropped.len(), 6);
        let ordinals: Vec<u32> = batch.kept.iter().map(|i| i.ordinal).collect();
        assert!(ordinals.windows(2).all(|w| w[0] < w[1]));
        assert!(ordinals.iter().all(|o| (1..=6).contains(o)));
    }

    #[test]
    fn no_task_lines_is_unparseable() {
        let ctx = ProgrammaticContext::new("t.csv", "df", "x", "| a (int) |", vec![]).unwrap();
        let backend = MockBackend::scripted(vec!["nothing here".into()]);
        let err = generate_intents(&ctx, 6, &backend, &IntentSettings::default()).unwrap_err();
        assert!(matches!(err, Error::UnparseableCompletion));
    }
}
