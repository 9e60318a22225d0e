//! Running candidates after their contexts and classifying the outcome.

mod pool;
mod protocol;
mod replay;

use std::collections::{BTreeMap, HashMap};

pub use pool::{grace_ms, Job, PoolConfig, WorkerPool, DEFAULT_HARD_CAP_MS, DEFAULT_TIMEOUT_MS};
pub use protocol::{
    classify_error, record_from_response, ExecRequest, FromWorker, Outcome, ToWorker, WorkerResponse, PROTOCOL_VERSION,
};
pub use replay::ReplayStore;

use crate::error::{Error, Result};
use crate::model::{CodeCandidate, ExecStatus, ExecutionRecord, Intent, ProgrammaticContext};

/// Where candidates get executed.
pub enum Executor {
    Live(WorkerPool),
    Replay(ReplayStore),
}

/// Resolves an intent id to the context its candidates run after.
pub struct ContextIndex<'a> {
    by_intent: HashMap<&'a str, &'a ProgrammaticContext>,
}

impl<'a> ContextIndex<'a> {
    pub fn new(contexts: &'a [ProgrammaticContext], intents: &'a [Intent]) -> Self {
        let by_id: HashMap<&str, &ProgrammaticContext> =
            contexts.iter().map(|c| (c.context_id.as_str(), c)).collect();
        let by_intent = intents
            .iter()
            .filter_map(|i| by_id.get(i.context_id.as_str()).map(|c| (i.intent_id.as_str(), *c)))
            .collect();
        Self { by_intent }
    }

    pub fn context_for(&self, intent_id: &str) -> Option<&'a ProgrammaticContext> {
        self.by_intent.get(intent_id).copied()
    }
}

/// One record per candidate, sorted by candidate id.
pub fn execute_candidates(
    candidates: &[CodeCandidate],
    contexts: &ContextIndex<'_>,
    executor: &Executor,
    timeout_ms: u64,
) -> Result<Vec<ExecutionRecord>> {
    let mut jobs = Vec::with_capacity(candidates.len());
    for candidate in candidates {
        let context = contexts.context_for(&candidate.intent_id).ok_or_else(|| {
            Error::Invalid(format!(
                "candidate {} references unknown intent {}",
                candidate.candidate_id, candidate.intent_id
            ))
        })?;
        jobs.push(Job {
            candidate_id: candidate.candidate_id.clone(),
            request: ExecRequest::new(
                &candidate.candidate_id,
                &context.preamble_code,
                &candidate.source,
                timeout_ms,
            ),
        });
    }
    let mut records = match executor {
        Executor::Live(pool) => pool.run(jobs)?,
        Executor::Replay(store) => jobs
            .iter()
            .map(|job| store.lookup(&job.candidate_id))
            .collect::<Result<Vec<_>>>()?,
    };
    records.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    Ok(records)
}

/// Fraction of records with status `ok`.
pub fn execution_rate(records: &[ExecutionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Domain("execution rate of an empty record set".into()));
    }
    let ok = records.iter().filter(|r| r.status == ExecStatus::Ok).count();
    Ok(ok as f64 / records.len() as f64)
}

/// Count per status, with every status present.
pub fn status_histogram(records: &[ExecutionRecord]) -> BTreeMap<ExecStatus, usize> {
    let mut histogram: BTreeMap<ExecStatus, usize> = ExecStatus::ALL.iter().map(|s| (*s, 0)).collect();
    for record in records {
        *histogram.entry(record.status).or_default() += 1;
    }
    histogram
}
