//! Chains every stage with content-addressed intermediate files.
//!
//! A stage's address hashes its name, its parameters, the addresses of the
//! stages it reads and a digest of the input directory. Its output lives at
//! `{out_dir}/{stage}-{address}.ndr`; an existing file at that path is
//! reused instead of being recomputed.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::info;

use crate::config::Config;
use crate::context::mine_contexts;
use crate::dataset::{
    attach_specs, build_mixture, corpus_stats, sample_solutions, select_examples, to_finetuning_record,
    FineTuningRecord, SamplingSettings,
};
use crate::error::{Error, Result};
use crate::execution::{execute_candidates, ContextIndex};
use crate::intents::{generate_all, FilterConfig, IntentSettings};
use crate::llm::Backend;
use crate::model::{canonical_digest, CodeCandidate, ExecutionRecord, Intent, ProgrammaticContext};
use crate::ndr::{self, Header};
use crate::prompt::{self, ExemplarKind, FewShotExemplar};
use crate::specs::{derive_specs, DeriveOptions, SpecRecord, SummarySettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    MineContexts,
    GenIntents,
    GenSolutions,
    Execute,
    DeriveSpecs,
    BuildDataset,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::MineContexts => "mine-contexts",
            Stage::GenIntents => "gen-intents",
            Stage::GenSolutions => "gen-solutions",
            Stage::Execute => "execute",
            Stage::DeriveSpecs => "derive-specs",
            Stage::BuildDataset => "build-dataset",
        }
    }

    pub fn record_kind(self) -> &'static str {
        match self {
            Stage::MineContexts => "contexts",
            Stage::GenIntents => "intents",
            Stage::GenSolutions => "candidates",
            Stage::Execute => "executions",
            Stage::DeriveSpecs => "specs",
            Stage::BuildDataset => "dataset",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::MineContexts => &[],
            Stage::GenIntents => &[Stage::MineContexts],
            Stage::GenSolutions => &[Stage::MineContexts, Stage::GenIntents],
            Stage::Execute => &[Stage::MineContexts, Stage::GenIntents, Stage::GenSolutions],
            Stage::DeriveSpecs => &[Stage::GenIntents, Stage::GenSolutions, Stage::Execute],
            Stage::BuildDataset => &[Stage::MineContexts, Stage::GenIntents, Stage::GenSolutions, Stage::Execute, Stage::DeriveSpecs],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedStage {
    pub stage: Stage,
    pub address: String,
    pub output: PathBuf,
    pub inputs: Vec<Stage>,
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub input_digest: String,
    pub stages: Vec<PlannedStage>,
}

impl Plan {
    pub fn get(&self, stage: Stage) -> Option<&PlannedStage> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Stats file written next to the dataset.
    pub fn stats_path(&self) -> Option<PathBuf> {
        self.get(Stage::BuildDataset).map(|s| s.output.with_extension("stats.json"))
    }

    pub fn mixture_path(&self) -> Option<PathBuf> {
        self.get(Stage::BuildDataset).map(|s| s.output.with_extension("mixture.json"))
    }
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(canonical_digest(&fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Digest over the sorted names and contents of the tabular input files.
pub fn input_digest(dir: &Path) -> Result<String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("csv" | "tsv")
                )
        })
        .collect();
    files.sort();
    let mut manifest = String::new();
    for file in &files {
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.push_str(&format!("{name}\t{}\n", file_digest(file)?));
    }
    Ok(canonical_digest(manifest.as_bytes()))
}

fn stage_params(config: &Config, stage: Stage) -> Result<Value> {
    let p = &config.pipeline;
    let exemplars = match &p.exemplars {
        Some(path) => Value::String(file_digest(path)?),
        None => Value::Null,
    };
    let backend = json!({
        "kind": config.backend.kind,
        "model_generalist": config.backend.model_generalist,
        "model_coder": config.backend.model_coder,
    });
    Ok(match stage {
        Stage::MineContexts => json!({"limit": p.limit}),
        Stage::GenIntents => json!({
            "seed": config.seed, "backend": backend, "exemplars": exemplars, "n": p.n_intents,
            "rouge_threshold": p.rouge_threshold, "rouge_mode": p.rouge_mode, "seed_random": p.seed_random,
        }),
        Stage::GenSolutions => json!({
            "seed": config.seed, "backend": backend, "exemplars": exemplars,
            "samples": p.samples, "temperature": p.temperature,
        }),
        Stage::Execute => {
            let source = match &config.execution.replay {
                Some(path) => json!({"replay": file_digest(path)?}),
                None => json!({"worker_command": config.execution.worker_command}),
            };
            json!({"executor": source, "timeout_ms": config.execution.timeout_ms})
        }
        Stage::DeriveSpecs => json!({
            "seed": config.seed, "backend": backend, "exemplars": exemplars, "spec_type": p.spec_type,
            "noisy": p.noisy, "include_inputs": p.include_inputs,
        }),
        Stage::BuildDataset => json!({
            "cap": p.cap,
            "mix_ratio": p.mix_ratio,
            "mix_auxiliary": match &p.mix_auxiliary { Some(a) => Value::String(file_digest(a)?), None => Value::Null },
        }),
    })
}

/// Addresses every stage. Reads inputs but writes nothing.
pub fn plan(config: &Config) -> Result<Plan> {
    let input_digest = input_digest(&config.pipeline.input_dir)?;
    let mut stages: Vec<PlannedStage> = Vec::new();
    let all = [
        Stage::MineContexts,
        Stage::GenIntents,
        Stage::GenSolutions,
        Stage::Execute,
        Stage::DeriveSpecs,
        Stage::BuildDataset,
    ];
    for stage in all {
        if stage == Stage::DeriveSpecs && config.pipeline.spec_type.is_none() {
            continue;
        }
        let params = stage_params(config, stage)?;
        let inputs: Vec<Stage> = stage
            .upstream()
            .iter()
            .copied()
            .filter(|s| stages.iter().any(|p| p.stage == *s))
            .collect();
        let mut parts: Vec<String> = vec![stage.as_str().to_string(), params.to_string(), input_digest.clone()];
        for input in &inputs {
            parts.push(stages.iter().find(|p| p.stage == *input).expect("planned").address.clone());
        }
        let address = canonical_digest(parts.join("\u{1f}").as_bytes())[..16].to_string();
        let output = config.pipeline.out_dir.join(format!("{}-{address}.ndr", stage.as_str()));
        stages.push(PlannedStage {
            stage,
            address,
            output,
            inputs,
            params,
        });
    }
    Ok(Plan { input_digest, stages })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub output: PathBuf,
    pub cached: bool,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stages: Vec<StageOutcome>,
    pub stats: Option<PathBuf>,
    pub mixture: Option<PathBuf>,
}

fn exemplars_for(config: &Config, kind: ExemplarKind) -> Result<Vec<FewShotExemplar>> {
    match &config.pipeline.exemplars {
        Some(path) => prompt::load_exemplars(path, kind),
        None => Ok(prompt::default_exemplars(kind)),
    }
}

struct Runner<'a> {
    config: &'a Config,
    backend: &'a dyn Backend,
    outcomes: Vec<StageOutcome>,
}

impl Runner<'_> {
    /// Loads the stage output when present, otherwise computes and writes it.
    fn stage<T, F>(&mut self, planned: &PlannedStage, compute: F) -> Result<Vec<T>>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Result<Vec<T>>,
    {
        let (records, cached) = if planned.output.exists() {
            let (_, records) = ndr::read_records(&planned.output)?;
            (records, true)
        } else {
            let records = compute()?;
            ndr::write_records(&planned.output, &Header::new(planned.stage.record_kind(), self.config.seed), &records)?;
            (records, false)
        };
        info!(stage = planned.stage.as_str(), cached, records = records.len(), "stage done");
        self.outcomes.push(StageOutcome {
            stage: planned.stage,
            output: planned.output.clone(),
            cached,
            records: records.len(),
        });
        Ok(records)
    }
}

/// Runs the planned stages in order, stopping after `until` when given.
pub fn run(config: &Config, backend: &dyn Backend, until: Option<Stage>) -> Result<RunSummary> {
    let plan = plan(config)?;
    let p = &config.pipeline;
    let mut runner = Runner {
        config,
        backend,
        outcomes: Vec::new(),
    };
    let done = |outcomes: Vec<StageOutcome>| RunSummary {
        seed: config.seed,
        stages: outcomes,
        stats: None,
        mixture: None,
    };
    let step = |stage: Stage| plan.get(stage).expect("stage planned");

    let contexts: Vec<ProgrammaticContext> = runner.stage(step(Stage::MineContexts), || {
        let outcome = mine_contexts(&p.input_dir, p.limit)?;
        for skipped in &outcome.skipped {
            tracing::warn!(file = %skipped.path, reason = %skipped.reason, "skipped input file");
        }
        Ok(outcome.contexts)
    })?;
    if until == Some(Stage::MineContexts) {
        return Ok(done(runner.outcomes));
    }

    let intents: Vec<Intent> = runner.stage(step(Stage::GenIntents), || {
        let settings = IntentSettings {
            exemplars: exemplars_for(config, ExemplarKind::IntentGen)?,
            filter: FilterConfig {
                threshold: p.rouge_threshold,
                mode: p.rouge_mode,
                random_seed: p.seed_random.then_some(config.seed),
            },
            seed: config.seed,
            ..IntentSettings::default()
        };
        let batches = generate_all(&contexts, p.n_intents, runner.backend, &settings)?;
        Ok(batches.into_iter().flat_map(|b| b.kept).collect())
    })?;
    if until == Some(Stage::GenIntents) {
        return Ok(done(runner.outcomes));
    }

    let candidates: Vec<CodeCandidate> = runner.stage(step(Stage::GenSolutions), || {
        let settings = SamplingSettings {
            exemplars: exemplars_for(config, ExemplarKind::SolutionGen)?,
            samples: p.samples,
            temperature: p.temperature,
            seed: config.seed,
            ..SamplingSettings::default()
        };
        let outcome = sample_solutions(&intents, &contexts, runner.backend, &settings)?;
        if outcome.extraction_failed > 0 {
            tracing::warn!(count = outcome.extraction_failed, "completions without code");
        }
        Ok(outcome.candidates)
    })?;
    if until == Some(Stage::GenSolutions) {
        return Ok(done(runner.outcomes));
    }

    let records: Vec<ExecutionRecord> = runner.stage(step(Stage::Execute), || {
        let executor = config.execution.build()?;
        let index = ContextIndex::new(&contexts, &intents);
        execute_candidates(&candidates, &index, &executor, config.execution.timeout_ms)
    })?;
    if until == Some(Stage::Execute) {
        return Ok(done(runner.outcomes));
    }

    let specs: Vec<SpecRecord> = match (p.spec_type, plan.get(Stage::DeriveSpecs)) {
        (Some(spec_type), Some(planned)) => runner.stage(planned, || {
            let options = DeriveOptions {
                include_inputs: p.include_inputs,
                summary: SummarySettings {
                    exemplars: exemplars_for(config, ExemplarKind::IoSummary)?,
                    noisy: p.noisy,
                    seed: config.seed,
                    ..SummarySettings::default()
                },
            };
            derive_specs(&records, &candidates, &intents, spec_type, runner.backend, &options)
        })?,
        _ => Vec::new(),
    };
    if until == Some(Stage::DeriveSpecs) {
        return Ok(done(runner.outcomes));
    }

    let planned = step(Stage::BuildDataset);
    let examples = attach_specs(select_examples(&records, &candidates, &intents, &contexts, p.cap)?, &specs)?;
    let _: Vec<FineTuningRecord> = runner.stage(planned, || Ok(examples.iter().map(to_finetuning_record).collect()))?;
    let stats_path = plan.stats_path().expect("dataset planned");
    let stats = corpus_stats(&examples, &records);
    ndr::write_text(&stats_path, &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    let mixture = match p.mix_ratio {
        Some(ratio) => {
            let manifest = build_mixture(&planned.output, p.mix_auxiliary.as_deref(), ratio)?;
            let path = plan.mixture_path().expect("dataset planned");
            ndr::write_text(&path, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
            Some(path)
        }
        None => None,
    };
    Ok(RunSummary {
        seed: config.seed,
        stages: runner.outcomes,
        stats: Some(stats_path),
        mixture,
    })
}
