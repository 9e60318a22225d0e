//! `specforge` command-line entry point.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::{json, Value};
use tracing_subscriber::EnvFilter;

use specforge_core::config::Config;
use specforge_core::context::mine_contexts;
use specforge_core::dataset::{
    attach_specs, build_mixture, corpus_stats, sample_solutions, select_examples, to_finetuning_record,
    FineTuningRecord, SamplingSettings,
};
use specforge_core::eval::{error_report, pass_at_k, score_corpus, EvalProblem, PredictionRecord, ScoreOptions};
use specforge_core::execution::{execute_candidates, execution_rate, ContextIndex, Executor, ReplayStore};
use specforge_core::intents::{generate_all, FilterConfig, IntentSettings, RougeMode};
use specforge_core::llm::Backend;
use specforge_core::model::{CodeCandidate, ExecutionRecord, Intent, ProgrammaticContext, SpecType};
use specforge_core::ndr::{self, Header};
use specforge_core::pipeline::{self, Stage};
use specforge_core::prompt::{default_exemplars, load_exemplars, ExemplarKind, FewShotExemplar};
use specforge_core::specs::{derive_specs, DeriveOptions, SpecRecord, SummarySettings};
use specforge_core::{EquivalenceOptions, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "specforge", version, about = "Execution-grounded instruction data synthesis and pass@k evaluation")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// TOML run configuration; stage flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for sampling and filtering. Defaults to the config seed, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Raise log verbosity on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Turn a directory of tabular files into programmatic contexts.
    MineContexts {
        #[arg(long)]
        input_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Generate and diversity-filter intents for every context.
    GenIntents {
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long, default_value_t = 6)]
        n: usize,
        #[arg(long, default_value_t = 0.7)]
        rouge_threshold: f64,
        #[arg(long, default_value = "f")]
        rouge_mode: RougeMode,
        /// Seed the kept set with a random candidate instead of the first.
        #[arg(long)]
        seed_random: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample code solutions for every intent.
    GenSolutions {
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        intents: PathBuf,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        samples: u32,
        #[arg(long, default_value_t = 0.8)]
        temperature: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run candidates in sandbox workers or serve them from a replay file.
    Execute(ExecuteArgs),
    /// Derive I/O specifications from ok executions.
    DeriveSpecs {
        #[arg(long)]
        executions: PathBuf,
        #[arg(long)]
        intents: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        spec_type: SpecType,
        #[arg(long)]
        noisy: bool,
        #[arg(long)]
        include_inputs: bool,
        #[arg(long)]
        exemplars: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Select executable solutions and write fine-tuning records.
    BuildDataset {
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        intents: PathBuf,
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        executions: PathBuf,
        #[arg(long)]
        specs: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        cap: usize,
        /// Auxiliary corpus to mix with the synthetic records.
        #[arg(long)]
        mix: Option<PathBuf>,
        /// Synthetic share of the mixture.
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Score predictions against reference outputs with pass@k.
    Evaluate {
        #[arg(long)]
        problems: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,5,20")]
        k: Vec<u64>,
        #[arg(long, default_value_t = specforge_core::eval::DEFAULT_TOL)]
        tol: f64,
        #[arg(long)]
        sorted_rows: bool,
        /// Report the fraction of the first k samples instead of the unbiased estimate.
        #[arg(long)]
        empirical: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate execution statuses.
    Report {
        #[arg(long)]
        executions: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the unbiased pass@k estimate.
    PassAtK {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        c: u64,
        #[arg(long)]
        k: u64,
    },
    /// Chain every stage with content-addressed outputs.
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
}

#[derive(Debug, Args)]
struct ExecuteArgs {
    #[arg(long)]
    contexts: PathBuf,
    #[arg(long)]
    intents: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Worker program and arguments, split on whitespace.
    /// `--protocol-version` is appended.
    #[arg(long)]
    worker_command: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    #[arg(long)]
    worker_log: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum PipelineAction {
    /// Run the stages named in the config.
    Run {
        /// Print the planned stages and write nothing.
        #[arg(long)]
        dry_run: bool,
        /// Stop after this stage.
        #[arg(long, value_parser = parse_stage)]
        until: Option<Stage>,
    },
}

const STAGES: [Stage; 6] = [
    Stage::MineContexts,
    Stage::GenIntents,
    Stage::GenSolutions,
    Stage::Execute,
    Stage::DeriveSpecs,
    Stage::BuildDataset,
];

fn parse_stage(s: &str) -> std::result::Result<Stage, String> {
    STAGES
        .into_iter()
        .find(|st| st.as_str() == s)
        .ok_or_else(|| format!("unknown stage {s}; expected one of {}", STAGES.map(Stage::as_str).join(", ")))
}

struct Env {
    config: Config,
    seed: u64,
}

impl Env {
    fn load(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        let seed = cli.seed.unwrap_or(config.seed);
        Ok(Self { config, seed })
    }

    fn backend(&self) -> Result<Box<dyn Backend>> {
        self.config.backend.build()
    }

    fn write<T: serde::Serialize>(&self, path: &Path, kind: &str, records: &[T]) -> Result<()> {
        ndr::write_records(path, &Header::new(kind, self.seed), records)
    }
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(ndr::read_records(path)?.1)
}

fn exemplars(path: Option<&Path>, kind: ExemplarKind) -> Result<Vec<FewShotExemplar>> {
    match path {
        Some(path) => load_exemplars(path, kind),
        None => Ok(default_exemplars(kind)),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn stage_summary(stage: &str, out: &Path, records: usize) -> Value {
    json!({"stage": stage, "output": out, "records": records})
}

fn run(cli: Cli) -> Result<Value> {
    let env = Env::load(&cli)?;
    match cli.command {
        Command::MineContexts { input_dir, out, limit } => {
            let outcome = mine_contexts(&input_dir, limit)?;
            env.write(&out, "contexts", &outcome.contexts)?;
            let mut summary = stage_summary("mine-contexts", &out, outcome.contexts.len());
            summary["skipped"] = serde_json::to_value(&outcome.skipped)?;
            Ok(summary)
        }
        Command::GenIntents {
            contexts,
            exemplars: exemplar_path,
            n,
            rouge_threshold,
            rouge_mode,
            seed_random,
            out,
        } => {
            let contexts: Vec<ProgrammaticContext> = read(&contexts)?;
            let settings = IntentSettings {
                exemplars: exemplars(exemplar_path.as_deref(), ExemplarKind::IntentGen)?,
                filter: FilterConfig {
                    threshold: rouge_threshold,
                    mode: rouge_mode,
                    random_seed: seed_random.then_some(env.seed),
                },
                seed: env.seed,
                ..IntentSettings::default()
            };
            let batches = generate_all(&contexts, n, env.backend()?.as_ref(), &settings)?;
            let dropped: usize = batches.iter().map(|b| b.dropped.len()).sum();
            let intents: Vec<Intent> = batches.into_iter().flat_map(|b| b.kept).collect();
            env.write(&out, "intents", &intents)?;
            let mut summary = stage_summary("gen-intents", &out, intents.len());
            summary["dropped"] = dropped.into();
            Ok(summary)
        }
        Command::GenSolutions {
            contexts,
            intents,
            exemplars: exemplar_path,
            samples,
            temperature,
            out,
        } => {
            let contexts: Vec<ProgrammaticContext> = read(&contexts)?;
            let intents: Vec<Intent> = read(&intents)?;
            let settings = SamplingSettings {
                exemplars: exemplars(exemplar_path.as_deref(), ExemplarKind::SolutionGen)?,
                samples,
                temperature,
                seed: env.seed,
                ..SamplingSettings::default()
            };
            let outcome = sample_solutions(&intents, &contexts, env.backend()?.as_ref(), &settings)?;
            env.write(&out, "candidates", &outcome.candidates)?;
            let mut summary = stage_summary("gen-solutions", &out, outcome.candidates.len());
            summary["extraction_failed"] = outcome.extraction_failed.into();
            Ok(summary)
        }
        Command::Execute(args) => {
            let contexts: Vec<ProgrammaticContext> = read(&args.contexts)?;
            let intents: Vec<Intent> = read(&args.intents)?;
            let candidates: Vec<CodeCandidate> = read(&args.candidates)?;
            let mut exec = env.config.execution.clone();
            if let Some(command) = &args.worker_command {
                exec.worker_command = command.split_whitespace().map(str::to_string).collect();
                exec.replay = None;
            }
            exec.replay = args.replay.or(exec.replay);
            exec.workers = args.workers.unwrap_or(exec.workers);
            exec.timeout_ms = args.timeout_ms.unwrap_or(exec.timeout_ms);
            exec.worker_log = args.worker_log.or(exec.worker_log);
            let executor = match &exec.replay {
                Some(path) => Executor::Replay(ReplayStore::from_file(path)?),
                None => exec.build()?,
            };
            let index = ContextIndex::new(&contexts, &intents);
            let records = execute_candidates(&candidates, &index, &executor, exec.timeout_ms)?;
            env.write(&args.out, "executions", &records)?;
            let mut summary = stage_summary("execute", &args.out, records.len());
            if !records.is_empty() {
                summary["execution_rate"] = execution_rate(&records)?.into();
            }
            Ok(summary)
        }
        Command::DeriveSpecs {
            executions,
            intents,
            candidates,
            spec_type,
            noisy,
            include_inputs,
            exemplars: exemplar_path,
            out,
        } => {
            if noisy && spec_type != SpecType::IoSummary {
                return Err(Error::Invalid("--noisy applies only to --spec-type io_summary".into()));
            }
            let records: Vec<ExecutionRecord> = read(&executions)?;
            let intents: Vec<Intent> = read(&intents)?;
            let candidates: Vec<CodeCandidate> = read(&candidates)?;
            let options = DeriveOptions {
                include_inputs,
                summary: SummarySettings {
                    exemplars: exemplars(exemplar_path.as_deref(), ExemplarKind::IoSummary)?,
                    noisy,
                    seed: env.seed,
                    ..SummarySettings::default()
                },
            };
            let specs = derive_specs(&records, &candidates, &intents, spec_type, env.backend()?.as_ref(), &options)?;
            env.write(&out, "specs", &specs)?;
            Ok(stage_summary("derive-specs", &out, specs.len()))
        }
        Command::BuildDataset {
            contexts,
            intents,
            candidates,
            executions,
            specs,
            cap,
            mix,
            ratio,
            out,
            stats,
        } => {
            let contexts: Vec<ProgrammaticContext> = read(&contexts)?;
            let intents: Vec<Intent> = read(&intents)?;
            let candidates: Vec<CodeCandidate> = read(&candidates)?;
            let records: Vec<ExecutionRecord> = read(&executions)?;
            let specs: Vec<SpecRecord> = match &specs {
                Some(path) => read(path)?,
                None => Vec::new(),
            };
            let examples = attach_specs(select_examples(&records, &candidates, &intents, &contexts, cap)?, &specs)?;
            let dataset: Vec<FineTuningRecord> = examples.iter().map(to_finetuning_record).collect();
            env.write(&out, "dataset", &dataset)?;
            let mut summary = stage_summary("build-dataset", &out, dataset.len());
            let corpus = corpus_stats(&examples, &records);
            if let Some(path) = &stats {
                write_json(path, &corpus)?;
                summary["stats"] = json!(path);
            }
            summary["execution_rate"] = corpus.execution_rate.into();
            if mix.is_some() || ratio.is_some() {
                let ratio = ratio.ok_or_else(|| Error::Invalid("--mix needs --ratio".into()))?;
                let manifest = build_mixture(&out, mix.as_deref(), ratio)?;
                let path = out.with_extension("mixture.json");
                write_json(&path, &manifest)?;
                summary["mixture"] = json!(path);
            }
            Ok(summary)
        }
        Command::Evaluate {
            problems,
            predictions,
            k,
            tol,
            sorted_rows,
            empirical,
            out,
        } => {
            let problems: Vec<EvalProblem> = read(&problems)?;
            let predictions: Vec<PredictionRecord> = read(&predictions)?;
            let options = ScoreOptions {
                equivalence: EquivalenceOptions { tol, sorted_rows },
                empirical,
            };
            let report = score_corpus(&problems, &predictions, &k, &options)?;
            write_json(&out, &report)?;
            Ok(json!({
                "stage": "evaluate",
                "output": out,
                "problems": report.problem_count,
                "pass_at_k": report.pass_at_k,
                "execution_rate": report.execution_rate,
            }))
        }
        Command::Report { executions, out } => {
            let records: Vec<ExecutionRecord> = read(&executions)?;
            let report = error_report(&records);
            match out {
                Some(path) => {
                    write_json(&path, &report)?;
                    Ok(json!({"stage": "report", "output": path, "total": report.total, "table": report.table}))
                }
                None => Ok(serde_json::to_value(&report)?),
            }
        }
        Command::PassAtK { .. } | Command::Pipeline { .. } => unreachable!("handled in dispatch"),
    }
}

fn run_pipeline(cli: &Cli, dry_run: bool, until: Option<Stage>) -> Result<Value> {
    if cli.config.is_none() {
        return Err(Error::Config("pipeline run needs --config".into()));
    }
    let mut env = Env::load(cli)?;
    env.config.seed = env.seed;
    if dry_run {
        return Ok(serde_json::to_value(pipeline::plan(&env.config)?)?);
    }
    let backend = env.backend()?;
    Ok(serde_json::to_value(pipeline::run(&env.config, backend.as_ref(), until)?)?)
}

fn dispatch(cli: Cli) -> Result<String> {
    match &cli.command {
        Command::PassAtK { n, c, k } => Ok(format!("{:.6}", pass_at_k(*n, *c, *k)?)),
        Command::Pipeline {
            action: PipelineAction::Run { dry_run, until },
        } => Ok(serde_json::to_string_pretty(&run_pipeline(&cli, *dry_run, *until)?)?),
        _ => Ok(serde_json::to_string_pretty(&run(cli)?)?),
    }
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .with_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() || e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(output) => {
            println!("{output}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_infrastructure() { 2 } else { 1 })
        }
    }
}
