//! Run configuration read from a TOML file.
//!
//! ```toml
//! seed = 0
//!
//! [backend]
//! kind = "mock"            # or "http"
//! url = "https://llm.example/v1/chat/completions"
//! model_generalist = "general-model"
//! model_coder = "code-model"
//! max_concurrency = 4
//! token_env = "SPECFORGE_API_TOKEN"
//!
//! [pipeline]
//! input_dir = "data"
//! out_dir = "out"
//! n_intents = 6
//! samples = 5
//! spec_type = "io_summary"
//!
//! [execution]
//! replay = "fixtures/executions.ndr"
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::execution::{Executor, PoolConfig, ReplayStore, WorkerPool, DEFAULT_HARD_CAP_MS, DEFAULT_TIMEOUT_MS};
use crate::intents::{RougeMode, DEFAULT_INTENTS, DEFAULT_THRESHOLD};
use crate::llm::{Backend, HttpBackend, HttpConfig, MockBackend};
use crate::model::SpecType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub model_generalist: Option<String>,
    pub model_coder: Option<String>,
    pub max_concurrency: usize,
    pub token_env: String,
    pub timeout_secs: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            url: None,
            model_generalist: None,
            model_coder: None,
            max_concurrency: 4,
            token_env: crate::llm::DEFAULT_TOKEN_ENV.to_string(),
            timeout_secs: 120,
        }
    }
}

impl BackendConfig {
    pub fn build(&self) -> Result<Box<dyn Backend>> {
        match self.kind {
            BackendKind::Mock => Ok(Box::new(MockBackend::personas())),
            BackendKind::Http => {
                let missing = |key: &str| Error::Config(format!("backend.{key} is required for the http backend"));
                let mut config = HttpConfig::new(
                    self.url.clone().ok_or_else(|| missing("url"))?,
                    self.model_generalist.clone().ok_or_else(|| missing("model_generalist"))?,
                    self.model_coder.clone().ok_or_else(|| missing("model_coder"))?,
                );
                config.max_concurrency = self.max_concurrency;
                config.token_env = self.token_env.clone();
                config.timeout = Duration::from_secs(self.timeout_secs);
                Ok(Box::new(HttpBackend::new(config)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input_dir: PathBuf,
    pub out_dir: PathBuf,
    pub limit: Option<usize>,
    pub exemplars: Option<PathBuf>,
    pub n_intents: usize,
    pub rouge_threshold: f64,
    pub rouge_mode: RougeMode,
    pub seed_random: bool,
    pub samples: u32,
    pub temperature: f64,
    pub spec_type: Option<SpecType>,
    pub noisy: bool,
    pub include_inputs: bool,
    pub cap: usize,
    pub mix_auxiliary: Option<PathBuf>,
    pub mix_ratio: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            limit: None,
            exemplars: None,
            n_intents: DEFAULT_INTENTS,
            rouge_threshold: DEFAULT_THRESHOLD,
            rouge_mode: RougeMode::F,
            seed_random: false,
            samples: crate::dataset::DEFAULT_SAMPLES,
            temperature: crate::dataset::DEFAULT_TEMPERATURE,
            spec_type: None,
            noisy: false,
            include_inputs: false,
            cap: crate::dataset::DEFAULT_CAP,
            mix_auxiliary: None,
            mix_ratio: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutionConfig {
    pub replay: Option<PathBuf>,
    pub worker_command: Vec<String>,
    pub workers: usize,
    pub timeout_ms: u64,
    pub hard_cap_ms: u64,
    pub worker_log: Option<PathBuf>,
}

impl Default for ExecutionConfig {
    fn default() -> Self {
        Self {
            replay: None,
            worker_command: Vec::new(),
            workers: 1,
            timeout_ms: DEFAULT_TIMEOUT_MS,
            hard_cap_ms: DEFAULT_HARD_CAP_MS,
            worker_log: None,
        }
    }
}

impl ExecutionConfig {
    pub fn build(&self) -> Result<Executor> {
        if let Some(path) = &self.replay {
            return Ok(Executor::Replay(ReplayStore::from_file(path)?));
        }
        if self.worker_command.is_empty() {
            return Err(Error::Config("set execution.replay or execution.worker_command".into()));
        }
        if self.timeout_ms == 0 || self.timeout_ms > self.hard_cap_ms {
            return Err(Error::Config(format!(
                "execution.timeout_ms {} outside (0, {}]",
                self.timeout_ms, self.hard_cap_ms
            )));
        }
        let mut pool = PoolConfig::new(self.worker_command.clone(), self.workers);
        pool.hard_cap_ms = self.hard_cap_ms;
        pool.stderr_log = self.worker_log.clone();
        Ok(Executor::Live(WorkerPool::new(pool)?))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub backend: BackendConfig,
    pub pipeline: PipelineConfig,
    pub execution: ExecutionConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.pipeline.input_dir);
        fix(&mut self.pipeline.out_dir);
        for p in [
            &mut self.pipeline.exemplars,
            &mut self.pipeline.mix_auxiliary,
            &mut self.execution.replay,
            &mut self.execution.worker_log,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.pipeline;
        if p.n_intents == 0 || p.samples == 0 || p.cap == 0 {
            return Err(Error::Config("n_intents, samples and cap must be positive".into()));
        }
        if !(p.rouge_threshold > 0.0 && p.rouge_threshold <= 1.0) {
            return Err(Error::Config(format!("rouge_threshold {} outside (0, 1]", p.rouge_threshold)));
        }
        if !(0.0..=2.0).contains(&p.temperature) {
            return Err(Error::Config(format!("temperature {} outside [0, 2]", p.temperature)));
        }
        if p.noisy && p.spec_type != Some(SpecType::IoSummary) {
            return Err(Error::Config("noisy applies only to spec_type io_summary".into()));
        }
        if self.backend.max_concurrency == 0 || self.execution.workers == 0 {
            return Err(Error::Config("max_concurrency and workers must be positive".into()));
        }
        Ok(())
    }
}
