//! Pool of live worker subprocesses.
//!
//! Each pool thread owns one worker and sends it one request at a time.
//! A reader thread forwards the worker's stdout lines over a channel so the
//! orchestrator can wait with a deadline. When the deadline passes the
//! worker is killed and replaced before the next request.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use tracing::{debug, warn};

use super::protocol::{record_from_response, ExecRequest, FromWorker, ToWorker, WorkerResponse, PROTOCOL_VERSION};
use crate::error::{Error, Result};
use crate::model::{ExecStatus, ExecutionRecord};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;
pub const DEFAULT_HARD_CAP_MS: u64 = 600_000;

#[derive(Debug, Clone)]
pub struct PoolConfig {
    /// Program followed by its arguments. `--protocol-version N` is appended.
    pub command: Vec<String>,
    pub size: usize,
    pub hard_cap_ms: u64,
    pub startup_timeout: Duration,
    /// File that collects worker stderr. Discarded when unset.
    pub stderr_log: Option<PathBuf>,
}

impl PoolConfig {
    pub fn new(command: Vec<String>, size: usize) -> Self {
        Self {
            command,
            size,
            hard_cap_ms: DEFAULT_HARD_CAP_MS,
            startup_timeout: Duration::from_secs(30),
            stderr_log: None,
        }
    }
}

/// Extra time granted past the request timeout before the worker is killed.
pub fn grace_ms(timeout_ms: u64) -> u64 {
    (timeout_ms / 4).max(50)
}

enum Failure {
    Died(String),
    TimedOut(Duration),
}

struct Worker {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Worker {
    fn spawn(config: &PoolConfig) -> Result<Self> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| Error::Config("empty worker command".into()))?;
        let stderr = match &config.stderr_log {
            Some(path) => {
                let file = File::options()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|e| Error::io(path, e))?;
                Stdio::from(file)
            }
            None => Stdio::null(),
        };
        let mut child = Command::new(program)
            .args(args)
            .arg("--protocol-version")
            .arg(PROTOCOL_VERSION.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(stderr)
            .spawn()
            .map_err(|e| Error::PoolExhausted(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut worker = Self { child, stdin, lines };
        match worker.handshake(config.startup_timeout) {
            Ok(()) => Ok(worker),
            Err(e) => {
                worker.kill();
                Err(e)
            }
        }
    }

    fn handshake(&mut self, timeout: Duration) -> Result<()> {
        let line = self
            .lines
            .recv_timeout(timeout)
            .map_err(|_| Error::PoolExhausted("worker sent no handshake".into()))?;
        match serde_json::from_str::<FromWorker>(&line) {
            Ok(FromWorker::Handshake { protocol_version, .. }) if protocol_version == PROTOCOL_VERSION => Ok(()),
            Ok(FromWorker::Handshake { protocol_version, .. }) => Err(Error::PoolExhausted(format!(
                "worker speaks protocol {protocol_version}, expected {PROTOCOL_VERSION}"
            ))),
            _ => Err(Error::PoolExhausted(format!("bad handshake line: {line}"))),
        }
    }

    fn run(&mut self, request: &ExecRequest) -> std::result::Result<WorkerResponse, Failure> {
        let start = Instant::now();
        let deadline = start + Duration::from_millis(request.timeout_ms + grace_ms(request.timeout_ms));
        let mut line = serde_json::to_string(&ToWorker::Exec(request.clone())).expect("request serializes");
        line.push('\n');
        if let Err(e) = self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()) {
            return Err(Failure::Died(format!("write failed: {e}")));
        }
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(wait) {
                Ok(line) => match serde_json::from_str::<FromWorker>(&line) {
                    Ok(FromWorker::Result(resp)) if resp.request_id == request.request_id => return Ok(resp),
                    _ => debug!(line = %line, "ignoring unexpected worker line"),
                },
                Err(RecvTimeoutError::Timeout) => return Err(Failure::TimedOut(start.elapsed())),
                Err(RecvTimeoutError::Disconnected) => {
                    let status = self.child.wait().map(|s| s.to_string()).unwrap_or_default();
                    return Err(Failure::Died(format!("worker exited ({status})")));
                }
            }
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        if let Ok(line) = serde_json::to_string(&ToWorker::Shutdown) {
            let _ = writeln!(self.stdin, "{line}");
        }
        self.kill();
    }
}

/// Live execution backend. Workers start lazily on the first request.
#[derive(Debug, Clone)]
pub struct WorkerPool {
    config: PoolConfig,
}

pub struct Job {
    pub candidate_id: String,
    pub request: ExecRequest,
}

impl WorkerPool {
    pub fn new(config: PoolConfig) -> Result<Self> {
        if config.size == 0 {
            return Err(Error::Config("pool size must be positive".into()));
        }
        if config.command.is_empty() {
            return Err(Error::Config("empty worker command".into()));
        }
        Ok(Self { config })
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn hard_cap_ms(&self) -> u64 {
        self.config.hard_cap_ms
    }

    /// Runs every job, one record per job in input order.
    pub fn run(&self, jobs: Vec<Job>) -> Result<Vec<ExecutionRecord>> {
        if jobs.is_empty() {
            return Ok(Vec::new());
        }
        for job in &jobs {
            if job.request.timeout_ms == 0 || job.request.timeout_ms > self.config.hard_cap_ms {
                return Err(Error::Invalid(format!(
                    "timeout {} ms outside (0, {}]",
                    job.request.timeout_ms, self.config.hard_cap_ms
                )));
            }
        }
        let total = jobs.len();
        let queue: Mutex<VecDeque<(usize, Job)>> = Mutex::new(jobs.into_iter().enumerate().collect());
        let results: Mutex<Vec<Option<ExecutionRecord>>> = Mutex::new(vec![None; total]);
        let threads = self.config.size.min(total);
        let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
        thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| {
                    if let Err(e) = self.drain(&queue, &results) {
                        warn!(error = %e, "pool thread stopped");
                        failures.lock().unwrap_or_else(|e| e.into_inner()).push(e.to_string());
                    }
                });
            }
        });
        let results = results.into_inner().unwrap_or_else(|e| e.into_inner());
        if results.iter().any(Option::is_none) {
            let failures = failures.into_inner().unwrap_or_else(|e| e.into_inner());
            return Err(Error::PoolExhausted(failures.join("; ")));
        }
        Ok(results.into_iter().flatten().collect())
    }

    fn drain(
        &self,
        queue: &Mutex<VecDeque<(usize, Job)>>,
        results: &Mutex<Vec<Option<ExecutionRecord>>>,
    ) -> Result<()> {
        let mut worker: Option<Worker> = None;
        loop {
            let Some((slot, job)) = queue.lock().unwrap_or_else(|e| e.into_inner()).pop_front() else {
                return Ok(());
            };
            let record = match self.run_job(&mut worker, &job) {
                Ok(record) => record,
                Err(e) => {
                    queue.lock().unwrap_or_else(|e| e.into_inner()).push_back((slot, job));
                    return Err(e);
                }
            };
            results.lock().unwrap_or_else(|e| e.into_inner())[slot] = Some(record);
        }
    }

    /// One job, restarting the worker after a death and retrying once.
    fn run_job(&self, worker: &mut Option<Worker>, job: &Job) -> Result<ExecutionRecord> {
        let mut deaths = Vec::new();
        while deaths.len() < 2 {
            if worker.is_none() {
                *worker = Some(Worker::spawn(&self.config)?);
            }
            let live = worker.as_mut().expect("worker present");
            match live.run(&job.request) {
                Ok(response) => return Ok(record_from_response(&job.candidate_id, response)),
                Err(Failure::TimedOut(elapsed)) => {
                    live.kill();
                    *worker = None;
                    let mut record = ExecutionRecord::failure(
                        &job.candidate_id,
                        ExecStatus::Timeout,
                        format!("exceeded {} ms", job.request.timeout_ms),
                    );
                    record.duration_ms = elapsed.as_millis() as u64;
                    return Ok(record);
                }
                Err(Failure::Died(reason)) => {
                    warn!(candidate = %job.candidate_id, reason = %reason, "worker died");
                    *worker = None;
                    deaths.push(reason);
                }
            }
        }
        Ok(ExecutionRecord::failure(
            &job.candidate_id,
            ExecStatus::RuntimeError,
            format!("worker died twice: {}", deaths.join("; ")),
        ))
    }
}
