//! Execution-grounded synthesis of instruction-tuning data for data-science
//! code generation, plus pass@k scoring of prediction corpora.
//!
//! Stages: [`context`] mines tabular files into contexts, [`intents`] asks a
//! generalist model for tasks, [`dataset`] samples and selects solutions,
//! [`execution`] runs them in sandbox workers, [`specs`] derives I/O
//! specifications and [`eval`] scores predictions. [`pipeline`] chains the
//! stages.

pub mod config;
pub mod context;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod execution;
#[cfg(feature = "test-support")]
pub mod fixtures;
pub mod intents;
pub mod llm;
pub mod model;
pub mod ndr;
pub mod pipeline;
pub mod prompt;
pub mod specs;
pub mod table;

pub use config::Config;
pub use error::{Error, Result};
pub use eval::{outputs_equivalent, pass_at_k, EquivalenceOptions};
pub use intents::{diversity_filter, rouge_l};
pub use model::*;
