//! Execution backend that serves recorded outcomes instead of running code.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::ExecutionRecord;
use crate::ndr;

#[derive(Debug, Clone, Default)]
pub struct ReplayStore {
    records: HashMap<String, ExecutionRecord>,
}

impl ReplayStore {
    pub fn new(records: Vec<ExecutionRecord>) -> Result<Self> {
        let mut map = HashMap::with_capacity(records.len());
        for record in records {
            record.validate()?;
            if let Some(prev) = map.insert(record.candidate_id.clone(), record) {
                return Err(Error::Invalid(format!("replay fixture repeats candidate {}", prev.candidate_id)));
            }
        }
        Ok(Self { records: map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let (_, records) = ndr::read_records(path)?;
        Self::new(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn lookup(&self, candidate_id: &str) -> Result<ExecutionRecord> {
        self.records
            .get(candidate_id)
            .cloned()
            .ok_or_else(|| Error::ReplayMiss(candidate_id.to_string()))
    }
}
