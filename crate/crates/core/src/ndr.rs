//! Newline-delimited record files.
//!
//! Each file is UTF-8, one JSON object per line. The first line is a header
//! `{"header": {...}}` naming the schema version, the digest algorithm, the
//! tool version, the record kind and the run seed.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DIGEST_ALGORITHM;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub schema_version: u32,
    pub digest_algorithm: String,
    pub tool_version: String,
    pub record_kind: String,
    pub seed: u64,
}

impl Header {
    pub fn new(record_kind: impl Into<String>, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            digest_algorithm: DIGEST_ALGORITHM.to_string(),
            tool_version: TOOL_VERSION.to_string(),
            record_kind: record_kind.into(),
            seed,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

pub fn to_string<T: Serialize>(header: &Header, records: &[T]) -> Result<String> {
    let mut out = serde_json::to_string(&HeaderLine {
        header: header.clone(),
    })?;
    out.push('\n');
    for record in records {
        out.push_str(&serde_json::to_string(record)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_str<T: DeserializeOwned>(text: &str, origin: &Path) -> Result<(Header, Vec<T>)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| Error::Record {
        path: origin.to_path_buf(),
        line: 1,
        message: "missing header record".into(),
    })?;
    let header: HeaderLine = serde_json::from_str(first).map_err(|e| Error::Record {
        path: origin.to_path_buf(),
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    let header = header.header;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Record {
            path: origin.to_path_buf(),
            line: 1,
            message: format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            ),
        });
    }
    if header.digest_algorithm != DIGEST_ALGORITHM {
        return Err(Error::Record {
            path: origin.to_path_buf(),
            line: 1,
            message: format!("digest algorithm {}", header.digest_algorithm),
        });
    }
    let records = lines
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| Error::Record {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<T>>>()?;
    Ok((header, records))
}

/// Writes the file through a sibling temp file so readers never observe a
/// partial write.
pub fn write_records<T: Serialize>(path: &Path, header: &Header, records: &[T]) -> Result<()> {
    write_text(path, &to_string(header, records)?)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<(Header, Vec<T>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_str(&text, path)
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("partial");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Intent;

    #[test]
    fn header_first_then_records() {
        let intents = vec![Intent::new("ctx-a", 1, "count rows").unwrap()];
        let text = to_string(&Header::new("intents", 7), &intents).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with(r#"{"header":{"schema_version":1,"digest_algorithm":"sha256""#));
        let (header, back): (_, Vec<Intent>) = from_str(&text, Path::new("mem")).unwrap();
        assert_eq!(header.seed, 7);
        assert_eq!(back, intents);
    }

    #[test]
    fn missing_header_is_reported() {
        let err = from_str::<Intent>("", Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
        let err = from_str::<Intent>("{\"x\":1}\n", Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
    }

    #[test]
    fn bad_record_line_is_located() {
        let text = format!("{}\n{{\"nope\":true}}\n", serde_json::to_string(&HeaderLine { header: Header::new("x", 0) }).unwrap());
        let err = from_str::<Intent>(&text, Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Record { line: 2, .. }));
    }
}
