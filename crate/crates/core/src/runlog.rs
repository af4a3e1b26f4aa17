//! Append-only JSONL run log. Every line ends with a CRC-32 of its content:
//! `{...,"crc":"1a2b3c4d"}`.

use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::CompletionResult;
use crate::prompt::PromptCase;
use crate::runner::RunSpec;
use crate::scorer::Judgement;

const CRC_PREFIX: &str = ",\"crc\":\"";
// `,"crc":"` + 8 hex digits + `"}`
const CRC_SUFFIX_LEN: usize = CRC_PREFIX.len() + 8 + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub tool_version: String,
    pub template_version: String,
    pub spec: RunSpec,
    pub case_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub case_id: String,
    /// Position in the deterministic case order.
    pub ordinal: usize,
    pub case: PromptCase,
    pub completion: Option<CompletionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub judgement: Judgement,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Entry(RunLogEntry),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}:{line}: corrupt run log line: {reason}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("{0}: run log has no header")]
    MissingHeader(PathBuf),
    #[error("{0}: run log has no entries")]
    Empty(PathBuf),
    #[error("run log {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

pub fn encode_line(line: &LogLine) -> String {
    let body = serde_json::to_string(line).expect("log lines serialize");
    let crc = crc32fast::hash(body.as_bytes());
    format!("{}{CRC_PREFIX}{crc:08x}\"}}", &body[..body.len() - 1])
}

pub fn decode_line(raw: &str) -> Result<LogLine, String> {
    if raw.len() < CRC_SUFFIX_LEN + 2 || !raw.ends_with("\"}") {
        return Err("missing crc field".into());
    }
    let split = raw.len() - CRC_SUFFIX_LEN;
    let (head, tail) = (raw.get(..split), raw.get(split..));
    let (Some(head), Some(tail)) = (head, tail) else {
        return Err("missing crc field".into());
    };
    let hex = tail
        .strip_prefix(CRC_PREFIX)
        .and_then(|t| t.strip_suffix("\"}"))
        .ok_or("missing crc field")?;
    let expected = u32::from_str_radix(hex, 16).map_err(|_| "bad crc digits".to_string())?;
    let body = format!("{head}}}");
    let actual = crc32fast::hash(body.as_bytes());
    if actual != expected {
        return Err(format!(
            "crc mismatch (stored {expected:08x}, computed {actual:08x})"
        ));
    }
    serde_json::from_str(&body).map_err(|e| e.to_string())
}

/// Parsed contents of a run log.
#[derive(Debug, Clone)]
pub struct LogContents {
    pub header: LogHeader,
    pub entries: Vec<RunLogEntry>,
    /// Byte length of the valid prefix; a torn final line lies beyond it.
    pub valid_len: u64,
}

/// Reads and verifies a log. A final line without a trailing newline that
/// fails verification is treated as a torn write and excluded; any other
/// bad line is corruption.
pub fn read_log(path: &Path) -> Result<LogContents, LogError> {
    let text = std::fs::read_to_string(path).map_err(|source| LogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut header = None;
    let mut entries = Vec::new();
    let mut offset = 0usize;
    let mut valid_len = 0u64;
    for (i, raw) in text.split_inclusive('\n').enumerate() {
        let terminated = raw.ends_with('\n');
        let line = raw.trim_end_matches('\n');
        offset += raw.len();
        let parsed = decode_line(line);
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if !terminated => break,
            Err(reason) => {
                return Err(LogError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason,
                })
            }
        };
        match parsed {
            LogLine::Header(h) if i == 0 => header = Some(h),
            LogLine::Header(_) => {
                return Err(LogError::Corrupt {
                    path: path.to_path_buf(),
                    line: i + 1,
                    reason: "unexpected second header".into(),
                })
            }
            LogLine::Entry(_) if i == 0 => return Err(LogError::MissingHeader(path.to_path_buf())),
            LogLine::Entry(e) => entries.push(e),
        }
        valid_len = offset as u64;
    }
    let header = header.ok_or_else(|| LogError::MissingHeader(path.to_path_buf()))?;
    Ok(LogContents {
        header,
        entries,
        valid_len,
    })
}

/// Single writer; every line is flushed as soon as it is written.
pub struct LogWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self, LogError> {
        let io_err = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut w = LogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.append(&LogLine::Header(header.clone()))?;
        Ok(w)
    }

    /// Reopens for appending after dropping anything past `valid_len`.
    pub fn resume(path: &Path, valid_len: u64) -> Result<Self, LogError> {
        let io_err = |source| LogError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = OpenOptions::new().append(true).open(path).map_err(io_err)?;
        file.set_len(valid_len).map_err(io_err)?;
        Ok(LogWriter {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, line: &LogLine) -> Result<(), LogError> {
        let encoded = encode_line(line);
        self.out
            .write_all(encoded.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush())
            .map_err(|source| LogError::Io {
                path: self.path.clone(),
                source,
            })
    }
}
