//! Append-only annotation ledger: one JSON object per line, a header line
//! naming the dataset digest, then records with strictly increasing
//! sequence numbers. Every append is flushed and fsynced before it returns.
//!
//! A torn final line (a crash mid-append) is ignored on read, so at most the
//! unacknowledged record is lost.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{AnnotationRecord, AnnotationState};
use crate::ingest::Verdict;

pub const LEDGER_KIND: &str = "kgtyper-ledger";
pub const LEDGER_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error("ledger io: {0}")]
    Io(#[from] std::io::Error),
    #[error("ledger line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("ledger belongs to dataset {found}, expected {expected}")]
    DigestMismatch { expected: String, found: String },
    #[error("ledger {0} already exists")]
    Exists(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerHeader {
    pub kind: String,
    pub version: u32,
    pub dataset_digest: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub seq: u64,
    /// Milliseconds since the Unix epoch, or the sequence number under a
    /// logical clock.
    pub timestamp: u64,
    pub entity: String,
    pub type_id: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_type: Option<String>,
    pub annotator: String,
}

impl LedgerRecord {
    pub fn annotation(&self) -> AnnotationRecord {
        AnnotationRecord {
            entity: self.entity.clone(),
            type_id: self.type_id.clone(),
            verdict: self.verdict,
            true_type: self.true_type.clone(),
            annotator: self.annotator.clone(),
        }
    }
}

/// Timestamp source. The logical clock keeps oracle-driven runs
/// byte-reproducible.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Clock {
    Wall,
    Logical,
}

impl Clock {
    fn now(self, seq: u64) -> u64 {
        match self {
            Clock::Wall => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            Clock::Logical => seq,
        }
    }
}

/// Single writer over one ledger file.
#[derive(Debug)]
pub struct LedgerWriter {
    path: PathBuf,
    file: File,
    next_seq: u64,
    clock: Clock,
    header: LedgerHeader,
}

fn sync_line(file: &mut File, line: &str) -> std::io::Result<()> {
    let mut buf = line.as_bytes().to_vec();
    buf.push(b'\n');
    file.write_all(&buf)?;
    file.sync_data()
}

impl LedgerWriter {
    /// Creates a new ledger; fails if the file exists.
    pub fn create(path: &Path, dataset_digest: &str, clock: Clock) -> Result<Self, LedgerError> {
        if path.exists() {
            return Err(LedgerError::Exists(path.display().to_string()));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(path)?;
        let header = LedgerHeader {
            kind: LEDGER_KIND.into(),
            version: LEDGER_VERSION,
            dataset_digest: dataset_digest.into(),
        };
        sync_line(
            &mut file,
            &serde_json::to_string(&header).expect("header serializes"),
        )?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            next_seq: 1,
            clock,
            header,
        })
    }

    /// Reopens an existing ledger for appending after checking its digest.
    /// A torn final line is truncated away first.
    pub fn open(
        path: &Path,
        dataset_digest: &str,
        clock: Clock,
    ) -> Result<(Self, Vec<LedgerRecord>), LedgerError> {
        let read = read_ledger(path)?;
        check_digest(&read.header, dataset_digest)?;
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(read.valid_len)?;
        drop(file);
        let file = OpenOptions::new().append(true).open(path)?;
        let next_seq = read.records.last().map_or(1, |r| r.seq + 1);
        Ok((
            Self {
                path: path.to_path_buf(),
                file,
                next_seq,
                clock,
                header: read.header,
            },
            read.records,
        ))
    }

    /// Opens when the file exists, creates otherwise.
    pub fn open_or_create(
        path: &Path,
        dataset_digest: &str,
        clock: Clock,
    ) -> Result<(Self, Vec<LedgerRecord>), LedgerError> {
        if path.exists() {
            Self::open(path, dataset_digest, clock)
        } else {
            Ok((Self::create(path, dataset_digest, clock)?, Vec::new()))
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> &LedgerHeader {
        &self.header
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends and fsyncs one record; returns it with its sequence number.
    pub fn append(&mut self, rec: &AnnotationRecord) -> Result<LedgerRecord, LedgerError> {
        let seq = self.next_seq;
        let out = LedgerRecord {
            seq,
            timestamp: self.clock.now(seq),
            entity: rec.entity.clone(),
            type_id: rec.type_id.clone(),
            verdict: rec.verdict,
            true_type: rec.true_type.clone(),
            annotator: rec.annotator.clone(),
        };
        sync_line(
            &mut self.file,
            &serde_json::to_string(&out).expect("record serializes"),
        )?;
        self.next_seq += 1;
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LedgerContents {
    pub header: LedgerHeader,
    pub records: Vec<LedgerRecord>,
    /// Whether a torn final line was dropped.
    pub torn_tail: bool,
    /// Byte length of the well-formed prefix.
    pub valid_len: u64,
}

pub fn read_ledger(path: &Path) -> Result<LedgerContents, LedgerError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines: Vec<(String, bool)> = Vec::new();
    loop {
        let mut buf = String::new();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        let complete = buf.ends_with('\n');
        lines.push((buf, complete));
    }
    let malformed = |line: usize, message: String| LedgerError::Malformed { line, message };
    let Some((first, _)) = lines.first() else {
        return Err(malformed(1, "empty ledger".into()));
    };
    let header: LedgerHeader =
        serde_json::from_str(first.trim_end()).map_err(|e| malformed(1, e.to_string()))?;
    if header.kind != LEDGER_KIND || header.version != LEDGER_VERSION {
        return Err(malformed(
            1,
            format!("unsupported ledger {} {}", header.kind, header.version),
        ));
    }
    let mut valid_len = first.len() as u64;
    let mut records: Vec<LedgerRecord> = Vec::new();
    let mut torn_tail = false;
    let last = lines.len() - 1;
    for (i, (line, complete)) in lines.iter().enumerate().skip(1) {
        let parsed: Result<LedgerRecord, _> = serde_json::from_str(line.trim_end());
        match parsed {
            Ok(rec) if *complete || i < last => {
                if let Some(prev) = records.last() {
                    if rec.seq <= prev.seq {
                        return Err(malformed(
                            i + 1,
                            format!("sequence {} after {}", rec.seq, prev.seq),
                        ));
                    }
                }
                valid_len += line.len() as u64;
                records.push(rec);
            }
            _ if i == last => {
                log::warn!("{}: dropping torn final record", path.display());
                torn_tail = true;
            }
            Err(e) => return Err(malformed(i + 1, e.to_string())),
            Ok(_) => unreachable!("incomplete lines are last"),
        }
    }
    Ok(LedgerContents {
        header,
        records,
        torn_tail,
        valid_len,
    })
}

pub fn check_digest(header: &LedgerHeader, expected: &str) -> Result<(), LedgerError> {
    if header.dataset_digest != expected {
        return Err(LedgerError::DigestMismatch {
            expected: expected.into(),
            found: header.dataset_digest.clone(),
        });
    }
    Ok(())
}

/// Applies records to a state built from the initial split. Returns the
/// number that changed it; repeated pairs and unknown pairs are ignored.
pub fn apply_records(state: &mut AnnotationState, records: &[LedgerRecord]) -> usize {
    records
        .iter()
        .filter(|r| state.apply(&r.annotation()))
        .count()
}

/// Reads the ledger at `path`, refuses it when its digest differs, and
/// replays it over `state`.
pub fn replay_ledger(
    path: &Path,
    dataset_digest: &str,
    state: &mut AnnotationState,
) -> Result<usize, LedgerError> {
    let read = read_ledger(path)?;
    check_digest(&read.header, dataset_digest)?;
    Ok(apply_records(state, &read.records))
}
