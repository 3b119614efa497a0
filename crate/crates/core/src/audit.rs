//! Hash-chained, append-only audit log.
//!
//! One JSON entry per LF-terminated line. Each entry hashes
//! `prev_hash ∥ canonical({actor, event_kind, index, payload, timestamp})`
//! with SHA-256, so editing any byte of a persisted entry breaks the chain at
//! or before that entry.

use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::canonical::{canonical_value, sha256_hex};
use crate::contest::Role;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    PredictionIssued,
    ExplanationIssued,
    JustificationIssued,
    ContestOpened,
    ContestTransition,
    CasComputed,
    ConfigChanged,
    ExternalClientDegraded,
    SessionIngested,
    MedicationRecorded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub role: Role,
    pub principal: String,
}

impl Actor {
    pub fn new(role: Role, principal: impl Into<String>) -> Self {
        Actor { role, principal: principal.into() }
    }
}

/// Field order here is the on-disk field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditEntry {
    pub index: u64,
    pub timestamp: String,
    pub actor: Actor,
    pub event_kind: EventKind,
    pub payload: Value,
    pub prev_hash: String,
    pub hash: String,
}

impl AuditEntry {
    pub fn compute_hash(&self) -> String {
        chain_hash(&self.prev_hash, self.index, &self.timestamp, &self.actor, self.event_kind, &self.payload)
    }

    /// The persisted line, without the trailing LF.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("audit entries always serialize")
    }
}

fn chain_hash(prev_hash: &str, index: u64, timestamp: &str, actor: &Actor, kind: EventKind, payload: &Value) -> String {
    let body = json!({
        "actor": actor,
        "event_kind": kind,
        "index": index,
        "payload": payload,
        "timestamp": timestamp,
    });
    let mut bytes = prev_hash.as_bytes().to_vec();
    bytes.extend_from_slice(canonical_value(&body).as_bytes());
    sha256_hex(&bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BadReason {
    /// Stored hash differs from the recomputed one.
    HashMismatch,
    /// prev_hash does not equal the previous entry's hash (or the anchor).
    Linkage,
    /// Index is not the expected dense successor.
    IndexGap,
    /// Line is not a well-formed, canonically serialized entry.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum Verification {
    Ok { entries: u64 },
    FirstBadIndex { index: u64, reason: BadReason },
}

impl Verification {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verification::Ok { .. })
    }
}

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("audit append was not durable: {0}")]
    StorageFailure(#[source] io::Error),
    #[error("cannot read audit log: {0}")]
    Io(#[from] io::Error),
    #[error("audit log tail is unreadable at entry {0}")]
    CorruptTail(u64),
    #[error("range [{from}, {to}] is outside a log of {len} entries")]
    RangeOutOfBounds { from: u64, to: u64, len: u64 },
}

fn hex64(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

fn parse_line(line: &[u8]) -> Option<AuditEntry> {
    let entry: AuditEntry = serde_json::from_slice(line).ok()?;
    if !hex64(&entry.prev_hash) || !hex64(&entry.hash) || DateTime::parse_from_rfc3339(&entry.timestamp).is_err() {
        return None;
    }
    // Reject anything that is not byte-identical to our own serialization,
    // so equivalent-but-different encodings cannot slip past the hash.
    (entry.to_line().as_bytes() == line).then_some(entry)
}

/// Verifies a chain of entries starting at `first_index` whose first
/// prev_hash must equal `anchor`.
fn verify_lines<'a>(lines: impl Iterator<Item = &'a [u8]>, first_index: u64, anchor: &str) -> Verification {
    let mut expected_prev = anchor.to_string();
    let mut index = first_index;
    for line in lines {
        let Some(entry) = parse_line(line) else {
            return Verification::FirstBadIndex { index, reason: BadReason::Malformed };
        };
        let reason = if entry.index != index {
            Some(BadReason::IndexGap)
        } else if entry.prev_hash != expected_prev {
            Some(BadReason::Linkage)
        } else if entry.compute_hash() != entry.hash {
            Some(BadReason::HashMismatch)
        } else {
            None
        };
        if let Some(reason) = reason {
            return Verification::FirstBadIndex { index, reason };
        }
        expected_prev = entry.hash;
        index += 1;
    }
    Verification::Ok { entries: index - first_index }
}

/// Splits into lines, requiring LF termination. A trailing unterminated
/// fragment is returned as its own (malformed) line.
fn split_lines(bytes: &[u8]) -> Vec<&[u8]> {
    let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    } else if let Some(last) = lines.last_mut() {
        // Unterminated tail: keep it but make sure it fails to parse.
        if !last.is_empty() {
            *last = b"\0";
        }
    }
    lines
}

/// Verifies the raw contents of a log file.
pub fn verify_bytes(bytes: &[u8]) -> Verification {
    verify_lines(split_lines(bytes).into_iter(), 0, GENESIS_HASH)
}

/// Verifies a log file; a missing file is an empty log.
pub fn verify_file(path: &Path) -> Result<Verification, AuditError> {
    match std::fs::read(path) {
        Ok(bytes) => Ok(verify_bytes(&bytes)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(Verification::Ok { entries: 0 }),
        Err(e) => Err(e.into()),
    }
}

/// Parses all entries without checking the chain.
pub fn read_entries(path: &Path) -> Result<Vec<AuditEntry>, AuditError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    split_lines(&bytes)
        .into_iter()
        .enumerate()
        .map(|(i, line)| serde_json::from_slice(line).map_err(|_| AuditError::CorruptTail(i as u64)))
        .collect()
}

/// A contiguous slice of the log with the hash it chains from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBundle {
    pub from_index: u64,
    pub to_index: u64,
    pub anchor_prev_hash: String,
    pub entries: Vec<AuditEntry>,
}

/// Verifies a bundle on its own. With `trusted_anchor`, the bundle's anchor
/// must also match that externally known hash.
pub fn verify_bundle(bundle: &AuditBundle, trusted_anchor: Option<&str>) -> Verification {
    if trusted_anchor.is_some_and(|a| a != bundle.anchor_prev_hash)
        || bundle.from_index > bundle.to_index
        || bundle.entries.len() as u64 != bundle.to_index - bundle.from_index + 1
    {
        return Verification::FirstBadIndex { index: bundle.from_index, reason: BadReason::Linkage };
    }
    let lines: Vec<String> = bundle.entries.iter().map(AuditEntry::to_line).collect();
    verify_lines(lines.iter().map(|l| l.as_bytes()), bundle.from_index, &bundle.anchor_prev_hash)
}

/// Writer handle. Keeps the chain head in memory; callers must serialize
/// appends (one writer per file).
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    next_index: u64,
    head_hash: String,
}

impl AuditLog {
    /// Opens (or prepares to create) the log and loads its head.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AuditError> {
        let path = path.into();
        let entries = read_entries(&path)?;
        let (next_index, head_hash) = match entries.last() {
            Some(e) => (entries.len() as u64, e.hash.clone()),
            None => (0, GENESIS_HASH.to_string()),
        };
        Ok(AuditLog { path, next_index, head_hash })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> u64 {
        self.next_index
    }

    pub fn is_empty(&self) -> bool {
        self.next_index == 0
    }

    pub fn head_hash(&self) -> &str {
        &self.head_hash
    }

    pub fn append(&mut self, actor: Actor, kind: EventKind, payload: Value) -> Result<AuditEntry, AuditError> {
        self.append_at(Utc::now(), actor, kind, payload)
    }

    /// Appends with an explicit timestamp.
    pub fn append_at(
        &mut self,
        at: DateTime<Utc>,
        actor: Actor,
        kind: EventKind,
        payload: Value,
    ) -> Result<AuditEntry, AuditError> {
        // Round-trip the payload so non-canonical inputs (e.g. integers
        // stored as floats) are normalized before hashing.
        let payload: Value = serde_json::from_str(&canonical_value(&payload)).expect("canonical JSON re-parses");
        let timestamp = at.to_rfc3339_opts(SecondsFormat::Micros, true);
        let hash = chain_hash(&self.head_hash, self.next_index, &timestamp, &actor, kind, &payload);
        let entry = AuditEntry {
            index: self.next_index,
            timestamp,
            actor,
            event_kind: kind,
            payload,
            prev_hash: self.head_hash.clone(),
            hash,
        };
        let mut line = entry.to_line();
        line.push('\n');
        write_durably(&self.path, line.as_bytes()).map_err(AuditError::StorageFailure)?;
        self.next_index += 1;
        self.head_hash = entry.hash.clone();
        Ok(entry)
    }

    pub fn verify(&self) -> Result<Verification, AuditError> {
        verify_file(&self.path)
    }

    pub fn export_range(&self, from: u64, to: u64) -> Result<AuditBundle, AuditError> {
        export_range(&self.path, from, to)
    }
}

fn write_durably(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut file = OpenOptions::new().create(true).append(true).open(path)?;
    let before = file.metadata()?.len();
    let result = file.write_all(bytes).and_then(|_| file.sync_data());
    if result.is_err() {
        // Drop the partial line; the log never keeps a half-written entry.
        let _ = file.set_len(before);
    }
    result
}

pub fn export_range(path: &Path, from: u64, to: u64) -> Result<AuditBundle, AuditError> {
    let mut bytes = Vec::new();
    match File::open(path) {
        Ok(mut f) => {
            f.read_to_end(&mut bytes)?;
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(e.into()),
    }
    let lines = split_lines(&bytes);
    let len = lines.len() as u64;
    if from > to || to >= len {
        return Err(AuditError::RangeOutOfBounds { from, to, len });
    }
    let entries = lines[from as usize..=to as usize]
        .iter()
        .enumerate()
        .map(|(i, l)| serde_json::from_slice(l).map_err(|_| AuditError::CorruptTail(from + i as u64)))
        .collect::<Result<Vec<AuditEntry>, _>>()?;
    Ok(AuditBundle { from_index: from, to_index: to, anchor_prev_hash: entries[0].prev_hash.clone(), entries })
}
