//! Append-only JSONL audit log, snapshots and replay.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use indexmap::IndexMap;
use radlabel_core::{LabelSheet, Provenance};
use serde::{Deserialize, Serialize};

use crate::error::ReviewError;
use crate::model::{AdjudicationRecord, AuditEvent, AuditKind, TaskStatus};

/// Mutable review state of one report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskState {
    pub report_id: String,
    pub status: TaskStatus,
    pub version: u64,
    pub sheet: LabelSheet,
    pub history: Vec<AdjudicationRecord>,
}

impl TaskState {
    pub fn new(sheet: LabelSheet) -> Self {
        TaskState {
            report_id: sheet.report_id.clone(),
            status: TaskStatus::Pending,
            version: 1,
            sheet,
            history: Vec::new(),
        }
    }

    /// Applies a logged event. Fails if the event does not fit the current state.
    pub fn apply(&mut self, event: &AuditEvent) -> Result<(), ReviewError> {
        let corrupt = |why: String| ReviewError::Storage(format!("audit event {} for {}: {why}", event.seq, event.report_id));
        if event.version != self.version + 1 {
            return Err(corrupt(format!("version {} follows {}", event.version, self.version)));
        }
        if let AuditKind::Adjudicate { records } = &event.kind {
            for r in records {
                match self.sheet.get(&r.label) {
                    Some(s) if s == r.previous => {
                        self.sheet.set(&r.label, r.corrected);
                    }
                    other => return Err(corrupt(format!("label {:?} is {other:?}, log says {}", r.label, r.previous))),
                }
            }
            self.sheet.provenance = Provenance::Adjudicated;
            self.history.extend(records.iter().cloned());
        }
        self.version = event.version;
        self.status = event.status;
        Ok(())
    }
}

/// Rebuilds task state from the original sheets and the full event sequence.
pub fn replay(originals: &[LabelSheet], events: &[AuditEvent]) -> Result<IndexMap<String, TaskState>, ReviewError> {
    let mut tasks: IndexMap<String, TaskState> =
        originals.iter().map(|s| (s.report_id.clone(), TaskState::new(s.clone()))).collect();
    apply_all(&mut tasks, events)?;
    Ok(tasks)
}

pub fn apply_all(tasks: &mut IndexMap<String, TaskState>, events: &[AuditEvent]) -> Result<(), ReviewError> {
    for e in events {
        let task = tasks
            .get_mut(&e.report_id)
            .ok_or_else(|| ReviewError::Storage(format!("audit event {} names unknown report {}", e.seq, e.report_id)))?;
        task.apply(e)?;
    }
    Ok(())
}

pub struct AuditLog {
    path: PathBuf,
    inner: Mutex<LogInner>,
}

struct LogInner {
    file: File,
    next_seq: u64,
}

impl AuditLog {
    /// Opens (creating) the log; returns it with the events already present.
    pub fn open(path: impl AsRef<Path>) -> Result<(Self, Vec<AuditEvent>), ReviewError> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let events = if path.exists() { read_events(&path)? } else { Vec::new() };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let next_seq = events.last().map_or(1, |e| e.seq + 1);
        Ok((AuditLog { path, inner: Mutex::new(LogInner { file, next_seq }) }, events))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Assigns the next sequence number, writes and syncs the event line.
    pub fn append(&self, build: impl FnOnce(u64) -> AuditEvent) -> Result<AuditEvent, ReviewError> {
        let mut inner = self.inner.lock().expect("audit log lock poisoned");
        let event = build(inner.next_seq);
        let mut line = serde_json::to_string(&event).map_err(|e| ReviewError::Storage(e.to_string()))?;
        line.push('\n');
        inner.file.write_all(line.as_bytes())?;
        inner.file.sync_data()?;
        inner.next_seq += 1;
        Ok(event)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("audit log lock poisoned").next_seq - 1
    }
}

pub fn read_events(path: &Path) -> Result<Vec<AuditEvent>, ReviewError> {
    let file = File::open(path)?;
    let mut out: Vec<AuditEvent> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: AuditEvent = serde_json::from_str(&line)
            .map_err(|err| ReviewError::Storage(format!("{} line {}: {err}", path.display(), i + 1)))?;
        if out.last().is_some_and(|prev| e.seq <= prev.seq) {
            return Err(ReviewError::Storage(format!("{} line {}: sequence not increasing", path.display(), i + 1)));
        }
        out.push(e);
    }
    Ok(out)
}

/// Full task state as of audit event `seq`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub tasks: Vec<TaskState>,
}

pub fn snapshot_path(audit: &Path) -> PathBuf {
    let mut name = audit.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".snapshot.json");
    audit.with_file_name(name)
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<(), ReviewError> {
    Ok(radlabel_core::corpus::write_json(path, snapshot)?)
}

pub fn read_snapshot(path: &Path) -> Result<Option<Snapshot>, ReviewError> {
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(radlabel_core::corpus::read_json(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use radlabel_core::{LabelState, Region, TemplateRegistry};

    fn sheet(id: &str) -> LabelSheet {
        let t = TemplateRegistry::shipped().get(&Region::thumb()).unwrap().clone();
        LabelSheet::filled(id, &t, LabelState::False)
    }

    fn event(seq: u64, version: u64, label: &str, previous: LabelState, corrected: LabelState) -> AuditEvent {
        AuditEvent {
            seq,
            report_id: "a".into(),
            reviewer_id: "rev".into(),
            timestamp: 0,
            version,
            status: TaskStatus::InReview,
            kind: AuditKind::Adjudicate {
                records: vec![AdjudicationRecord {
                    report_id: "a".into(),
                    label: label.into(),
                    previous,
                    corrected,
                    reviewer_id: "rev".into(),
                    timestamp: 0,
                    note: None,
                }],
            },
        }
    }

    #[test]
    fn replay_applies_in_order() {
        let label = sheet("a").labels.keys().next().unwrap().clone();
        let events = [
            event(1, 2, &label, LabelState::False, LabelState::Uncertain),
            event(2, 3, &label, LabelState::Uncertain, LabelState::True),
        ];
        let tasks = replay(&[sheet("a")], &events).unwrap();
        assert_eq!(tasks["a"].sheet.get(&label), Some(LabelState::True));
        assert_eq!(tasks["a"].version, 3);
        assert_eq!(tasks["a"].history.len(), 2);
        assert_eq!(tasks["a"].sheet.provenance, Provenance::Adjudicated);
        // out of order is rejected
        assert!(replay(&[sheet("a")], &events[1..]).is_err());
    }

    #[test]
    fn log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("audit.jsonl");
        let label = sheet("a").labels.keys().next().unwrap().clone();
        let (log, existing) = AuditLog::open(&p).unwrap();
        assert!(existing.is_empty());
        let e = log.append(|seq| event(seq, 2, &label, LabelState::False, LabelState::True)).unwrap();
        assert_eq!(e.seq, 1);
        drop(log);
        let (log, existing) = AuditLog::open(&p).unwrap();
        assert_eq!(existing, vec![e]);
        assert_eq!(log.last_seq(), 1);
        assert_eq!(snapshot_path(&p), dir.path().join("audit.jsonl.snapshot.json"));
    }
}
