use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use radlabel_core::corpus::{self, CorpusError};
use radlabel_core::extract::check_hierarchy;
use radlabel_core::{LabelSheet, LabelState, LabelTemplate, ReportDocument, TemplateRegistry};
use serde::{Deserialize, Serialize};

use crate::audit::{self, AuditLog, Snapshot, TaskState};
use crate::error::ReviewError;
use crate::model::*;

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reviewer {
    pub id: String,
    pub admin: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TokenEntry {
    token: String,
    reviewer_id: String,
    #[serde(default)]
    admin: bool,
}

/// Static bearer tokens; file format `[{"token", "reviewer_id", "admin"}]`.
#[derive(Debug, Clone, Default)]
pub struct TokenTable(HashMap<String, Reviewer>);

impl TokenTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReviewError> {
        let entries: Vec<TokenEntry> = corpus::read_json(path)?;
        Ok(Self::from_entries(entries.into_iter().map(|e| (e.token, e.reviewer_id, e.admin))))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (String, String, bool)>) -> Self {
        TokenTable(entries.into_iter().map(|(t, id, admin)| (t, Reviewer { id, admin })).collect())
    }

    pub fn resolve(&self, token: &str) -> Option<&Reviewer> {
        self.0.get(token)
    }
}

#[derive(Debug, Clone)]
pub struct ReviewConfig {
    pub audit_path: PathBuf,
    pub export_dir: PathBuf,
    /// Snapshot after every this many audit events; 0 disables periodic snapshots.
    pub snapshot_every: u64,
    /// `None` accepts every request as an admin reviewer named `local`.
    pub tokens: Option<TokenTable>,
}

impl ReviewConfig {
    pub fn new(audit_path: impl Into<PathBuf>, export_dir: impl Into<PathBuf>) -> Self {
        ReviewConfig { audit_path: audit_path.into(), export_dir: export_dir.into(), snapshot_every: 50, tokens: None }
    }
}

struct Entry {
    report: ReportDocument,
    state: Mutex<TaskState>,
}

/// Adjudication state for a corpus; all mutations go through the audit log.
pub struct ReviewStore {
    registry: TemplateRegistry,
    entries: BTreeMap<String, Entry>,
    originals: Vec<LabelSheet>,
    log: AuditLog,
    config: ReviewConfig,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn uncertain_count(sheet: &LabelSheet) -> usize {
    sheet.labels.values().filter(|s| **s == LabelState::Uncertain).count()
}

impl ReviewStore {
    /// Builds the store and restores prior state from snapshot and audit log.
    ///
    /// A report without a sheet gets an all-Uncertain sheet so that every cell must be reviewed.
    pub fn open(
        reports: Vec<ReportDocument>,
        sheets: Vec<LabelSheet>,
        registry: TemplateRegistry,
        config: ReviewConfig,
    ) -> Result<Self, ReviewError> {
        let mut by_id: HashMap<String, LabelSheet> = HashMap::new();
        for s in sheets {
            let id = s.report_id.clone();
            if by_id.insert(id.clone(), s).is_some() {
                return Err(ReviewError::BadRequest(format!("duplicate sheet for {id}")));
            }
        }
        let mut originals = Vec::with_capacity(reports.len());
        let mut seen = HashSet::new();
        for r in &reports {
            if !seen.insert(r.report_id.clone()) {
                return Err(ReviewError::BadRequest(format!("duplicate report {}", r.report_id)));
            }
            let template = registry.get(&r.region).map_err(|e| ReviewError::BadRequest(e.to_string()))?;
            let sheet = match by_id.remove(&r.report_id) {
                Some(s) => s,
                None => {
                    tracing::warn!(report = %r.report_id, "no extracted sheet; starting from all Uncertain");
                    LabelSheet::filled(r.report_id.clone(), template, LabelState::Uncertain)
                }
            };
            sheet.validate(template).map_err(|e| ReviewError::BadRequest(e.to_string()))?;
            originals.push(sheet);
        }
        if let Some(orphan) = by_id.keys().next() {
            return Err(ReviewError::BadRequest(format!("sheet {orphan} has no report")));
        }

        let (log, events) = AuditLog::open(&config.audit_path)?;
        let mut tasks: IndexMap<String, TaskState> =
            originals.iter().map(|s| (s.report_id.clone(), TaskState::new(s.clone()))).collect();
        if let Some(snap) = audit::read_snapshot(&audit::snapshot_path(&config.audit_path))? {
            for t in snap.tasks {
                match tasks.get_mut(&t.report_id) {
                    Some(slot) => *slot = t,
                    None => return Err(ReviewError::Storage(format!("snapshot names unknown report {}", t.report_id))),
                }
            }
        }
        for e in &events {
            let task = tasks
                .get_mut(&e.report_id)
                .ok_or_else(|| ReviewError::Storage(format!("audit event {} names unknown report {}", e.seq, e.report_id)))?;
            // events already folded into the snapshot
            if e.version > task.version {
                task.apply(e)?;
            }
        }

        let entries = reports
            .into_iter()
            .map(|r| {
                let state = tasks.swap_remove(&r.report_id).expect("task per report");
                (r.report_id.clone(), Entry { report: r, state: Mutex::new(state) })
            })
            .collect();
        Ok(ReviewStore { registry, entries, originals, log, config })
    }

    /// Reads `<dir>/reports/*.json` and `<dir>/sheets/*.json`.
    pub fn open_dir(dir: impl AsRef<Path>, registry: TemplateRegistry, config: ReviewConfig) -> Result<Self, ReviewError> {
        let dir = dir.as_ref();
        let reports: Vec<ReportDocument> = corpus::read_dir(dir.join("reports"))?;
        let sheets_dir = dir.join("sheets");
        let sheets: Vec<LabelSheet> = match corpus::read_dir(&sheets_dir) {
            Ok(s) => s,
            Err(CorpusError::Io { .. }) if !sheets_dir.exists() => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Self::open(reports, sheets, registry, config)
    }

    pub fn authenticate(&self, bearer: Option<&str>) -> Result<Reviewer, ReviewError> {
        match &self.config.tokens {
            None => Ok(Reviewer { id: "local".into(), admin: true }),
            Some(table) => bearer.and_then(|t| table.resolve(t)).cloned().ok_or(ReviewError::Unauthorized),
        }
    }

    pub fn originals(&self) -> &[LabelSheet] {
        &self.originals
    }

    pub fn audit_path(&self) -> &Path {
        self.log.path()
    }

    fn entry(&self, id: &str) -> Result<&Entry, ReviewError> {
        self.entries.get(id).ok_or_else(|| ReviewError::NotFound(id.to_string()))
    }

    fn template(&self, report: &ReportDocument) -> &LabelTemplate {
        self.registry.get(&report.region).expect("region checked at open")
    }

    fn task_view(report: &ReportDocument, s: &TaskState) -> ReviewTask {
        ReviewTask {
            report_id: s.report_id.clone(),
            region: report.region.clone(),
            status: s.status,
            version: s.version,
            uncertain_count: uncertain_count(&s.sheet),
        }
    }

    fn lock(entry: &Entry) -> std::sync::MutexGuard<'_, TaskState> {
        entry.state.lock().expect("task lock poisoned")
    }

    /// Tasks in report_id order, filtered and paged by cursor.
    pub fn list_tasks(&self, q: &TaskQuery) -> TaskPage {
        let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
        let start = match &q.cursor {
            Some(c) => std::ops::Bound::Excluded(c.clone()),
            None => std::ops::Bound::Unbounded,
        };
        let mut tasks = Vec::new();
        let mut next_cursor = None;
        for (id, e) in self.entries.range((start, std::ops::Bound::Unbounded)) {
            if q.region.as_ref().is_some_and(|r| *r != e.report.region) {
                continue;
            }
            let view = Self::task_view(&e.report, &Self::lock(e));
            if q.status.is_some_and(|s| s != view.status) {
                continue;
            }
            if tasks.len() == limit {
                next_cursor = tasks.last().map(|t: &ReviewTask| t.report_id.clone());
                break;
            }
            let _ = id;
            tasks.push(view);
        }
        TaskPage { tasks, next_cursor }
    }

    pub fn get_task(&self, id: &str) -> Result<TaskDetail, ReviewError> {
        let e = self.entry(id)?;
        let s = Self::lock(e).clone();
        let t = self.template(&e.report);
        Ok(TaskDetail {
            task: Self::task_view(&e.report, &s),
            report: e.report.clone(),
            sheet: s.sheet,
            template: TemplateView { labels: t.labels().to_vec(), hierarchy: t.hierarchy() },
            history: s.history,
        })
    }

    pub fn submit(&self, id: &str, req: &SubmitRequest, reviewer: &Reviewer) -> Result<SubmitResponse, ReviewError> {
        let e = self.entry(id)?;
        let template = self.template(&e.report);
        let response = {
            let mut state = Self::lock(e);
            if state.version != req.expected_version {
                return Err(ReviewError::VersionConflict {
                    report_id: id.to_string(),
                    expected: req.expected_version,
                    current: state.version,
                });
            }
            let target = if req.complete { TaskStatus::Done } else { TaskStatus::InReview };
            if state.status == TaskStatus::Done {
                return Err(ReviewError::transition(id, state.status, target));
            }
            let mut candidate = state.sheet.clone();
            let mut seen = HashSet::new();
            for r in &req.records {
                let label = radlabel_core::template::normalize_label(&r.label);
                let current = candidate.get(&label).ok_or_else(|| ReviewError::UnknownLabel(label.clone()))?;
                if !seen.insert(label.clone()) {
                    return Err(ReviewError::DuplicateLabel(label));
                }
                if current != r.previous {
                    return Err(ReviewError::StaleState {
                        label,
                        claimed: r.previous.to_string(),
                        current: current.to_string(),
                    });
                }
                candidate.set(&label, r.corrected);
            }
            let violations = check_hierarchy(&candidate, template);
            if !violations.is_empty() {
                return Err(ReviewError::HierarchyViolation(violations));
            }

            let timestamp = now();
            let records: Vec<AdjudicationRecord> = req
                .records
                .iter()
                .map(|r| AdjudicationRecord {
                    report_id: id.to_string(),
                    label: radlabel_core::template::normalize_label(&r.label),
                    previous: r.previous,
                    corrected: r.corrected,
                    reviewer_id: reviewer.id.clone(),
                    timestamp,
                    note: r.note.clone(),
                })
                .collect();
            let version = state.version + 1;
            let event = self.log.append(|seq| AuditEvent {
                seq,
                report_id: id.to_string(),
                reviewer_id: reviewer.id.clone(),
                timestamp,
                version,
                status: target,
                kind: AuditKind::Adjudicate { records },
            })?;
            state.apply(&event)?;
            SubmitResponse { task: Self::task_view(&e.report, &state), sheet: state.sheet.clone() }
        };
        self.maybe_snapshot()?;
        Ok(response)
    }

    /// Admin action: done back to in_review.
    pub fn reopen(&self, id: &str, req: &ReopenRequest, reviewer: &Reviewer) -> Result<ReviewTask, ReviewError> {
        if !reviewer.admin {
            return Err(ReviewError::Forbidden);
        }
        let e = self.entry(id)?;
        let view = {
            let mut state = Self::lock(e);
            if state.version != req.expected_version {
                return Err(ReviewError::VersionConflict {
                    report_id: id.to_string(),
                    expected: req.expected_version,
                    current: state.version,
                });
            }
            if state.status != TaskStatus::Done {
                return Err(ReviewError::transition(id, state.status, TaskStatus::InReview));
            }
            let version = state.version + 1;
            let event = self.log.append(|seq| AuditEvent {
                seq,
                report_id: id.to_string(),
                reviewer_id: reviewer.id.clone(),
                timestamp: now(),
                version,
                status: TaskStatus::InReview,
                kind: AuditKind::Reopen { note: req.note.clone() },
            })?;
            state.apply(&event)?;
            Self::task_view(&e.report, &state)
        };
        self.maybe_snapshot()?;
        Ok(view)
    }

    fn maybe_snapshot(&self) -> Result<(), ReviewError> {
        let every = self.config.snapshot_every;
        if every > 0 && self.log.last_seq() % every == 0 {
            self.snapshot()?;
        }
        Ok(())
    }

    /// Writes the current state next to the audit log.
    pub fn snapshot(&self) -> Result<Snapshot, ReviewError> {
        let seq = self.log.last_seq();
        let tasks = self.entries.values().map(|e| Self::lock(e).clone()).collect();
        let snap = Snapshot { seq, tasks };
        audit::write_snapshot(&audit::snapshot_path(self.log.path()), &snap)?;
        Ok(snap)
    }

    /// Current sheets in report_id order.
    pub fn current_sheets(&self) -> Vec<LabelSheet> {
        self.entries.values().map(|e| Self::lock(e).sheet.clone()).collect()
    }

    /// Writes sheets to `<export_dir>/<grade>/`; test grade requires every selected task done and no Uncertain.
    pub fn export(&self, req: &ExportRequest) -> Result<ExportResponse, ReviewError> {
        let selected: Vec<(String, TaskState)> = self
            .entries
            .iter()
            .filter(|(_, e)| req.region.as_ref().is_none_or(|r| *r == e.report.region))
            .map(|(id, e)| (id.clone(), Self::lock(e).clone()))
            .collect();
        let grade_dir = match req.grade {
            ExportGrade::Test => "test",
            ExportGrade::ThreeState => "three_state",
        };
        if req.grade == ExportGrade::Test {
            let cells: Vec<UncertainCell> = selected
                .iter()
                .flat_map(|(id, s)| {
                    s.sheet.uncertain_labels().into_iter().map(move |label| UncertainCell { report_id: id.clone(), label })
                })
                .collect();
            if !cells.is_empty() {
                return Err(ReviewError::UnresolvedUncertain(cells));
            }
            let open: Vec<String> =
                selected.iter().filter(|(_, s)| s.status != TaskStatus::Done).map(|(id, _)| id.clone()).collect();
            if !open.is_empty() {
                return Err(ReviewError::TasksNotDone(open));
            }
        }
        let dir = match &req.region {
            Some(r) => self.config.export_dir.join(grade_dir).join(r.as_str()),
            None => self.config.export_dir.join(grade_dir),
        };
        if dir.exists() {
            for entry in std::fs::read_dir(&dir)? {
                let p = entry?.path();
                if p.extension().is_some_and(|x| x == "json") {
                    std::fs::remove_file(p)?;
                }
            }
        }
        let sheets: Vec<LabelSheet> = selected.into_iter().map(|(_, s)| s.sheet).collect();
        corpus::write_dir(&dir, &sheets)?;
        self.snapshot()?;
        Ok(ExportResponse { grade: req.grade, directory: dir.display().to_string(), written: sheets.len() })
    }
}
