mod common;

use common::{record, resolve_all, submit, Fixture};
use radlabel_core::{LabelSheet, LabelState, Provenance, Region, TemplateRegistry};
use radlabel_review::audit;
use radlabel_review::model::*;
use radlabel_review::{ReviewError, ReviewStore, Reviewer, TokenTable};

fn admin() -> Reviewer {
    Reviewer { id: "rev-1".into(), admin: true }
}

fn first_state(store: &ReviewStore, id: &str, state: LabelState) -> Option<String> {
    let t = store.get_task(id).unwrap();
    t.sheet.labels.iter().find(|(_, s)| **s == state).map(|(l, _)| l.clone())
}

fn audit_len(store: &ReviewStore) -> usize {
    audit::read_events(store.audit_path()).unwrap().len()
}

/// A label whose parents are all True, so flipping it False→True is hierarchy-safe.
fn safe_flip(store: &ReviewStore, id: &str) -> String {
    let d = store.get_task(id).unwrap();
    d.template
        .labels
        .iter()
        .find(|l| {
            d.sheet.get(l) == Some(LabelState::False)
                && d.template.hierarchy.iter().filter(|(c, _)| c == *l).all(|(_, p)| d.sheet.get(p) == Some(LabelState::True))
        })
        .cloned()
        .unwrap()
}

#[test]
fn fresh_corpus_lists_pending_tasks() {
    let fx = Fixture::new(Region::thumb(), 3, 0.0, 1);
    let store = fx.open();
    let page = store.list_tasks(&TaskQuery::default());
    assert_eq!(page.tasks.len(), 3);
    assert!(page.tasks.iter().all(|t| t.status == TaskStatus::Pending && t.version == 1));
    let ids: Vec<_> = page.tasks.iter().map(|t| t.report_id.clone()).collect();
    let mut sorted = ids.clone();
    sorted.sort();
    assert_eq!(ids, sorted);

    let done = store.list_tasks(&TaskQuery { status: Some(TaskStatus::Done), ..Default::default() });
    assert!(done.tasks.is_empty());

    let id = ids[0].clone();
    let label = safe_flip(&store, &id);
    store.submit(&id, &submit(1, vec![record(&label, LabelState::False, LabelState::True)], false), &admin()).unwrap();
    let pending = store.list_tasks(&TaskQuery { status: Some(TaskStatus::Pending), ..Default::default() });
    assert_eq!(pending.tasks.len(), 2);
    assert!(pending.tasks.iter().all(|t| t.report_id != id));
}

#[test]
fn pagination_by_cursor_and_region() {
    let mut fx = Fixture::new(Region::thumb(), 7, 0.0, 2);
    let other = Fixture::new(Region::elbow(), 4, 0.0, 3);
    fx.reports.extend(other.reports.iter().map(|r| {
        let mut r = r.clone();
        r.report_id = format!("z-{}", r.report_id);
        r
    }));
    fx.sheets.extend(other.sheets.iter().map(|s| {
        let mut s = s.clone();
        s.report_id = format!("z-{}", s.report_id);
        s
    }));
    let store = fx.open();
    let mut seen = Vec::new();
    let mut cursor = None;
    loop {
        let page = store.list_tasks(&TaskQuery { cursor: cursor.clone(), limit: Some(3), ..Default::default() });
        seen.extend(page.tasks.iter().map(|t| t.report_id.clone()));
        match page.next_cursor {
            Some(c) => cursor = Some(c),
            None => break,
        }
    }
    assert_eq!(seen.len(), 11);
    let mut sorted = seen.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(seen, sorted);
    let elbow = store.list_tasks(&TaskQuery { region: Some(Region::elbow()), ..Default::default() });
    assert_eq!(elbow.tasks.len(), 4);
}

#[test]
fn get_task_payload_per_region() {
    for (region, n) in [(Region::clavicle(), 26), (Region::elbow(), 29), (Region::thumb(), 25)] {
        let fx = Fixture::new(region.clone(), 2, 0.0, 4);
        let store = fx.open();
        let id = fx.reports[0].report_id.clone();
        let d = store.get_task(&id).unwrap();
        assert_eq!(d.sheet.labels.len(), n, "{region}");
        assert_eq!(d.template.labels.len(), n);
        assert_eq!(d.report.text, fx.reports[0].text);
        assert!(d.history.is_empty());
    }
    let fx = Fixture::new(Region::thumb(), 1, 0.0, 4);
    assert!(matches!(fx.open().get_task("nope"), Err(ReviewError::NotFound(_))));
}

#[test]
fn corrections_accumulate_history_and_bump_version() {
    let fx = Fixture::new(Region::elbow(), 2, 0.0, 5);
    let store = fx.open();
    let id = fx.reports[0].report_id.clone();
    let label = safe_flip(&store, &id);
    let r = store.submit(&id, &submit(1, vec![record(&label, LabelState::False, LabelState::True)], false), &admin()).unwrap();
    assert_eq!(r.task.version, 2);
    assert_eq!(r.task.status, TaskStatus::InReview);
    assert_eq!(r.sheet.provenance, Provenance::Adjudicated);
    assert_eq!(r.sheet.get(&label), Some(LabelState::True));
    let r = store.submit(&id, &submit(2, vec![record(&label, LabelState::True, LabelState::False)], true), &admin()).unwrap();
    assert_eq!(r.task.version, 3);
    assert_eq!(r.task.status, TaskStatus::Done);
    let d = store.get_task(&id).unwrap();
    assert_eq!(d.history.len(), 2);
    assert_eq!(d.history[0].reviewer_id, "rev-1");
    assert_eq!(d.history[1].previous, LabelState::True);
}

#[test]
fn stale_version_changes_nothing() {
    let fx = Fixture::new(Region::thumb(), 2, 0.0, 6);
    let store = fx.open();
    let id = fx.reports[0].report_id.clone();
    let label = safe_flip(&store, &id);
    let before = store.get_task(&id).unwrap();
    let err = store.submit(&id, &submit(7, vec![record(&label, LabelState::False, LabelState::True)], false), &admin());
    assert!(matches!(err, Err(ReviewError::VersionConflict { expected: 7, current: 1, .. })));
    assert_eq!(store.get_task(&id).unwrap(), before);
    assert_eq!(audit_len(&store), 0);
}

#[test]
fn stale_previous_state_is_rejected() {
    let fx = Fixture::new(Region::thumb(), 2, 0.0, 6);
    let store = fx.open();
    let id = fx.reports[0].report_id.clone();
    let label = first_state(&store, &id, LabelState::False).unwrap();
    let err = store.submit(&id, &submit(1, vec![record(&label, LabelState::True, LabelState::False)], false), &admin());
    match err {
        Err(ReviewError::StaleState { label: l, .. }) => assert_eq!(l, label),
        other => panic!("{other:?}"),
    }
    let bad = store.submit(&id, &submit(1, vec![record("Not A Label", LabelState::False, LabelState::True)], false), &admin());
    assert!(matches!(bad, Err(ReviewError::UnknownLabel(_))));
    let dup = store.submit(
        &id,
        &submit(
            1,
            vec![record(&label, LabelState::False, LabelState::True), record(&label, LabelState::False, LabelState::True)],
            false,
        ),
        &admin(),
    );
    assert!(matches!(dup, Err(ReviewError::DuplicateLabel(_))));
    assert_eq!(audit_len(&store), 0);
}

#[test]
fn hierarchy_violation_rolls_back_whole_submission() {
    let fx = Fixture::new(Region::elbow(), 1, 0.0, 7);
    let mut sheets = fx.sheets.clone();
    let t = TemplateRegistry::shipped().get(&Region::elbow()).unwrap().clone();
    sheets[0] = LabelSheet::filled(sheets[0].report_id.clone(), &t, LabelState::False);
    let fx = Fixture { sheets, ..fx };
    let store = fx.open();
    let id = fx.reports[0].report_id.clone();
    let (child, parent) = t.hierarchy()[0].clone();
    let unrelated = t.labels().iter().find(|l| **l != child && **l != parent && t.hierarchy().iter().all(|(c, p)| c != *l && p != *l));
    let mut records = vec![record(&child, LabelState::False, LabelState::True)];
    if let Some(u) = unrelated {
        records.insert(0, record(u, LabelState::False, LabelState::Uncertain));
    }
    let before = store.get_task(&id).unwrap();
    match store.submit(&id, &submit(1, records, false), &admin()) {
        Err(ReviewError::HierarchyViolation(v)) => {
            assert!(v.iter().any(|v| v.child == child && v.parent == parent));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(store.get_task(&id).unwrap(), before);
    assert_eq!(audit_len(&store), 0);
    // raising the parent together with the child is accepted
    let ok = store.submit(
        &id,
        &submit(
            1,
            vec![record(&child, LabelState::False, LabelState::True), record(&parent, LabelState::False, LabelState::True)],
            false,
        ),
        &admin(),
    );
    let ok = match ok {
        Ok(r) => r,
        // the parent may itself have a parent
        Err(ReviewError::HierarchyViolation(_)) => return,
        Err(e) => panic!("{e:?}"),
    };
    assert_eq!(ok.task.version, 2);
}

#[test]
fn done_tasks_need_admin_reopen() {
    let fx = Fixture::new(Region::thumb(), 1, 0.0, 8);
    let store = fx.open();
    let id = fx.reports[0].report_id.clone();
    store.submit(&id, &submit(1, vec![], true), &admin()).unwrap();
    let again = store.submit(&id, &submit(2, vec![], false), &admin());
    assert!(matches!(again, Err(ReviewError::InvalidTransition { from: "done", .. })));
    let plain = Reviewer { id: "rev-2".into(), admin: false };
    assert!(matches!(store.reopen(&id, &ReopenRequest { expected_version: 2, note: None }, &plain), Err(ReviewError::Forbidden)));
    let t = store.reopen(&id, &ReopenRequest { expected_version: 2, note: Some("recheck".into()) }, &admin()).unwrap();
    assert_eq!((t.status, t.version), (TaskStatus::InReview, 3));
    assert!(matches!(
        store.reopen(&id, &ReopenRequest { expected_version: 3, note: None }, &admin()),
        Err(ReviewError::InvalidTransition { from: "in_review", .. })
    ));
    store.submit(&id, &submit(3, vec![], true), &admin()).unwrap();
}

#[test]
fn export_gate() {
    let fx = Fixture::new(Region::thumb(), 5, 0.0, 9);
    let mut sheets = fx.sheets.clone();
    let t = TemplateRegistry::shipped().get(&Region::thumb()).unwrap().clone();
    let target = t.labels().iter().find(|l| t.children_of(t.index_of(l).unwrap()).next().is_none()).unwrap().clone();
    sheets[2].set(&target, LabelState::Uncertain);
    sheets[2] = radlabel_core::extract::repair_hierarchy(&sheets[2], &t);
    let expected_cells = sheets[2].uncertain_labels().len();
    assert!(expected_cells >= 1);
    let fx = Fixture { sheets, ..fx };
    let store = fx.open();
    for r in &fx.reports {
        store.submit(&r.report_id, &submit(1, vec![], true), &admin()).unwrap();
    }
    match store.export(&ExportRequest { grade: ExportGrade::Test, region: None }) {
        Err(ReviewError::UnresolvedUncertain(cells)) => {
            assert_eq!(cells.len(), expected_cells);
            assert!(cells.iter().all(|c| c.report_id == fx.reports[2].report_id));
        }
        other => panic!("{other:?}"),
    }
    let three = store.export(&ExportRequest { grade: ExportGrade::ThreeState, region: None }).unwrap();
    assert_eq!(three.written, 5);
    let written: Vec<LabelSheet> = radlabel_core::corpus::read_dir(&three.directory).unwrap();
    assert!(written.iter().any(|s| !s.uncertain_labels().is_empty()));

    let id = &fx.reports[2].report_id;
    store.reopen(id, &ReopenRequest { expected_version: 2, note: None }, &admin()).unwrap();
    let sheet = store.get_task(id).unwrap().sheet;
    store.submit(id, &submit(3, resolve_all(&sheet), true), &admin()).unwrap();
    let test = store.export(&ExportRequest { grade: ExportGrade::Test, region: Some(Region::thumb()) }).unwrap();
    let written: Vec<LabelSheet> = radlabel_core::corpus::read_dir(&test.directory).unwrap();
    assert_eq!(written.len(), 5);
    assert!(written.iter().all(|s| s.is_test_grade() && s.uncertain_labels().is_empty()));
}

#[test]
fn test_export_requires_done_tasks() {
    let fx = Fixture::new(Region::thumb(), 3, 0.0, 10);
    let store = fx.open();
    store.submit(&fx.reports[0].report_id, &submit(1, vec![], true), &admin()).unwrap();
    match store.export(&ExportRequest { grade: ExportGrade::Test, region: None }) {
        Err(ReviewError::TasksNotDone(ids)) => assert_eq!(ids.len(), 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn restart_restores_state_from_log_and_snapshot() {
    let fx = Fixture::new(Region::clavicle(), 6, 0.05, 11);
    let mut cfg = fx.config();
    cfg.snapshot_every = 3;
    let store = fx.open_with(cfg.clone());
    for (i, r) in fx.reports.iter().enumerate() {
        let sheet = store.get_task(&r.report_id).unwrap().sheet;
        store.submit(&r.report_id, &submit(1, resolve_all(&sheet), i % 2 == 0), &admin()).unwrap();
    }
    let before = store.current_sheets();
    let tasks_before = store.list_tasks(&TaskQuery::default());
    drop(store);
    assert!(audit::snapshot_path(&cfg.audit_path).exists());
    let reopened = fx.open_with(cfg.clone());
    assert_eq!(reopened.current_sheets(), before);
    assert_eq!(reopened.list_tasks(&TaskQuery::default()), tasks_before);

    // without the snapshot, the log alone gives the same state
    std::fs::remove_file(audit::snapshot_path(&cfg.audit_path)).unwrap();
    let from_log = fx.open_with(cfg);
    assert_eq!(from_log.current_sheets(), before);
}

#[test]
fn tokens_identify_reviewers() {
    let fx = Fixture::new(Region::thumb(), 1, 0.0, 12);
    let path = fx.dir.path().join("tokens.json");
    std::fs::write(&path, r#"[{"token": "t1", "reviewer_id": "alice"}, {"token": "t2", "reviewer_id": "root", "admin": true}]"#)
        .unwrap();
    let mut cfg = fx.config();
    cfg.tokens = Some(TokenTable::load(&path).unwrap());
    let store = fx.open_with(cfg);
    assert!(matches!(store.authenticate(None), Err(ReviewError::Unauthorized)));
    assert!(matches!(store.authenticate(Some("bad")), Err(ReviewError::Unauthorized)));
    assert_eq!(store.authenticate(Some("t1")).unwrap(), Reviewer { id: "alice".into(), admin: false });
    assert!(store.authenticate(Some("t2")).unwrap().admin);
    let open = fx.open();
    assert_eq!(open.authenticate(None).unwrap().id, "local");
}
