//! Review queue persisted as an append-only JSONL event log. The in-memory
//! state is a pure function of the log; opening a store replays it.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use hitl_core::{HitlDecision, Label, TaskKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown item {0}")]
    UnknownItem(String),
    #[error("item {0} is already reviewed")]
    AlreadyReviewed(String),
    #[error("label {0} outside 1..=5")]
    LabelOutOfRange(i64),
    #[error("item {0} already enqueued with different content")]
    Conflict(String),
    #[error("review log: {0}")]
    Io(#[from] std::io::Error),
    #[error("review log line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVote {
    pub annotator_id: String,
    pub label: Label,
    pub confidence: f64,
}

/// Everything fixed at enqueue time. Re-enqueueing must match this exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemContent {
    pub item_id: String,
    pub unit_id: String,
    pub task: TaskKind,
    pub query: String,
    pub question: String,
    pub options: Vec<String>,
    pub aggregated_label: Option<Label>,
    pub mean_confidence: f64,
    pub confidence_sd: f64,
    pub predictions: Vec<ModelVote>,
    pub reason: HitlDecision,
}

impl ItemContent {
    pub fn item_id_for(task: TaskKind, unit_id: &str) -> String {
        format!("{}:{unit_id}", task.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Reviewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lease {
    pub reviewer_id: String,
    pub until: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    #[serde(flatten)]
    pub content: ItemContent,
    pub status: ReviewStatus,
    pub human_label: Option<Label>,
    pub reviewer_id: Option<String>,
    pub reviewed_at: Option<DateTime<Utc>>,
    pub lease: Option<Lease>,
}

impl ReviewItem {
    fn pending(content: ItemContent) -> Self {
        ReviewItem {
            content,
            status: ReviewStatus::Pending,
            human_label: None,
            reviewer_id: None,
            reviewed_at: None,
            lease: None,
        }
    }

    pub fn item_id(&self) -> &str {
        &self.content.item_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub pending: usize,
    pub reviewed: usize,
    pub her_so_far: Option<f64>,
}

/// Decision counts for one task of the run the queue belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecidedTotals {
    pub total: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    Enqueued { item: ItemContent },
    Leased { item_id: String, lease: Lease },
    Reviewed { item_id: String, label: Label, reviewer_id: String, at: DateTime<Utc> },
    Decided { task: TaskKind, totals: DecidedTotals },
}

/// Read view of the queue. Cheap to clone relative to review traffic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    items: Vec<ReviewItem>,
    index: HashMap<String, usize>,
    totals: BTreeMap<TaskKind, DecidedTotals>,
}

impl Snapshot {
    pub fn items(&self) -> &[ReviewItem] {
        &self.items
    }

    pub fn get(&self, item_id: &str) -> Option<&ReviewItem> {
        self.index.get(item_id).map(|&i| &self.items[i])
    }

    /// Up to `limit` pending items in enqueue order. With `reviewer`, items
    /// under someone else's unexpired lease are skipped.
    pub fn next_pending(
        &self,
        task: Option<TaskKind>,
        limit: usize,
        reviewer: Option<&str>,
        now: DateTime<Utc>,
    ) -> Vec<ReviewItem> {
        self.items
            .iter()
            .filter(|it| it.status == ReviewStatus::Pending)
            .filter(|it| task.is_none_or(|t| it.content.task == t))
            .filter(|it| match (reviewer, &it.lease) {
                (Some(r), Some(l)) => l.reviewer_id == r || l.until <= now,
                _ => true,
            })
            .take(limit)
            .cloned()
            .collect()
    }

    pub fn totals(&self) -> &BTreeMap<TaskKind, DecidedTotals> {
        &self.totals
    }

    /// Human label for `unit_id` under `task`, if reviewed.
    pub fn human_label(&self, task: TaskKind, unit_id: &str) -> Option<Label> {
        self.get(&ItemContent::item_id_for(task, unit_id)).and_then(|it| it.human_label)
    }

    pub fn progress(&self) -> Progress {
        let reviewed = self.items.iter().filter(|i| i.status == ReviewStatus::Reviewed).count();
        let (total, flagged) = self.totals.values().fold((0, 0), |(t, f), d| (t + d.total, f + d.flagged));
        Progress {
            pending: self.items.len() - reviewed,
            reviewed,
            her_so_far: hitl_core::metrics::her(flagged, total).ok(),
        }
    }

    fn check(&self, event: &Event) -> Result<(), ReviewError> {
        match event {
            Event::Enqueued { item } => match self.get(&item.item_id) {
                Some(existing) if existing.content != *item => Err(ReviewError::Conflict(item.item_id.clone())),
                _ => Ok(()),
            },
            Event::Leased { item_id, .. } => match self.get(item_id) {
                None => Err(ReviewError::UnknownItem(item_id.clone())),
                Some(it) if it.status == ReviewStatus::Reviewed => Err(ReviewError::AlreadyReviewed(item_id.clone())),
                Some(_) => Ok(()),
            },
            Event::Reviewed { item_id, .. } => match self.get(item_id) {
                None => Err(ReviewError::UnknownItem(item_id.clone())),
                Some(it) if it.status == ReviewStatus::Reviewed => Err(ReviewError::AlreadyReviewed(item_id.clone())),
                Some(_) => Ok(()),
            },
            Event::Decided { .. } => Ok(()),
        }
    }

    /// Apply an already checked event.
    fn apply(&mut self, event: Event) {
        match event {
            Event::Enqueued { item } => {
                if !self.index.contains_key(&item.item_id) {
                    self.index.insert(item.item_id.clone(), self.items.len());
                    self.items.push(ReviewItem::pending(item));
                }
            }
            Event::Leased { item_id, lease } => {
                let i = self.index[&item_id];
                self.items[i].lease = Some(lease);
            }
            Event::Reviewed { item_id, label, reviewer_id, at } => {
                let it = &mut self.items[self.index[&item_id]];
                it.status = ReviewStatus::Reviewed;
                it.human_label = Some(label);
                it.reviewer_id = Some(reviewer_id);
                it.reviewed_at = Some(at);
                it.lease = None;
            }
            Event::Decided { task, totals } => {
                self.totals.insert(task, totals);
            }
        }
    }
}

/// Single-writer handle on the log file.
#[derive(Debug)]
pub struct ReviewStore {
    path: PathBuf,
    file: File,
    state: Snapshot,
}

impl ReviewStore {
    /// Open or create the log at `path` and replay it. A torn final line
    /// (crash mid-append) is dropped and truncated away; damage anywhere
    /// else is an error.
    pub fn open(path: &Path) -> Result<Self, ReviewError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(path)?;
        let mut state = Snapshot::default();
        let mut good_len = 0u64;
        let mut reader = BufReader::new(&file);
        let mut line = String::new();
        let mut n = 0;
        loop {
            line.clear();
            let read = reader.read_line(&mut line)?;
            if read == 0 {
                break;
            }
            n += 1;
            let complete = line.ends_with('\n');
            let parsed = serde_json::from_str::<Event>(line.trim_end())
                .map_err(|e| e.to_string())
                .and_then(|ev| state.check(&ev).map(|_| ev).map_err(|e| e.to_string()));
            if !complete {
                tracing::warn!(path = %path.display(), line = n, "dropping torn final record");
                break;
            }
            match parsed {
                Ok(ev) => {
                    state.apply(ev);
                    good_len += read as u64;
                }
                Err(reason) => return Err(ReviewError::Corrupt { line: n, reason }),
            }
        }
        drop(reader);
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok(ReviewStore { path: path.to_path_buf(), file, state })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.state
    }

    fn commit(&mut self, event: Event) -> Result<(), ReviewError> {
        self.state.check(&event)?;
        let mut line = serde_json::to_string(&event).expect("events serialize");
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.sync_data()?;
        self.state.apply(event);
        Ok(())
    }

    /// Returns how many items were new. Identical re-sends are ignored; an
    /// id that reappears with different content fails before anything in
    /// the batch is written.
    pub fn enqueue(&mut self, items: Vec<ItemContent>) -> Result<usize, ReviewError> {
        let mut batch_ids: HashMap<&str, &ItemContent> = HashMap::new();
        for it in &items {
            self.state.check(&Event::Enqueued { item: it.clone() })?;
            if let Some(prev) = batch_ids.insert(&it.item_id, it) {
                if prev != it {
                    return Err(ReviewError::Conflict(it.item_id.clone()));
                }
            }
        }
        let mut added = 0;
        for it in items {
            if self.state.get(&it.item_id).is_none() {
                self.commit(Event::Enqueued { item: it })?;
                added += 1;
            }
        }
        Ok(added)
    }

    pub fn record_totals(&mut self, task: TaskKind, totals: DecidedTotals) -> Result<(), ReviewError> {
        if self.state.totals.get(&task) == Some(&totals) {
            return Ok(());
        }
        self.commit(Event::Decided { task, totals })
    }

    pub fn lease(
        &mut self,
        item_id: &str,
        reviewer_id: &str,
        until: DateTime<Utc>,
    ) -> Result<ReviewItem, ReviewError> {
        self.commit(Event::Leased {
            item_id: item_id.to_string(),
            lease: Lease { reviewer_id: reviewer_id.to_string(), until },
        })?;
        Ok(self.state.get(item_id).cloned().expect("just leased"))
    }

    pub fn submit_review(
        &mut self,
        item_id: &str,
        label: i64,
        reviewer_id: &str,
        at: DateTime<Utc>,
    ) -> Result<ReviewItem, ReviewError> {
        let label = Label::new(label).map_err(|_| ReviewError::LabelOutOfRange(label))?;
        self.commit(Event::Reviewed {
            item_id: item_id.to_string(),
            label,
            reviewer_id: reviewer_id.to_string(),
            at,
        })?;
        Ok(self.state.get(item_id).cloned().expect("just reviewed"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn item(task: TaskKind, unit: &str) -> ItemContent {
        ItemContent {
            item_id: ItemContent::item_id_for(task, unit),
            unit_id: unit.into(),
            task,
            query: "jaguar".into(),
            question: "Which one?".into(),
            options: vec!["car".into(), "cat".into()],
            aggregated_label: Label::new(3).ok(),
            mean_confidence: 71.0,
            confidence_sd: 9.5,
            predictions: vec![ModelVote { annotator_id: "a".into(), label: Label::new(3).unwrap(), confidence: 71.0 }],
            reason: HitlDecision::FlagLowConfidence,
        }
    }

    fn t0() -> DateTime<Utc> {
        DateTime::from_timestamp(1_700_000_000, 0).unwrap()
    }

    #[test]
    fn enqueue_is_idempotent_and_detects_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::open(&dir.path().join("log.jsonl")).unwrap();
        let items: Vec<_> = (0..10).map(|i| item(TaskKind::Quality, &format!("u{i}"))).collect();
        assert_eq!(s.enqueue(items.clone()).unwrap(), 10);
        assert_eq!(s.enqueue(items.clone()).unwrap(), 0);
        let mut changed = items[4].clone();
        changed.mean_confidence = 50.0;
        match s.enqueue(vec![changed]) {
            Err(ReviewError::Conflict(id)) => assert_eq!(id, "quality:u4"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn queue_order_filter_and_review_rules() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::open(&dir.path().join("log.jsonl")).unwrap();
        assert!(s.snapshot().next_pending(None, 10, None, t0()).is_empty());
        s.enqueue(vec![
            item(TaskKind::Quality, "a"),
            item(TaskKind::Coverage, "b"),
            item(TaskKind::Quality, "c"),
        ])
        .unwrap();
        let ids = |v: Vec<ReviewItem>| v.into_iter().map(|i| i.content.unit_id).collect::<Vec<_>>();
        assert_eq!(ids(s.snapshot().next_pending(None, 10, None, t0())), ["a", "b", "c"]);
        assert_eq!(ids(s.snapshot().next_pending(Some(TaskKind::Quality), 10, None, t0())), ["a", "c"]);

        let done = s.submit_review("quality:a", 4, "r1", t0()).unwrap();
        assert_eq!(done.status, ReviewStatus::Reviewed);
        assert_eq!(done.human_label, Label::new(4).ok());
        assert!(matches!(s.submit_review("quality:a", 5, "r2", t0()), Err(ReviewError::AlreadyReviewed(_))));
        assert!(matches!(s.submit_review("quality:c", 0, "r1", t0()), Err(ReviewError::LabelOutOfRange(0))));
        assert!(matches!(s.submit_review("nope", 3, "r1", t0()), Err(ReviewError::UnknownItem(_))));
        assert_eq!(ids(s.snapshot().next_pending(None, 10, None, t0())), ["b", "c"]);
    }

    #[test]
    fn leases_hide_items_from_other_reviewers_until_expiry() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::open(&dir.path().join("log.jsonl")).unwrap();
        s.enqueue(vec![item(TaskKind::Quality, "a"), item(TaskKind::Quality, "b")]).unwrap();
        let until = t0() + chrono::Duration::minutes(5);
        s.lease("quality:a", "r1", until).unwrap();
        let snap = s.snapshot();
        assert_eq!(snap.next_pending(None, 10, Some("r2"), t0()).len(), 1);
        assert_eq!(snap.next_pending(None, 10, Some("r1"), t0()).len(), 2);
        assert_eq!(snap.next_pending(None, 10, Some("r2"), until).len(), 2);
        // leases are advisory: anyone may still submit
        s.submit_review("quality:a", 2, "r2", t0()).unwrap();
    }

    #[test]
    fn progress_counts_and_her() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = ReviewStore::open(&dir.path().join("log.jsonl")).unwrap();
        assert_eq!(s.snapshot().progress(), Progress { pending: 0, reviewed: 0, her_so_far: None });
        s.record_totals(TaskKind::Quality, DecidedTotals { total: 100, flagged: 0 }).unwrap();
        assert_eq!(s.snapshot().progress().her_so_far, Some(100.0));

        let items: Vec<_> = (0..30).map(|i| item(TaskKind::Quality, &format!("u{i}"))).collect();
        s.enqueue(items).unwrap();
        s.record_totals(TaskKind::Quality, DecidedTotals { total: 100, flagged: 30 }).unwrap();
        for i in 0..12 {
            s.submit_review(&format!("quality:u{i}"), 3, "r", t0()).unwrap();
        }
        assert_eq!(s.snapshot().progress(), Progress { pending: 18, reviewed: 12, her_so_far: Some(70.0) });
    }

    #[test]
    fn replay_reconstructs_state_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let before = {
            let mut s = ReviewStore::open(&path).unwrap();
            s.enqueue(vec![item(TaskKind::Quality, "a"), item(TaskKind::Diversity, "b")]).unwrap();
            s.record_totals(TaskKind::Quality, DecidedTotals { total: 10, flagged: 2 }).unwrap();
            s.lease("diversity:b", "r9", t0()).unwrap();
            s.submit_review("quality:a", 5, "r1", t0()).unwrap();
            s.snapshot().clone()
        };
        assert_eq!(ReviewStore::open(&path).unwrap().snapshot(), &before);

        let good_len = std::fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(br#"{"event":"reviewed","item_id":"div"#).unwrap();
        drop(f);
        let mut s = ReviewStore::open(&path).unwrap();
        assert_eq!(s.snapshot(), &before);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), good_len);
        s.submit_review("diversity:b", 1, "r1", t0()).unwrap();
        assert_eq!(ReviewStore::open(&path).unwrap().snapshot().progress().reviewed, 2);
    }

    #[test]
    fn corruption_before_the_tail_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        {
            let mut s = ReviewStore::open(&path).unwrap();
            s.enqueue(vec![item(TaskKind::Quality, "a")]).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, format!("garbage\n{text}")).unwrap();
        assert!(matches!(ReviewStore::open(&path), Err(ReviewError::Corrupt { line: 1, .. })));
    }
}
