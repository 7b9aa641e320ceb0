//! Human verification: the review queue, the append-only decision log and
//! the fold that turns a log into the final manifest.

pub mod server;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusError, Decision, Manifest, QAItem, Stage, StageRecord};

#[derive(Debug, thiserror::Error)]
pub enum ReviewError {
    #[error("unknown item id {0:?}")]
    UnknownItemId(String),
    #[error("invalid decision for {item_id}: {reason}")]
    InvalidDecision { item_id: String, reason: String },
    #[error("decision log line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Accepted,
    Rejected,
    Edited,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewAction {
    Accepted,
    Rejected,
    Edited,
}

impl From<ReviewAction> for ReviewStatus {
    fn from(a: ReviewAction) -> Self {
        match a {
            ReviewAction::Accepted => ReviewStatus::Accepted,
            ReviewAction::Rejected => ReviewStatus::Rejected,
            ReviewAction::Edited => ReviewStatus::Edited,
        }
    }
}

impl std::str::FromStr for ReviewStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown status {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub item: QAItem,
    pub video_url: String,
    pub status: ReviewStatus,
    #[serde(default)]
    pub editor_note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub item_id: String,
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<QAItem>,
    pub reviewer: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl ReviewDecision {
    pub fn new(item_id: impl Into<String>, action: ReviewAction, reviewer: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        ReviewDecision {
            item_id: item_id.into(),
            action,
            replacement: None,
            reviewer: reviewer.into(),
            timestamp,
            note: String::new(),
        }
    }

    pub fn edited(replacement: QAItem, reviewer: impl Into<String>, timestamp: DateTime<Utc>) -> Self {
        ReviewDecision {
            replacement: Some(replacement.clone()),
            ..Self::new(replacement.id, ReviewAction::Edited, reviewer, timestamp)
        }
    }

    pub fn validate(&self) -> Result<(), ReviewError> {
        let bad = |reason: String| ReviewError::InvalidDecision {
            item_id: self.item_id.clone(),
            reason,
        };
        match (&self.action, &self.replacement) {
            (ReviewAction::Edited, None) => Err(bad("edited decision needs a replacement item".into())),
            (ReviewAction::Edited, Some(r)) => {
                if r.id != self.item_id {
                    return Err(bad(format!("replacement id {:?} differs from item id", r.id)));
                }
                r.validate().map_err(|e| match e {
                    CorpusError::Validation { reason, .. } => bad(format!("replacement: {reason}")),
                    other => bad(other.to_string()),
                })
            }
            (_, Some(_)) => Err(bad("only edited decisions carry a replacement".into())),
            (_, None) => Ok(()),
        }
    }
}

pub fn video_url(item: &QAItem) -> String {
    format!("/video/{}", item.id)
}

/// One pending task per item, ordered by id.
pub fn build_queue(manifest: &Manifest) -> Vec<ReviewTask> {
    let mut tasks: Vec<ReviewTask> = manifest
        .items
        .iter()
        .map(|item| ReviewTask {
            item: item.clone(),
            video_url: video_url(item),
            status: ReviewStatus::Pending,
            editor_note: String::new(),
        })
        .collect();
    tasks.sort_by(|a, b| a.item.id.cmp(&b.item.id));
    tasks
}

pub fn load_queue(path: &Path) -> Result<Vec<ReviewTask>, ReviewError> {
    read_jsonl(path)
}

pub fn save_queue(tasks: &[ReviewTask], path: &Path) -> Result<(), ReviewError> {
    let mut out = String::new();
    for t in tasks {
        out.push_str(&serde_json::to_string(t).expect("task serializes"));
        out.push('\n');
    }
    crate::corpus::write_atomic(path, out.as_bytes())?;
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReviewError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReviewError::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Append-only, line-delimited decision log.
#[derive(Debug, Clone)]
pub struct DecisionLog {
    path: PathBuf,
}

impl DecisionLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        DecisionLog { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Appends one decision and syncs it to disk.
    pub fn append(&self, d: &ReviewDecision) -> Result<(), ReviewError> {
        let mut line = serde_json::to_string(d).expect("decision serializes");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    /// All decisions in append order; a missing file is an empty log.
    pub fn load(&self) -> Result<Vec<ReviewDecision>, ReviewError> {
        read_jsonl(&self.path)
    }
}

/// Two or more decisions for one item that disagree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub item_id: String,
    pub winner: ReviewDecision,
    pub superseded: Vec<ReviewDecision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApplyOutcome {
    /// Accepted and edited items, in manifest order.
    pub manifest: Manifest,
    /// Items with no decision yet; excluded from `manifest`.
    pub pending: Vec<QAItem>,
    pub conflicts: Vec<Conflict>,
}

/// Latest decision per item: newest timestamp, ties broken by log position.
pub fn resolve(decisions: &[ReviewDecision]) -> (BTreeMap<&str, &ReviewDecision>, Vec<Conflict>) {
    let mut by_id: BTreeMap<&str, Vec<(usize, &ReviewDecision)>> = BTreeMap::new();
    for (i, d) in decisions.iter().enumerate() {
        by_id.entry(d.item_id.as_str()).or_default().push((i, d));
    }
    let mut winners = BTreeMap::new();
    let mut conflicts = Vec::new();
    for (id, ds) in by_id {
        let &(_, winner) = ds.iter().max_by_key(|(i, d)| (d.timestamp, *i)).expect("non-empty");
        let superseded: Vec<ReviewDecision> = ds
            .iter()
            .filter(|(_, d)| d.action != winner.action || d.replacement != winner.replacement)
            .map(|(_, d)| (*d).clone())
            .collect();
        if !superseded.is_empty() {
            log::warn!(
                "conflicting decisions for {id}: {:?} by {} at {} wins over {} other(s)",
                winner.action,
                winner.reviewer,
                winner.timestamp,
                superseded.len()
            );
            conflicts.push(Conflict {
                item_id: id.to_string(),
                winner: winner.clone(),
                superseded,
            });
        }
        winners.insert(id, winner);
    }
    (winners, conflicts)
}

/// Folds a decision log over the manifest that was queued for review.
pub fn apply_decisions(manifest: &Manifest, decisions: &[ReviewDecision]) -> Result<ApplyOutcome, ReviewError> {
    let index = manifest.index();
    for d in decisions {
        if !index.contains_key(d.item_id.as_str()) {
            return Err(ReviewError::UnknownItemId(d.item_id.clone()));
        }
        d.validate()?;
    }
    let (winners, conflicts) = resolve(decisions);
    let mut kept = Vec::new();
    let mut pending = Vec::new();
    for item in &manifest.items {
        let Some(d) = winners.get(item.id.as_str()) else {
            pending.push(item.clone());
            continue;
        };
        let decision = match d.action {
            ReviewAction::Rejected => continue,
            ReviewAction::Accepted => Decision::Kept,
            ReviewAction::Edited => Decision::Modified,
        };
        let mut out = match (&d.action, &d.replacement) {
            (ReviewAction::Edited, Some(r)) => QAItem {
                provenance: item.provenance.clone(),
                ..r.clone()
            },
            _ => item.clone(),
        };
        let mut record = StageRecord::new(Stage::HumanReview, decision, d.timestamp).with("reviewer", d.reviewer.as_str());
        if !d.note.is_empty() {
            record = record.with("note", d.note.as_str());
        }
        out.push_record(record);
        kept.push(out);
    }
    Ok(ApplyOutcome {
        manifest: manifest.with_items(kept),
        pending,
        conflicts,
    })
}
