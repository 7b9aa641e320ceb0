use std::collections::HashSet;

use chrono::{DateTime, Utc};

use super::{normalize_whitespace, Decision, Manifest, QAItem, Stage, StageRecord};

/// `(video identity, lowercased whitespace-collapsed question)`.
pub fn dedup_key(item: &QAItem) -> (String, String) {
    (
        item.video.identity().to_string(),
        normalize_whitespace(&item.question).to_lowercase(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct DedupOutcome {
    pub kept: Manifest,
    /// Removed items, each with a trailing `dedup/discarded` stage record.
    pub removed: Vec<QAItem>,
}

/// Removes from `train` every item whose dedup key also occurs in `holdout`.
pub fn dedup_items(train: &Manifest, holdout: &Manifest, at: DateTime<Utc>) -> DedupOutcome {
    let holdout_keys: HashSet<_> = holdout.items.iter().map(dedup_key).collect();
    let mut kept = Vec::new();
    let mut removed = Vec::new();
    for item in &train.items {
        if holdout_keys.contains(&dedup_key(item)) {
            let mut gone = item.clone();
            gone.push_record(StageRecord::new(Stage::Dedup, Decision::Discarded, at).with("reason", "holdout overlap"));
            removed.push(gone);
        } else {
            kept.push(item.clone());
        }
    }
    DedupOutcome {
        kept: train.with_items(kept),
        removed,
    }
}
