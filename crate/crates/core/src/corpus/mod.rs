//! Benchmark items, manifests and their invariants.
//!
//! A [`Manifest`] is an ordered list of multiple-choice [`QAItem`]s bound to
//! videos. Every item carries a provenance trail of [`StageRecord`]s, one per
//! pipeline stage it passed through.

mod dedup;
mod io;
mod shuffle;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use dedup::{dedup_items, dedup_key, DedupOutcome};
pub use io::{load_manifest, parse_manifest, render_manifest, save_manifest, write_atomic};
pub use shuffle::{shuffle_options, shuffle_permutation, SHUFFLE_PRNG};

pub const SCHEMA_VERSION: &str = "vknow.manifest/1";
pub const MIN_OPTIONS: usize = 2;
pub const MAX_OPTIONS: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("item {item_id:?}: {reason}")]
    Validation { item_id: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CorpusError {
    pub(crate) fn invalid(item_id: impl Into<String>, reason: impl Into<String>) -> Self {
        CorpusError::Validation {
            item_id: item_id.into(),
            reason: reason.into(),
        }
    }
}

/// The eight visual knowledge task dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskDimension {
    IP,
    OA,
    OM,
    SA,
    EA,
    MS,
    SR,
    SI,
}

impl TaskDimension {
    pub const ALL: [TaskDimension; 8] = [
        TaskDimension::IP,
        TaskDimension::OA,
        TaskDimension::OM,
        TaskDimension::SA,
        TaskDimension::EA,
        TaskDimension::MS,
        TaskDimension::SR,
        TaskDimension::SI,
    ];

    pub fn group(self) -> TaskGroup {
        match self {
            TaskDimension::IP | TaskDimension::OA | TaskDimension::OM | TaskDimension::SA => {
                TaskGroup::WorldCentric
            }
            TaskDimension::EA | TaskDimension::MS | TaskDimension::SR | TaskDimension::SI => {
                TaskGroup::HumanCentric
            }
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            TaskDimension::IP => "IP",
            TaskDimension::OA => "OA",
            TaskDimension::OM => "OM",
            TaskDimension::SA => "SA",
            TaskDimension::EA => "EA",
            TaskDimension::MS => "MS",
            TaskDimension::SR => "SR",
            TaskDimension::SI => "SI",
        }
    }

    pub fn full_name(self) -> &'static str {
        match self {
            TaskDimension::IP => "Intuitive Physics",
            TaskDimension::OA => "Object Affordance",
            TaskDimension::OM => "Object Material",
            TaskDimension::SA => "Spatial Awareness",
            TaskDimension::EA => "Event Anticipation",
            TaskDimension::MS => "Mental State",
            TaskDimension::SR => "Social Relation",
            TaskDimension::SI => "Subjective Intention",
        }
    }

    pub fn from_code(code: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|d| d.code().eq_ignore_ascii_case(code.trim()))
    }
}

impl fmt::Display for TaskDimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskGroup {
    WorldCentric,
    HumanCentric,
}

impl TaskGroup {
    pub fn dimensions(self) -> impl Iterator<Item = TaskDimension> {
        TaskDimension::ALL.into_iter().filter(move |d| d.group() == self)
    }
}

/// Reference to a source video.
///
/// Serialized as a bare string when no content digest is known, otherwise as
/// `{"uri": ..., "sha256": ...}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VideoRef {
    pub uri: String,
    pub sha256: Option<String>,
}

impl VideoRef {
    pub fn new(uri: impl Into<String>) -> Self {
        VideoRef {
            uri: uri.into(),
            sha256: None,
        }
    }

    pub fn with_digest(uri: impl Into<String>, sha256: impl Into<String>) -> Self {
        VideoRef {
            uri: uri.into(),
            sha256: Some(sha256.into()),
        }
    }

    /// Identity used for deduplication and transcript lookup: the content
    /// digest when present, else the source URI.
    pub fn identity(&self) -> &str {
        self.sha256.as_deref().unwrap_or(&self.uri)
    }

    /// Local filesystem path, if the URI points at one.
    pub fn local_path(&self) -> Option<&str> {
        if let Some(p) = self.uri.strip_prefix("file://") {
            return Some(p);
        }
        if self.uri.contains("://") {
            None
        } else {
            Some(&self.uri)
        }
    }
}

impl Serialize for VideoRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Full<'a> {
            uri: &'a str,
            sha256: &'a str,
        }
        match &self.sha256 {
            None => s.serialize_str(&self.uri),
            Some(h) => Full { uri: &self.uri, sha256: h }.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for VideoRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Bare(String),
            Full {
                uri: String,
                #[serde(default)]
                sha256: Option<String>,
            },
        }
        Ok(match Repr::deserialize(d)? {
            Repr::Bare(uri) => VideoRef { uri, sha256: None },
            Repr::Full { uri, sha256 } => VideoRef { uri, sha256 },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    AudioFilter,
    LanguageFilter,
    DistractorRewrite,
    Shuffle,
    HumanReview,
    Dedup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Kept,
    Discarded,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EvidenceValue {
    Number(f64),
    Text(String),
}

impl From<f64> for EvidenceValue {
    fn from(v: f64) -> Self {
        EvidenceValue::Number(v)
    }
}

impl From<u32> for EvidenceValue {
    fn from(v: u32) -> Self {
        EvidenceValue::Number(v as f64)
    }
}

impl From<&str> for EvidenceValue {
    fn from(v: &str) -> Self {
        EvidenceValue::Text(v.to_string())
    }
}

impl From<String> for EvidenceValue {
    fn from(v: String) -> Self {
        EvidenceValue::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub decision: Decision,
    #[serde(default)]
    pub evidence: BTreeMap<String, EvidenceValue>,
    pub timestamp: DateTime<Utc>,
}

impl StageRecord {
    pub fn new(stage: Stage, decision: Decision, timestamp: DateTime<Utc>) -> Self {
        StageRecord {
            stage,
            decision,
            evidence: BTreeMap::new(),
            timestamp,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<EvidenceValue>) -> Self {
        self.evidence.insert(key.to_string(), value.into());
        self
    }
}

/// One multiple-choice question bound to a video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAItem {
    pub id: String,
    pub video: VideoRef,
    pub dimension: TaskDimension,
    pub group: TaskGroup,
    pub question: String,
    pub options: Vec<String>,
    pub answer_index: usize,
    #[serde(default)]
    pub provenance: Vec<StageRecord>,
}

impl QAItem {
    pub fn new(
        id: impl Into<String>,
        video: VideoRef,
        dimension: TaskDimension,
        question: impl Into<String>,
        options: Vec<String>,
        answer_index: usize,
    ) -> Self {
        QAItem {
            id: id.into(),
            video,
            dimension,
            group: dimension.group(),
            question: question.into(),
            options,
            answer_index,
            provenance: Vec::new(),
        }
    }

    pub fn gold(&self) -> &str {
        &self.options[self.answer_index]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.id.trim().is_empty() {
            return Err(CorpusError::invalid(&self.id, "id must be non-empty"));
        }
        if self.question.trim().is_empty() {
            return Err(CorpusError::invalid(&self.id, "question must be non-empty"));
        }
        let n = self.options.len();
        if !(MIN_OPTIONS..=MAX_OPTIONS).contains(&n) {
            return Err(CorpusError::invalid(
                &self.id,
                format!("option count {n} outside {MIN_OPTIONS}..={MAX_OPTIONS}"),
            ));
        }
        if self.answer_index >= n {
            return Err(CorpusError::invalid(
                &self.id,
                format!("answer_index {} out of range for {n} options", self.answer_index),
            ));
        }
        let mut seen = HashSet::new();
        for opt in &self.options {
            if !seen.insert(normalize_whitespace(opt)) {
                return Err(CorpusError::invalid(
                    &self.id,
                    format!("duplicate option {opt:?} after whitespace normalization"),
                ));
            }
        }
        if self.group != self.dimension.group() {
            return Err(CorpusError::invalid(
                &self.id,
                format!("group {:?} does not match dimension {}", self.group, self.dimension),
            ));
        }
        Ok(())
    }

    pub fn push_record(&mut self, record: StageRecord) {
        self.provenance.push(record);
    }
}

/// Trims and collapses internal whitespace runs to a single space.
pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub items: Vec<QAItem>,
    pub schema_version: String,
    pub seed: Option<u64>,
    /// Option-shuffling generator, recorded once a shuffle has been applied.
    pub prng: Option<String>,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest::new(Vec::new())
    }
}

impl Manifest {
    pub fn new(items: Vec<QAItem>) -> Self {
        Manifest {
            items,
            schema_version: SCHEMA_VERSION.to_string(),
            seed: None,
            prng: None,
        }
    }

    /// Same metadata, different items.
    pub fn with_items(&self, items: Vec<QAItem>) -> Self {
        Manifest {
            items,
            schema_version: self.schema_version.clone(),
            seed: self.seed,
            prng: self.prng.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&QAItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &QAItem> {
        self.items.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::new();
        for item in &self.items {
            item.validate()?;
            if !ids.insert(item.id.as_str()) {
                return Err(CorpusError::invalid(&item.id, "duplicate id in manifest"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn ts() -> DateTime<Utc> {
        DateTime::parse_from_rfc3339("2025-01-01T00:00:00Z")
            .unwrap()
            .with_timezone(&Utc)
    }

    pub fn item(id: &str, video: &str, question: &str, n_options: usize) -> QAItem {
        let options = (0..n_options).map(|k| format!("option {k} of {id}")).collect();
        QAItem::new(id, VideoRef::new(video), TaskDimension::EA, question, options, 0)
    }
}
