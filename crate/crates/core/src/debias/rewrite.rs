use std::collections::HashSet;
use std::sync::LazyLock;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{DebiasConfig, DebiasError};
use crate::corpus::{normalize_whitespace, Decision, Manifest, QAItem, Stage, StageRecord};
use crate::gateway::{Gateway, Message};
use crate::par;
use crate::rewards::format_options;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum RewriteRejection {
    #[error("reply contains no option list")]
    Unparseable,
    #[error("expected {expected} options, got {got}")]
    Count { expected: usize, got: usize },
    #[error("gold option changed from {expected:?} to {got:?}")]
    GoldAltered { expected: String, got: String },
    #[error("duplicate option {0:?}")]
    Duplicate(String),
    #[error("empty option")]
    EmptyOption,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorRewrite {
    pub item_id: String,
    pub old_options: Vec<String>,
    pub new_options: Vec<String>,
    pub answer_preserved: bool,
    /// False when every attempt was rejected and the originals were kept.
    pub accepted: bool,
    pub attempts: u32,
    pub rejections: Vec<RewriteRejection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewriteOutcome {
    pub rewritten: Manifest,
    /// Sorted by item id.
    pub rewrites: Vec<DistractorRewrite>,
}

static THINK_BLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)<think>.*?</think>").unwrap());
static LISTED: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*(?:[A-Fa-f][.):]|\d+[.)]|[-*])\s+(.+?)\s*$").unwrap());

/// Pulls an option list out of a rewriter reply: a JSON array of strings if
/// one is present, otherwise lettered, numbered or bulleted lines.
pub fn parse_rewrite(reply: &str) -> Option<Vec<String>> {
    let body = THINK_BLOCK.replace_all(reply, "");
    if let (Some(start), Some(end)) = (body.find('['), body.rfind(']')) {
        if start < end {
            if let Ok(list) = serde_json::from_str::<Vec<String>>(&body[start..=end]) {
                return Some(list);
            }
        }
    }
    let lines: Vec<String> = body
        .lines()
        .filter_map(|l| LISTED.captures(l).map(|c| c[1].to_string()))
        .collect();
    (!lines.is_empty()).then_some(lines)
}

/// Checks a full replacement option list against the original item.
pub fn check_rewrite(item: &QAItem, new: &[String]) -> Result<(), RewriteRejection> {
    if new.len() != item.options.len() {
        return Err(RewriteRejection::Count {
            expected: item.options.len(),
            got: new.len(),
        });
    }
    if new[item.answer_index] != item.gold() {
        return Err(RewriteRejection::GoldAltered {
            expected: item.gold().to_string(),
            got: new[item.answer_index].clone(),
        });
    }
    let mut seen = HashSet::new();
    for o in new {
        let norm = normalize_whitespace(o);
        if norm.is_empty() {
            return Err(RewriteRejection::EmptyOption);
        }
        if !seen.insert(norm) {
            return Err(RewriteRejection::Duplicate(o.clone()));
        }
    }
    Ok(())
}

fn rewrite_prompt(template: &str, item: &QAItem) -> String {
    template
        .replace("{question}", &item.question)
        .replace("{options}", &format_options(&item.options))
        .replace("{answer}", item.gold())
        .replace("{n}", &item.options.len().to_string())
}

fn rewrite_one(item: &QAItem, cfg: &DebiasConfig, gw: &Gateway, at: DateTime<Utc>) -> Result<(QAItem, DistractorRewrite), DebiasError> {
    let messages = [Message::user(rewrite_prompt(&cfg.rewrite_prompt, item))];
    let mut rejections = Vec::new();
    for attempt in 0..cfg.rewrite_attempts {
        let reply = gw.chat_sample(&cfg.rewriter, &messages, attempt).map_err(|source| DebiasError::Gateway {
            item_id: item.id.clone(),
            source,
        })?;
        let verdict = parse_rewrite(&reply.text)
            .ok_or(RewriteRejection::Unparseable)
            .and_then(|new| check_rewrite(item, &new).map(|_| new));
        match verdict {
            Ok(new) => {
                let decision = if new == item.options { Decision::Kept } else { Decision::Modified };
                let mut out = item.clone();
                out.options = new.clone();
                out.push_record(StageRecord::new(Stage::DistractorRewrite, decision, at).with("attempts", f64::from(attempt + 1)));
                let rw = DistractorRewrite {
                    item_id: item.id.clone(),
                    old_options: item.options.clone(),
                    new_options: new,
                    answer_preserved: true,
                    accepted: true,
                    attempts: attempt + 1,
                    rejections,
                };
                return Ok((out, rw));
            }
            Err(why) => {
                log::info!("{}: rewrite attempt {} rejected: {why}", item.id, attempt + 1);
                rejections.push(why);
            }
        }
    }
    let mut out = item.clone();
    let last = rejections.last().map(ToString::to_string).unwrap_or_default();
    out.push_record(
        StageRecord::new(Stage::DistractorRewrite, Decision::Kept, at)
            .with("attempts", f64::from(cfg.rewrite_attempts))
            .with("rejected", last),
    );
    let rw = DistractorRewrite {
        item_id: item.id.clone(),
        old_options: item.options.clone(),
        new_options: item.options.clone(),
        answer_preserved: true,
        accepted: false,
        attempts: cfg.rewrite_attempts,
        rejections,
    };
    Ok((out, rw))
}

/// Stage III: asks the rewriter for harder distractors. Rejected rewrites
/// fall back to the original options; only gateway failures abort.
pub fn stage3_enhance_distractors(items: &Manifest, cfg: &DebiasConfig, gw: &Gateway, at: DateTime<Utc>) -> Result<RewriteOutcome, DebiasError> {
    cfg.validate()?;
    let results = par::try_map(cfg.exec, &items.items, |item| rewrite_one(item, cfg, gw, at))?;
    let (kept, mut rewrites): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    rewrites.sort_by(|a: &DistractorRewrite, b| a.item_id.cmp(&b.item_id));
    Ok(RewriteOutcome {
        rewritten: items.with_items(kept),
        rewrites,
    })
}
