use std::collections::BTreeMap;

use chrono::{DateTime, Utc};

use super::{cosine_similarity, DebiasConfig, DebiasError, Evidence, FilterVerdict, TranscriptMode};
use crate::corpus::{Decision, Manifest, QAItem, Stage, StageRecord, TaskGroup};
use crate::gateway::{EndpointConfig, EndpointKind, Gateway, GatewayError, Message};
use crate::media::Transcript;
use crate::par;
use crate::rewards::{extract_choice, format_options};

/// Transcripts keyed by video identity.
pub type TranscriptMap = BTreeMap<String, Transcript>;

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub kept: Manifest,
    /// One per input item, sorted by item id.
    pub verdicts: Vec<FilterVerdict>,
}

impl StageOutcome {
    pub fn discarded(&self) -> usize {
        self.verdicts.iter().filter(|v| v.decision == Decision::Discarded).count()
    }
}

fn gateway_err(item: &QAItem) -> impl FnOnce(GatewayError) -> DebiasError + '_ {
    move |source| DebiasError::Gateway {
        item_id: item.id.clone(),
        source,
    }
}

/// The stage I rule: strictly above the threshold is discarded.
pub fn stage1_discards(similarity: f64, threshold: f64) -> bool {
    similarity > threshold
}

fn audio_similarity(item: &QAItem, transcript: &Transcript, cfg: &DebiasConfig, gw: &Gateway) -> Result<f64, DebiasError> {
    if transcript.is_silent() {
        return Ok(0.0);
    }
    let embed = |text: &str| gw.embed(&cfg.embedder, text).map_err(gateway_err(item));
    let answer = embed(item.gold())?;
    match cfg.transcript_mode {
        TranscriptMode::Whole => cosine_similarity(&embed(&transcript.full_text)?, &answer),
        TranscriptMode::PerSegment => {
            let mut best = 0.0f64;
            for seg in transcript.segments.iter().filter(|s| !s.text.trim().is_empty()) {
                best = best.max(cosine_similarity(&embed(&seg.text)?, &answer)?);
            }
            Ok(best)
        }
    }
}

fn partition(
    items: &Manifest,
    decisions: Vec<(Decision, Evidence, StageRecord)>,
) -> StageOutcome {
    let mut kept = Vec::new();
    let mut verdicts = Vec::with_capacity(items.len());
    for (item, (decision, evidence, record)) in items.items.iter().zip(decisions) {
        verdicts.push(FilterVerdict {
            item_id: item.id.clone(),
            stage: record.stage,
            decision,
            evidence,
        });
        if decision != Decision::Discarded {
            let mut it = item.clone();
            it.push_record(record);
            kept.push(it);
        }
    }
    verdicts.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    StageOutcome {
        kept: items.with_items(kept),
        verdicts,
    }
}

/// Stage I: drop items whose gold answer is semantically present in the
/// video's transcript.
pub fn stage1_audio_filter(
    items: &Manifest,
    transcripts: &TranscriptMap,
    cfg: &DebiasConfig,
    gw: &Gateway,
    at: DateTime<Utc>,
) -> Result<StageOutcome, DebiasError> {
    cfg.validate()?;
    let decisions = par::try_map(cfg.exec, &items.items, |item| {
        let transcript = transcripts
            .get(item.video.identity())
            .ok_or_else(|| DebiasError::MissingTranscript(item.video.identity().to_string()))?;
        let similarity = audio_similarity(item, transcript, cfg, gw)?;
        let decision = if stage1_discards(similarity, cfg.sim_threshold) {
            Decision::Discarded
        } else {
            Decision::Kept
        };
        let record = StageRecord::new(Stage::AudioFilter, decision, at)
            .with("similarity", similarity)
            .with("threshold", cfg.sim_threshold);
        Ok::<_, DebiasError>((decision, Evidence::Similarity { similarity }, record))
    })?;
    Ok(partition(items, decisions))
}

pub fn blind_prompt(template: &str, item: &QAItem) -> String {
    template
        .replace("{question}", &item.question)
        .replace("{options}", &format_options(&item.options))
}

/// Number of `n` text-only answers that pick the gold option. Replies that
/// name no option count as wrong.
pub fn blind_answer_trials(item: &QAItem, endpoint: &EndpointConfig, n: u32, template: &str, gw: &Gateway) -> Result<u32, GatewayError> {
    if endpoint.kind != EndpointKind::Chat {
        return Err(GatewayError::InvalidRequest(format!(
            "blind trials need a text-only chat endpoint, {} is {:?}",
            endpoint.model, endpoint.kind
        )));
    }
    let replies = gw.sample_n(endpoint, &[Message::user(blind_prompt(template, item))], n)?;
    let mut correct = 0;
    for (i, reply) in replies.iter().enumerate() {
        match extract_choice(reply, &item.options) {
            Some(k) if k == item.answer_index => correct += 1,
            Some(_) => {}
            None => log::debug!("{}: {} trial {i} unparseable: {:?}", item.id, endpoint.model, reply),
        }
    }
    Ok(correct)
}

/// `(flagged_models, discard)`: a model flags the item when it was right at
/// least `pass` times; the item goes when `quorum` models flag it.
pub fn stage2_decision(counts: &[u32], pass: u32, quorum: usize) -> (usize, bool) {
    let flagged = counts.iter().filter(|&&c| c >= pass).count();
    (flagged, flagged >= quorum)
}

/// Stage II: drop items the blind panel answers from text alone.
pub fn stage2_language_filter(items: &Manifest, cfg: &DebiasConfig, gw: &Gateway, at: DateTime<Utc>) -> Result<StageOutcome, DebiasError> {
    cfg.validate()?;
    let decisions = par::try_map(cfg.exec, &items.items, |item| {
        if cfg.skip_world_centric && item.group == TaskGroup::WorldCentric {
            let record = StageRecord::new(Stage::LanguageFilter, Decision::Kept, at).with("skipped", "world_centric");
            let evidence = Evidence::Votes {
                per_model_correct_counts: Vec::new(),
                flagged_models: 0,
            };
            return Ok::<_, DebiasError>((Decision::Kept, evidence, record));
        }
        let mut counts = Vec::with_capacity(cfg.panel.len());
        for ep in &cfg.panel {
            counts.push(blind_answer_trials(item, ep, cfg.n_trials, &cfg.blind_prompt, gw).map_err(gateway_err(item))?);
        }
        let (flagged, discard) = stage2_decision(&counts, cfg.trial_pass_count, cfg.model_quorum);
        let decision = if discard { Decision::Discarded } else { Decision::Kept };
        let mut record = StageRecord::new(Stage::LanguageFilter, decision, at).with("flagged_models", flagged as f64);
        for (ep, c) in cfg.panel.iter().zip(&counts) {
            record = record.with(&format!("correct:{}", ep.model), f64::from(*c));
        }
        let evidence = Evidence::Votes {
            per_model_correct_counts: counts,
            flagged_models: flagged,
        };
        Ok((decision, evidence, record))
    })?;
    Ok(partition(items, decisions))
}
