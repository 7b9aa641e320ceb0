//! Question filtering before human review.
//!
//! Stage I drops items whose gold answer is audible in the soundtrack, stage
//! II drops items a text-only panel answers without the video, stage III asks
//! a rewriter for harder distractors. [`run_pipeline`] chains them, shuffles
//! options and builds the review queue.

mod pipeline;
mod rewrite;
mod stages;

use serde::{Deserialize, Serialize};

use crate::corpus::{Decision, Stage};
use crate::gateway::{EndpointConfig, GatewayError};
use crate::media::MediaError;
use crate::par::Execution;

pub use pipeline::{run_pipeline, PipelineError, PipelineOutput, PipelineReport, StageCount};
pub use rewrite::{parse_rewrite, stage3_enhance_distractors, DistractorRewrite, RewriteOutcome, RewriteRejection};
pub use stages::{
    blind_answer_trials, blind_prompt, stage1_audio_filter, stage1_discards, stage2_decision, stage2_language_filter, StageOutcome,
    TranscriptMap,
};

#[derive(Debug, thiserror::Error)]
pub enum DebiasError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no transcript for video {0:?}")]
    MissingTranscript(String),
    #[error("item {item_id}: {source}")]
    Gateway {
        item_id: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Media(#[from] MediaError),
}

/// Cosine of the angle between `a` and `b`, computed on L2-normalized copies.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, DebiasError> {
    if a.len() != b.len() {
        return Err(DebiasError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(DebiasError::ZeroVector);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| (x / na) * (y / nb)).sum();
    Ok(dot.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranscriptMode {
    /// One embedding for the whole transcript.
    #[default]
    Whole,
    /// One embedding per segment; the maximum similarity decides.
    PerSegment,
}

pub const DEFAULT_BLIND_PROMPT: &str = "You cannot see the video this question refers to. Even if the question seems to require visual information, you must still pick the single most likely option using only the text below.\n\nQuestion: {question}\nOptions:\n{options}\n\nAnswer with the letter of one option.";

pub const DEFAULT_REWRITE_PROMPT: &str = "You are improving a multiple-choice question about a video.\n\nQuestion: {question}\nOptions:\n{options}\nCorrect option: {answer}\n\nRewrite every incorrect option so it is semantically plausible yet subtly incorrect. Keep the correct option exactly as written and in the same position. Return all {n} options, in order, as a JSON array of strings and nothing else.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasConfig {
    pub sim_threshold: f64,
    pub n_trials: u32,
    pub trial_pass_count: u32,
    pub model_quorum: usize,
    pub panel_size: usize,
    pub panel: Vec<EndpointConfig>,
    pub embedder: EndpointConfig,
    pub rewriter: EndpointConfig,
    pub transcriber: EndpointConfig,
    pub transcript_mode: TranscriptMode,
    /// Placeholders `{question}`, `{options}`.
    pub blind_prompt: String,
    /// Placeholders `{question}`, `{options}`, `{answer}`, `{n}`.
    pub rewrite_prompt: String,
    pub rewrite_attempts: u32,
    pub skip_world_centric: bool,
    #[serde(skip)]
    pub exec: Execution,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            sim_threshold: 0.3,
            n_trials: 10,
            trial_pass_count: 6,
            model_quorum: 2,
            panel_size: 3,
            panel: EndpointConfig::blind_panel(),
            embedder: EndpointConfig::embedder(),
            rewriter: EndpointConfig::rewriter(),
            transcriber: EndpointConfig::transcriber(),
            transcript_mode: TranscriptMode::Whole,
            blind_prompt: DEFAULT_BLIND_PROMPT.into(),
            rewrite_prompt: DEFAULT_REWRITE_PROMPT.into(),
            rewrite_attempts: 3,
            skip_world_centric: false,
            exec: Execution::default(),
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<(), DebiasError> {
        let bad = |m: String| Err(DebiasError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.sim_threshold) {
            return bad(format!("sim_threshold {} outside [0, 1]", self.sim_threshold));
        }
        if self.trial_pass_count < 1 || self.trial_pass_count > self.n_trials {
            return bad(format!("trial_pass_count {} outside 1..={}", self.trial_pass_count, self.n_trials));
        }
        if self.panel.len() != self.panel_size {
            return bad(format!("panel has {} models, panel_size is {}", self.panel.len(), self.panel_size));
        }
        if self.model_quorum < 1 || self.model_quorum > self.panel.len() {
            return bad(format!("model_quorum {} outside 1..={}", self.model_quorum, self.panel.len()));
        }
        if self.rewrite_attempts < 1 {
            return bad("rewrite_attempts must be >= 1".into());
        }
        for ep in self.panel.iter().chain([&self.embedder, &self.rewriter, &self.transcriber]) {
            ep.validate().map_err(|e| DebiasError::InvalidConfig(format!("{}: {e}", ep.model)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Evidence {
    Similarity {
        similarity: f64,
    },
    Votes {
        per_model_correct_counts: Vec<u32>,
        flagged_models: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub item_id: String,
    pub stage: Stage,
    pub decision: Decision,
    pub evidence: Evidence,
}
