use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{stage1_audio_filter, stage2_language_filter, stage3_enhance_distractors, DebiasConfig, DebiasError, DistractorRewrite, FilterVerdict, TranscriptMap};
use crate::corpus::{shuffle_options, shuffle_permutation, Decision, Manifest, Stage, StageRecord, SHUFFLE_PRNG};
use crate::gateway::Gateway;
use crate::media::transcribe;
use crate::par;
use crate::review::{build_queue, ReviewTask};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub stage: Stage,
    pub input: usize,
    pub kept: usize,
    pub discarded: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub seed: u64,
    pub counts: Vec<StageCount>,
    pub stage1: Vec<FilterVerdict>,
    pub stage2: Vec<FilterVerdict>,
    pub rewrites: Vec<DistractorRewrite>,
}

impl PipelineReport {
    /// Item counts entering the pipeline and leaving each stage.
    pub fn flow(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.counts.first().map(|c| c.input).into_iter().collect();
        f.extend(self.counts.iter().map(|c| c.kept));
        f
    }

    fn count(&mut self, stage: Stage, input: usize, kept: usize) {
        self.counts.push(StageCount {
            stage,
            input,
            kept,
            discarded: input - kept,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub manifest: Manifest,
    pub report: PipelineReport,
    pub queue: Vec<ReviewTask>,
}

/// A stage failure, with the report of every stage that finished.
#[derive(Debug, thiserror::Error)]
#[error("pipeline aborted: {source}")]
pub struct PipelineError {
    #[source]
    pub source: DebiasError,
    pub report: Box<PipelineReport>,
}

fn transcripts(manifest: &Manifest, cfg: &DebiasConfig, gw: &Gateway) -> Result<TranscriptMap, DebiasError> {
    let videos: BTreeMap<&str, &crate::corpus::VideoRef> = manifest.items.iter().map(|i| (i.video.identity(), &i.video)).collect();
    let list: Vec<_> = videos.into_iter().collect();
    let done = par::try_map(cfg.exec, &list, |(id, v)| transcribe(v, &cfg.transcriber, gw).map(|t| (id.to_string(), t)))?;
    Ok(done.into_iter().collect())
}

/// Stage I, II, III, then option shuffling; returns the manifest that goes
/// to human review together with its queue.
pub fn run_pipeline(manifest: &Manifest, cfg: &DebiasConfig, gw: &Gateway, seed: u64, at: DateTime<Utc>) -> Result<PipelineOutput, PipelineError> {
    let mut report = PipelineReport {
        seed,
        ..Default::default()
    };
    macro_rules! attempt {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(e) => {
                    return Err(PipelineError {
                        source: e.into(),
                        report: Box::new(report),
                    })
                }
            }
        };
    }
    attempt!(cfg.validate());
    attempt!(manifest.validate().map_err(|e| DebiasError::InvalidConfig(format!("input manifest: {e}"))));

    let mut ingested = manifest.clone();
    for item in &mut ingested.items {
        item.push_record(StageRecord::new(Stage::Ingest, Decision::Kept, at));
    }

    let ts = attempt!(transcripts(&ingested, cfg, gw));
    let s1 = attempt!(stage1_audio_filter(&ingested, &ts, cfg, gw, at));
    report.count(Stage::AudioFilter, ingested.len(), s1.kept.len());
    report.stage1 = s1.verdicts;

    let s2 = attempt!(stage2_language_filter(&s1.kept, cfg, gw, at));
    report.count(Stage::LanguageFilter, s1.kept.len(), s2.kept.len());
    report.stage2 = s2.verdicts;

    let s3 = attempt!(stage3_enhance_distractors(&s2.kept, cfg, gw, at));
    report.count(Stage::DistractorRewrite, s2.kept.len(), s3.rewritten.len());
    report.rewrites = s3.rewrites;

    let shuffled = s3
        .rewritten
        .items
        .iter()
        .map(|item| {
            let perm = shuffle_permutation(item.options.len(), seed, &item.id);
            let identity = perm.iter().enumerate().all(|(i, &p)| i == p);
            let mut out = shuffle_options(item, seed);
            let perm_text = perm.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
            let decision = if identity { Decision::Kept } else { Decision::Modified };
            out.push_record(StageRecord::new(Stage::Shuffle, decision, at).with("permutation", perm_text));
            out
        })
        .collect();
    let mut out = s3.rewritten.with_items(shuffled);
    out.seed = Some(seed);
    out.prng = Some(SHUFFLE_PRNG.to_string());
    report.count(Stage::Shuffle, out.len(), out.len());

    let queue = build_queue(&out);
    Ok(PipelineOutput {
        manifest: out,
        report,
        queue,
    })
}
