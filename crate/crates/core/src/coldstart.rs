//! Cold-start SFT data: sample See-Think-Answer completions, keep the ones
//! that are correct and well formed, then keep those whose `<see>` section
//! alone lets a text-only verifier answer the question.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{write_atomic, Manifest, QAItem};
use crate::evalkit::{build_messages, render_prompt, PromptMode};
use crate::gateway::{EndpointConfig, EndpointKind, Gateway, GatewayError, SamplingParams};
use crate::media::{sample_frames, AssetResolver, MediaError};
use crate::par::{self, Execution};
use crate::rewards::{accuracy_reward, visual_knowledge_reward, RewardError, StaParser, StaResponse, StaTemplate, VerifierConfig};

#[derive(Debug, thiserror::Error)]
pub enum ColdStartError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("item {item_id}: {source}")]
    Media {
        item_id: String,
        #[source]
        source: MediaError,
    },
    #[error("item {item_id}: {source}")]
    Gateway {
        item_id: String,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Verifier(#[from] RewardError),
    #[error("record {0} does not re-parse to the same sections")]
    RoundTrip(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartConfig {
    pub generator: EndpointConfig,
    /// Completions per item.
    #[serde(default = "one")]
    pub k: u32,
    #[serde(default = "default_frames")]
    pub n_frames: usize,
    #[serde(default = "default_budget")]
    pub resolution_budget: String,
    #[serde(default)]
    pub template: StaTemplate,
    #[serde(skip)]
    pub exec: Execution,
}

fn one() -> u32 {
    1
}

fn default_frames() -> usize {
    32
}

fn default_budget() -> String {
    "256x28x28".into()
}

impl ColdStartConfig {
    /// Generation at temperature 1.0 so repeated samples differ.
    pub fn new(generator: EndpointConfig) -> Self {
        ColdStartConfig {
            generator: generator.with_sampling(SamplingParams::default()),
            k: 1,
            n_frames: default_frames(),
            resolution_budget: default_budget(),
            template: StaTemplate::default(),
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ColdStartError> {
        if self.generator.kind != EndpointKind::ChatVision {
            return Err(ColdStartError::InvalidConfig(format!("generator {} must be chat_vision", self.generator.model)));
        }
        if self.k < 1 {
            return Err(ColdStartError::InvalidConfig("k must be >= 1".into()));
        }
        if self.n_frames < 1 {
            return Err(ColdStartError::InvalidConfig("n_frames must be >= 1".into()));
        }
        self.generator
            .validate()
            .map_err(|e| ColdStartError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartCandidate {
    pub item_id: String,
    pub sample_index: u32,
    pub raw: String,
    pub parsed: StaResponse,
    pub correct: bool,
    pub well_formed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColdStartRecord {
    pub item_id: String,
    pub see: String,
    pub think: String,
    pub answer: String,
    pub verifier_confirmed: bool,
}

impl ColdStartRecord {
    pub fn response(&self) -> StaResponse {
        StaResponse::from_sections(&self.see, &self.think, &self.answer)
    }
}

/// `k` graded candidates per item, ordered by item id then sample index.
pub fn generate_candidates(
    manifest: &Manifest,
    cfg: &ColdStartConfig,
    assets: &dyn AssetResolver,
    gw: &Gateway,
) -> Result<Vec<ColdStartCandidate>, ColdStartError> {
    cfg.validate()?;
    let parser = StaParser::new(cfg.template.clone()).map_err(|e| ColdStartError::InvalidConfig(e.to_string()))?;
    let jobs: Vec<(&QAItem, u32)> = manifest.items.iter().flat_map(|i| (0..cfg.k).map(move |s| (i, s))).collect();
    let mut out = par::try_map(cfg.exec, &jobs, |&(item, s)| {
        let media = |source| ColdStartError::Media {
            item_id: item.id.clone(),
            source,
        };
        let asset = assets.resolve(&item.video).map_err(media)?;
        let frames = sample_frames(&asset, cfg.n_frames, &cfg.resolution_budget).map_err(media)?;
        let messages = build_messages(PromptMode::Sta, item, frames.attach(&item.video));
        let reply = gw.chat_sample(&cfg.generator, &messages, s).map_err(|source| ColdStartError::Gateway {
            item_id: item.id.clone(),
            source,
        })?;
        let parsed = parser.parse(&reply.text);
        Ok::<_, ColdStartError>(ColdStartCandidate {
            item_id: item.id.clone(),
            sample_index: s,
            correct: accuracy_reward(&parsed, item.answer_index, &item.options) == 1,
            well_formed: parsed.well_formed,
            raw: reply.text,
            parsed,
        })
    })?;
    out.sort_by(|a, b| (&a.item_id, a.sample_index).cmp(&(&b.item_id, b.sample_index)));
    Ok(out)
}

pub fn filter_correct_and_formatted(cands: &[ColdStartCandidate]) -> Vec<ColdStartCandidate> {
    cands.iter().filter(|c| c.correct && c.well_formed).cloned().collect()
}

/// Keeps candidates whose description alone lets the verifier answer.
pub fn filter_description_sufficient(
    cands: &[ColdStartCandidate],
    manifest: &Manifest,
    vcfg: &VerifierConfig,
    gw: &Gateway,
    exec: Execution,
) -> Result<Vec<ColdStartRecord>, ColdStartError> {
    let index = manifest.index();
    let items = cands
        .iter()
        .map(|c| index.get(c.item_id.as_str()).copied().ok_or_else(|| ColdStartError::UnknownItem(c.item_id.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<_> = cands.iter().zip(items).collect();
    let verdicts = par::try_map(exec, &pairs, |(c, item)| visual_knowledge_reward(&c.parsed, item, vcfg, gw))?;
    Ok(pairs
        .iter()
        .zip(verdicts)
        .filter(|(_, v)| *v == 1)
        .map(|((c, _), _)| ColdStartRecord {
            item_id: c.item_id.clone(),
            see: c.parsed.see.clone(),
            think: c.parsed.think.clone(),
            answer: c.parsed.answer.clone(),
            verifier_confirmed: true,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColdStartReport {
    pub generated: usize,
    pub correct_and_formatted: usize,
    pub confirmed: usize,
}

/// Generation followed by both filters.
pub fn build(
    manifest: &Manifest,
    cfg: &ColdStartConfig,
    vcfg: &VerifierConfig,
    assets: &dyn AssetResolver,
    gw: &Gateway,
) -> Result<(Vec<ColdStartRecord>, ColdStartReport), ColdStartError> {
    let cands = generate_candidates(manifest, cfg, assets, gw)?;
    let passed = filter_correct_and_formatted(&cands);
    let records = filter_description_sufficient(&passed, manifest, vcfg, gw, cfg.exec)?;
    let report = ColdStartReport {
        generated: cands.len(),
        correct_and_formatted: passed.len(),
        confirmed: records.len(),
    };
    Ok((records, report))
}

pub const SFT_FORMAT: &str = "vknow-sft/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftLine {
    pub item_id: String,
    pub video: String,
    pub prompt: String,
    pub target: String,
}

/// Writes a header line then one SFT line per record. Every target is parsed
/// back before anything touches disk.
pub fn emit_dataset(records: &[ColdStartRecord], manifest: &Manifest, path: &Path) -> Result<(), ColdStartError> {
    let index = manifest.index();
    let mut buf = Vec::new();
    writeln!(buf, "{}", serde_json::json!({"format": SFT_FORMAT, "records": records.len()}))?;
    for r in records {
        let item = index.get(r.item_id.as_str()).ok_or_else(|| ColdStartError::UnknownItem(r.item_id.clone()))?;
        let target = r.response().raw;
        let back = crate::rewards::parse_sta(&target);
        if !back.well_formed || back.see != r.see || back.think != r.think || back.answer != r.answer {
            return Err(ColdStartError::RoundTrip(r.item_id.clone()));
        }
        let line = SftLine {
            item_id: r.item_id.clone(),
            video: item.video.uri.clone(),
            prompt: render_prompt(PromptMode::Sta, item),
            target,
        };
        serde_json::to_writer(&mut buf, &line).map_err(std::io::Error::other)?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TaskDimension, VideoRef};
    use crate::gateway::mock::ScriptedTransport;
    use crate::gateway::Response;
    use crate::media::{AssetCatalog, VideoAsset};
    use crate::rewards::parse_sta;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn catalog() -> AssetCatalog {
        AssetCatalog::new([VideoAsset {
            video: VideoRef::new("v.mp4"),
            duration: 8.0,
            fps: 30.0,
            width: 320,
            height: 240,
        }])
    }

    fn manifest(n: usize) -> Manifest {
        Manifest::new(
            (0..n)
                .map(|k| QAItem::new(format!("q{k}"), VideoRef::new("v.mp4"), TaskDimension::MS, format!("question {k}?"), vec!["red".into(), "blue".into()], k % 2))
                .collect(),
        )
    }

    fn cfg() -> ColdStartConfig {
        let mut c = ColdStartConfig::new(EndpointConfig::new("http://mock/v1", "gen", EndpointKind::ChatVision));
        c.n_frames = 4;
        c
    }

    fn cand(id: &str, correct: bool, well_formed: bool) -> ColdStartCandidate {
        ColdStartCandidate {
            item_id: id.into(),
            sample_index: 0,
            raw: String::new(),
            parsed: StaResponse::from_sections("s", "t", "A"),
            correct,
            well_formed,
        }
    }

    #[test]
    fn gold_replies_all_pass_first_filter() {
        let m = manifest(4);
        let gold: Vec<usize> = m.items.iter().map(|i| i.answer_index).collect();
        let t = Arc::new(ScriptedTransport::new(move |_, r, _| {
            let k: usize = r.text().split("question ").nth(1).unwrap()[..1].parse().unwrap();
            let letter = ["A", "B"][gold[k]];
            Ok(Response::Text(format!("<see>frames</see><think>so</think><answer>{letter}</answer>")))
        }));
        let gw = Gateway::uncached(t);
        let cands = generate_candidates(&m, &cfg(), &catalog(), &gw).unwrap();
        assert_eq!(cands.len(), 4);
        assert!(cands.iter().all(|c| c.correct && c.well_formed));
    }

    #[test]
    fn prose_is_not_well_formed() {
        let t = Arc::new(ScriptedTransport::new(|_, _, _| Ok(Response::Text("It is red.".into()))));
        let gw = Gateway::uncached(t);
        let cands = generate_candidates(&manifest(2), &cfg(), &catalog(), &gw).unwrap();
        assert!(cands.iter().all(|c| !c.well_formed));
        assert!(filter_correct_and_formatted(&cands).is_empty());
    }

    #[test]
    fn k_samples_use_distinct_indices() {
        let t = Arc::new(ScriptedTransport::new(|_, _, _| Ok(Response::Text("x".into()))));
        let gw = Gateway::uncached(t.clone());
        let mut c = cfg();
        c.k = 3;
        let cands = generate_candidates(&manifest(2), &c, &catalog(), &gw).unwrap();
        let keys: Vec<_> = cands.iter().map(|c| (c.item_id.as_str(), c.sample_index)).collect();
        assert_eq!(keys, [("q0", 0), ("q0", 1), ("q0", 2), ("q1", 0), ("q1", 1), ("q1", 2)]);
        assert_eq!(t.calls(), 6);
    }

    #[test]
    fn conjunction() {
        let cands = [cand("a", true, false), cand("b", false, true), cand("c", true, true), cand("d", false, false)];
        let kept = filter_correct_and_formatted(&cands);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].item_id, "c");
    }

    #[test]
    fn verifier_decides_second_filter() {
        let m = manifest(2);
        let t = Arc::new(ScriptedTransport::new(|_, _, _| Ok(Response::Text("A".into()))));
        let gw = Gateway::uncached(t);
        let cands = [cand("q0", true, true), cand("q1", true, true)];
        let v = VerifierConfig::with_endpoint(EndpointConfig::new("http://mock/v1", "ver", EndpointKind::Chat));
        let kept = filter_description_sufficient(&cands, &m, &v, &gw, Execution::Sequential).unwrap();
        // q0's gold is A, q1's gold is B.
        assert_eq!(kept.iter().map(|r| r.item_id.as_str()).collect::<Vec<_>>(), ["q0"]);
        assert!(kept[0].verifier_confirmed);
    }

    #[test]
    fn empty_dataset_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sft.jsonl");
        emit_dataset(&[], &manifest(1), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains(SFT_FORMAT));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn emitted_targets_reparse(sections in proptest::collection::vec(("[a-z][a-z ]{0,20}", "[a-z][a-z ]{0,20}", "[AB]"), 100)) {
            let m = manifest(100);
            let records: Vec<ColdStartRecord> = sections
                .iter()
                .enumerate()
                .map(|(k, (s, t, a))| ColdStartRecord {
                    item_id: format!("q{k}"),
                    see: s.trim().to_string(),
                    think: t.trim().to_string(),
                    answer: a.clone(),
                    verifier_confirmed: true,
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("sft.jsonl");
            emit_dataset(&records, &m, &p).unwrap();
            let text = std::fs::read_to_string(&p).unwrap();
            let lines: Vec<&str> = text.lines().skip(1).collect();
            prop_assert_eq!(lines.len(), 100);
            for l in lines {
                let line: SftLine = serde_json::from_str(l).unwrap();
                prop_assert!(parse_sta(&line.target).well_formed);
            }
        }
    }
}
