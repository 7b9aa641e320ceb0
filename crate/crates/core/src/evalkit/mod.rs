//! Multiple-choice evaluation against chat-vision endpoints.
//!
//! Each item gets `n_frames` uniformly sampled frames and one prompt; the
//! reply is mapped to an option with [`extract_choice`]. Replies that name no
//! option are wrong, never skipped.

mod aggregate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Manifest, QAItem};
use crate::gateway::{EndpointConfig, EndpointKind, FrameAttachment, Gateway, GatewayError, Message, SamplingParams};
use crate::media::{sample_frames, AssetResolver, MediaError};
use crate::par::{self, Execution};
use crate::rewards::{extract_choice, format_options, StaParser, StaTemplate};

pub use aggregate::{aggregate, random_baseline, round1, simulate_random_guesser, AggregateReport, TABLE_COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
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
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Vanilla,
    Sta,
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(PromptMode::Vanilla),
            "sta" => Ok(PromptMode::Sta),
            other => Err(format!("unknown prompt mode {other:?} (vanilla|sta)")),
        }
    }
}

pub const VANILLA_PROMPT: &str = "Watch the video frames and answer the multiple-choice question.\n\nQuestion: {question}\nOptions:\n{options}\n\nAnswer with the option's letter from the given choices directly.";

pub const STA_PROMPT: &str = "Watch the video frames and answer the multiple-choice question.\n\nQuestion: {question}\nOptions:\n{options}\n\nFirst describe what you see in the video inside <see></see> tags. Then reason about the question inside <think></think> tags. Finally give the letter of the correct option inside <answer></answer> tags.";

pub const SWEEP_FRAMES: [usize; 4] = [4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub model: EndpointConfig,
    #[serde(default = "default_frames")]
    pub n_frames: usize,
    #[serde(default)]
    pub prompt_mode: PromptMode,
    #[serde(default = "SamplingParams::evaluation")]
    pub sampling: SamplingParams,
    #[serde(default = "default_budget")]
    pub resolution_budget: String,
    #[serde(default)]
    pub template: StaTemplate,
    #[serde(skip)]
    pub exec: Execution,
}

fn default_frames() -> usize {
    32
}

fn default_budget() -> String {
    "256x28x28".into()
}

impl EvalConfig {
    pub fn new(model: EndpointConfig) -> Self {
        EvalConfig {
            model,
            n_frames: default_frames(),
            prompt_mode: PromptMode::Vanilla,
            sampling: SamplingParams::evaluation(),
            resolution_budget: default_budget(),
            template: StaTemplate::default(),
            exec: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.n_frames < 1 {
            return Err(EvalError::InvalidConfig("n_frames must be >= 1".into()));
        }
        if self.model.kind != EndpointKind::ChatVision {
            return Err(EvalError::InvalidConfig(format!("{} must be a chat_vision endpoint", self.model.model)));
        }
        self.endpoint()
            .validate()
            .map_err(|e| EvalError::InvalidConfig(e.to_string()))
    }

    /// The endpoint as called, with the evaluation sampling applied.
    pub fn endpoint(&self) -> EndpointConfig {
        self.model.with_sampling(self.sampling.clone())
    }
}

pub fn render_prompt(mode: PromptMode, item: &QAItem) -> String {
    let template = match mode {
        PromptMode::Vanilla => VANILLA_PROMPT,
        PromptMode::Sta => STA_PROMPT,
    };
    template
        .replace("{question}", &item.question)
        .replace("{options}", &format_options(&item.options))
}

pub fn build_messages(mode: PromptMode, item: &QAItem, frames: FrameAttachment) -> Vec<Message> {
    vec![Message::user_with_frames(render_prompt(mode, item), frames)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub raw: String,
    pub predicted: Option<usize>,
    pub correct: bool,
    /// Recorded at fetch time; replay returns the recorded value.
    pub latency_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub config: EvalConfig,
    pub manifest_fingerprint: String,
    /// Sorted by item id.
    pub results: Vec<ItemResult>,
    pub aggregates: AggregateReport,
}

/// Digest over item ids, options and gold indices, in id order.
pub fn manifest_fingerprint(manifest: &Manifest) -> String {
    let mut items: Vec<&QAItem> = manifest.items.iter().collect();
    items.sort_by(|a, b| a.id.cmp(&b.id));
    let mut h = Sha256::new();
    for it in items {
        let line = serde_json::json!([it.id, it.options, it.answer_index]).to_string();
        h.update(line.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn predict(mode: PromptMode, parser: &StaParser, reply: &str, item: &QAItem) -> Option<usize> {
    match mode {
        PromptMode::Vanilla => extract_choice(reply, &item.options),
        PromptMode::Sta => extract_choice(&parser.parse(reply).answer, &item.options),
    }
}

pub fn run_eval(manifest: &Manifest, cfg: &EvalConfig, assets: &dyn AssetResolver, gw: &Gateway) -> Result<EvalRun, EvalError> {
    cfg.validate()?;
    let endpoint = cfg.endpoint();
    let parser = StaParser::new(cfg.template.clone()).map_err(|e| EvalError::InvalidConfig(e.to_string()))?;
    let mut results = par::try_map(cfg.exec, &manifest.items, |item| {
        let media_err = |source| EvalError::Media {
            item_id: item.id.clone(),
            source,
        };
        let asset = assets.resolve(&item.video).map_err(media_err)?;
        let frames = sample_frames(&asset, cfg.n_frames, &cfg.resolution_budget).map_err(media_err)?;
        let messages = build_messages(cfg.prompt_mode, item, frames.attach(&item.video));
        let reply = gw.chat_sample(&endpoint, &messages, 0).map_err(|source| EvalError::Gateway {
            item_id: item.id.clone(),
            source,
        })?;
        let predicted = predict(cfg.prompt_mode, &parser, &reply.text, item);
        Ok(ItemResult {
            item_id: item.id.clone(),
            raw: reply.text,
            predicted,
            correct: predicted == Some(item.answer_index),
            latency_secs: reply.latency_secs,
        })
    })?;
    results.sort_by(|a, b| a.item_id.cmp(&b.item_id));
    let aggregates = aggregate(&results, manifest)?;
    Ok(EvalRun {
        config: cfg.clone(),
        manifest_fingerprint: manifest_fingerprint(manifest),
        results,
        aggregates,
    })
}

/// One run per frame count, everything else fixed.
pub fn frames_sweep(
    manifest: &Manifest,
    base: &EvalConfig,
    frames: &[usize],
    assets: &dyn AssetResolver,
    gw: &Gateway,
) -> Result<BTreeMap<usize, EvalRun>, EvalError> {
    if frames.is_empty() {
        return Err(EvalError::InvalidConfig("frame sweep needs at least one frame count".into()));
    }
    frames
        .iter()
        .map(|&n| {
            let cfg = EvalConfig {
                n_frames: n,
                ..base.clone()
            };
            run_eval(manifest, &cfg, assets, gw).map(|r| (n, r))
        })
        .collect()
}

/// Markdown table of per-task accuracy against frame count.
pub fn sweep_table(runs: &BTreeMap<usize, EvalRun>) -> String {
    let mut out = format!("| Frames | {} |\n", TABLE_COLUMNS.join(" | "));
    out.push_str(&format!("|---|{}\n", "---|".repeat(TABLE_COLUMNS.len())));
    for (n, run) in runs {
        let cells: Vec<String> = run
            .aggregates
            .table_row()
            .iter()
            .map(|c| c.map_or("-".to_string(), |v| format!("{:.1}", round1(v))))
            .collect();
        out.push_str(&format!("| {n} | {} |\n", cells.join(" | ")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TaskDimension, VideoRef};
    use crate::gateway::mock::ScriptedTransport;
    use crate::gateway::{Request, Response};
    use crate::media::{AssetCatalog, VideoAsset};
    use std::sync::Arc;

    fn catalog() -> AssetCatalog {
        AssetCatalog::new([VideoAsset {
            video: VideoRef::new("v.mp4"),
            duration: 10.0,
            fps: 25.0,
            width: 640,
            height: 360,
        }])
    }

    fn cfg() -> EvalConfig {
        let mut c = EvalConfig::new(EndpointConfig::new("http://mock/v1", "m", EndpointKind::ChatVision));
        c.n_frames = 4;
        c
    }

    fn two_items() -> Manifest {
        let mk = |id: &str, gold| QAItem::new(id, VideoRef::new("v.mp4"), TaskDimension::OA, "?", vec!["x".into(), "y".into()], gold);
        Manifest::new(vec![mk("b", 1), mk("a", 0)])
    }

    fn replying(f: impl Fn(&Request) -> String + Send + Sync + 'static) -> (Gateway, Arc<ScriptedTransport>) {
        let t = Arc::new(ScriptedTransport::new(move |_, r, _| Ok(Response::Text(f(r)))));
        (Gateway::uncached(t.clone()), t)
    }

    #[test]
    fn constant_reply_scores_half() {
        let (gw, t) = replying(|_| "A".into());
        let run = run_eval(&two_items(), &cfg(), &catalog(), &gw).unwrap();
        assert_eq!(run.results.iter().map(|r| r.item_id.as_str()).collect::<Vec<_>>(), ["a", "b"]);
        assert_eq!(run.aggregates.overall, Some(50.0));
        let frames = t.requests()[0].1.frames().unwrap().timestamps.clone();
        assert_eq!(frames, vec![1.25, 3.75, 6.25, 8.75]);
    }

    #[test]
    fn sta_mode_reads_answer_section() {
        let (gw, _) = replying(|_| "<see>s</see><think>t</think><answer>B</answer>".into());
        let mut c = cfg();
        c.prompt_mode = PromptMode::Sta;
        let run = run_eval(&two_items(), &c, &catalog(), &gw).unwrap();
        assert_eq!(run.aggregates.overall, Some(50.0));
        assert!(run.results.iter().find(|r| r.item_id == "b").unwrap().correct);
    }

    #[test]
    fn unparseable_is_wrong() {
        let (gw, _) = replying(|_| "hard to say".into());
        let run = run_eval(&two_items(), &cfg(), &catalog(), &gw).unwrap();
        assert_eq!(run.results.len(), 2);
        assert_eq!(run.aggregates.overall, Some(0.0));
    }

    #[test]
    fn evaluation_sampling_on_the_wire() {
        let (gw, t) = replying(|_| "A".into());
        run_eval(&two_items(), &cfg(), &catalog(), &gw).unwrap();
        match &t.requests()[0].1 {
            Request::Chat { sampling, .. } => {
                assert_eq!(sampling.temperature, 0.1);
                assert_eq!(sampling.top_p, 0.001);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_only_model_rejected() {
        let mut c = cfg();
        c.model.kind = EndpointKind::Chat;
        assert!(matches!(c.validate(), Err(EvalError::InvalidConfig(_))));
        c.model.kind = EndpointKind::ChatVision;
        c.n_frames = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn sweep_runs_each_frame_count() {
        let (gw, _) = replying(|r| if r.frames().unwrap().timestamps.len() >= 8 { "B".into() } else { "A".into() });
        let runs = frames_sweep(&two_items(), &cfg(), &[4, 8], &catalog(), &gw).unwrap();
        assert_eq!(runs.len(), 2);
        assert!(runs[&4].results.iter().find(|r| r.item_id == "a").unwrap().correct);
        assert!(runs[&8].results.iter().find(|r| r.item_id == "b").unwrap().correct);
        let table = sweep_table(&runs);
        assert!(table.lines().nth(2).unwrap().starts_with("| 4 | 50.0 | - | 50.0 |"));
        assert!(frames_sweep(&two_items(), &cfg(), &[], &catalog(), &gw).is_err());
    }

    #[test]
    fn fingerprint_ignores_order() {
        let m = two_items();
        let mut r = m.clone();
        r.items.reverse();
        assert_eq!(manifest_fingerprint(&m), manifest_fingerprint(&r));
    }
}
