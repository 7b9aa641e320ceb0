//! A scripted model world for whole-pipeline tests. Each item carries a script
//! that decides what every mocked endpoint says about it.
#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};

use vknow_core::analytics::{render_report, ReportFormat};
use vknow_core::corpus::{render_manifest, Manifest, QAItem, TaskDimension, VideoRef};
use vknow_core::debias::{run_pipeline, DebiasConfig, PipelineReport};
use vknow_core::evalkit::{run_eval, EvalConfig};
use vknow_core::gateway::mock::{PanicTransport, ScriptedTransport};
use vknow_core::gateway::{CacheMode, EndpointConfig, EndpointKind, Gateway, Request, Response, Transport};
use vknow_core::media::{AssetCatalog, Segment, VideoAsset};
use vknow_core::review::{apply_decisions, ReviewAction, ReviewDecision};

#[derive(Debug, Clone, Copy)]
pub struct ItemScript {
    /// Cosine similarity between the transcript and the gold answer.
    pub sim: f64,
    /// How many panel models answer correctly without the video.
    pub blind_correct: usize,
    /// Whether the rewriter keeps the gold option intact.
    pub rewrite_ok: bool,
    /// Whether the evaluated model picks the gold option.
    pub eval_correct: bool,
}

impl Default for ItemScript {
    fn default() -> Self {
        ItemScript {
            sim: 0.1,
            blind_correct: 0,
            rewrite_ok: true,
            eval_correct: true,
        }
    }
}

pub fn at() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 12, 0, 0).unwrap()
}

pub fn marker(k: usize) -> String {
    format!("clip q{k:02}?")
}

pub fn item_id(k: usize) -> String {
    format!("q{k:02}")
}

fn gold_text(k: usize) -> String {
    format!("gold answer {k}")
}

pub struct World {
    pub scripts: Vec<ItemScript>,
    pub panel: Vec<String>,
}

impl World {
    pub fn new(scripts: Vec<ItemScript>) -> Self {
        World {
            scripts,
            panel: DebiasConfig::default().panel.iter().map(|e| e.model.clone()).collect(),
        }
    }

    pub fn manifest(&self) -> Manifest {
        Manifest::new(
            (0..self.scripts.len())
                .map(|k| {
                    let n = if k % 2 == 0 { 4 } else { 2 };
                    let mut options: Vec<String> = (1..n).map(|j| format!("plain distractor {k}-{j}")).collect();
                    let gold = k % n;
                    options.insert(gold, gold_text(k));
                    QAItem::new(item_id(k), VideoRef::new(format!("clips/q{k:02}.mp4")), TaskDimension::ALL[k % 8], format!("What happens in {}", marker(k)), options, gold)
                })
                .collect(),
        )
    }

    pub fn assets(&self) -> AssetCatalog {
        AssetCatalog::new((0..self.scripts.len()).map(|k| VideoAsset {
            video: VideoRef::new(format!("clips/q{k:02}.mp4")),
            duration: 12.0,
            fps: 30.0,
            width: 640,
            height: 360,
        }))
    }

    fn which(&self, text: &str) -> usize {
        (0..self.scripts.len()).find(|&k| text.contains(&marker(k))).unwrap_or_else(|| panic!("no item in request: {text}"))
    }

    /// Scripted answer for one request; `None` for requests nobody expects.
    pub fn respond(&self, cfg: &EndpointConfig, req: &Request) -> Response {
        match req {
            Request::Transcribe { video } => {
                let k = (0..self.scripts.len()).find(|&k| video.uri == format!("clips/q{k:02}.mp4")).expect("known video");
                Response::Transcript(vec![Segment {
                    start: 0.0,
                    end: 2.0,
                    text: format!("sim={}", self.scripts[k].sim),
                }])
            }
            Request::Embed { input } => match input.strip_prefix("sim=") {
                Some(c) => {
                    let c: f64 = c.parse().unwrap();
                    Response::Embedding(vec![c, (1.0 - c * c).max(0.0).sqrt()])
                }
                None => Response::Embedding(vec![1.0, 0.0]),
            },
            Request::Chat { .. } => {
                let text = req.text();
                let k = self.which(&text);
                let s = self.scripts[k];
                if text.contains("You cannot see the video") {
                    let rank = self.panel.iter().position(|m| *m == cfg.model).expect("panel model");
                    let reply = if rank < s.blind_correct { gold_text(k) } else { "no idea".to_string() };
                    Response::Text(reply)
                } else if text.contains("Rewrite every incorrect option") {
                    let n = if k % 2 == 0 { 4 } else { 2 };
                    let gold = k % n;
                    let opts: Vec<String> = (0..n)
                        .map(|j| match (j == gold, s.rewrite_ok) {
                            (true, true) => gold_text(k),
                            (true, false) => format!("changed gold {k}"),
                            _ => format!("subtle distractor {k}-{j}"),
                        })
                        .collect();
                    Response::Text(serde_json::to_string(&opts).unwrap())
                } else {
                    Response::Text(if s.eval_correct { format!("The answer is {}", gold_text(k)) } else { "unsure".into() })
                }
            }
        }
    }

    pub fn transport(self: &Arc<Self>) -> Arc<ScriptedTransport> {
        let w = self.clone();
        Arc::new(ScriptedTransport::new(move |cfg, req, _| Ok(w.respond(cfg, req))))
    }
}

pub fn debias_config() -> DebiasConfig {
    let mut c = DebiasConfig::default();
    for ep in c.panel.iter_mut().chain([&mut c.embedder, &mut c.rewriter, &mut c.transcriber]) {
        ep.base_url = "http://mock/v1".into();
    }
    c
}

pub fn eval_config() -> EvalConfig {
    let mut c = EvalConfig::new(EndpointConfig::new("http://mock/v1", "eval-model", EndpointKind::ChatVision));
    c.n_frames = 8;
    c
}

/// Every byte the end-to-end flow writes, in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifacts {
    pub filtered: String,
    pub pipeline_report: String,
    pub final_manifest: String,
    pub eval_run: String,
    pub table: String,
}

pub fn decisions(reject: &[usize], edit: &[usize], undecided: &[usize], filtered: &Manifest) -> Vec<ReviewDecision> {
    let ts = Utc.with_ymd_and_hms(2025, 3, 2, 9, 0, 0).unwrap();
    filtered
        .items
        .iter()
        .filter_map(|it| {
            let k: usize = it.id[1..].parse().unwrap();
            if undecided.contains(&k) {
                None
            } else if reject.contains(&k) {
                Some(ReviewDecision::new(&it.id, ReviewAction::Rejected, "rev", ts))
            } else if edit.contains(&k) {
                let mut r = it.clone();
                r.question = format!("Edited: what happens in {}", marker(k));
                Some(ReviewDecision::edited(r, "rev", ts))
            } else {
                Some(ReviewDecision::new(&it.id, ReviewAction::Accepted, "rev", ts))
            }
        })
        .collect()
}

pub struct Flow {
    pub reject: Vec<usize>,
    pub edit: Vec<usize>,
    pub undecided: Vec<usize>,
    pub seed: u64,
}

/// filter, shuffle, review-apply, eval, report through one gateway.
pub fn run_flow(world: &World, flow: &Flow, gw: &Gateway) -> (Artifacts, PipelineReport, Manifest) {
    let out = run_pipeline(&world.manifest(), &debias_config(), gw, flow.seed, at()).expect("pipeline");
    let ds = decisions(&flow.reject, &flow.edit, &flow.undecided, &out.manifest);
    let applied = apply_decisions(&out.manifest, &ds).expect("apply");
    let run = run_eval(&applied.manifest, &eval_config(), &world.assets(), gw).expect("eval");
    let table = render_report(&[("scripted".to_string(), run.aggregates.clone())], ReportFormat::Markdown);
    let artifacts = Artifacts {
        filtered: render_manifest(&out.manifest).unwrap(),
        pipeline_report: serde_json::to_string_pretty(&out.report).unwrap(),
        final_manifest: render_manifest(&applied.manifest).unwrap(),
        eval_run: serde_json::to_string_pretty(&run).unwrap(),
        table,
    };
    (artifacts, out.report, applied.manifest)
}

pub fn recording(world: &Arc<World>, dir: &Path) -> Gateway {
    Gateway::with_cache(world.transport(), dir, CacheMode::Record)
}

pub fn replaying(dir: &Path) -> Gateway {
    let t: Arc<dyn Transport> = Arc::new(PanicTransport);
    Gateway::with_cache(t, dir, CacheMode::Replay)
}
