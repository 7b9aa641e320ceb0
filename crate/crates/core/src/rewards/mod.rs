//! See-Think-Answer rewards and group-relative advantages.
//!
//! A completion earns `r_f` for the strict tag layout, `r_a` for picking the
//! gold option and `r_v` when a text-only verifier can answer the question
//! from the `<see>` section alone. The components are independent; an
//! ill-formed completion is still graded on whatever answer section it has.

mod advantage;
mod choice;
pub mod server;
mod sta;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, QAItem};
use crate::gateway::{EndpointConfig, EndpointKind, Gateway, GatewayError, Message};
use crate::par::{self, Execution};

pub use advantage::{group_advantages, group_advantages_batch, ADVANTAGE_EPS};
pub use choice::{extract_choice, format_options, option_letter};
pub use sta::{format_reward, parse_sta, render_sta, StaParser, StaResponse, StaTemplate};

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("unknown item {0:?}")]
    UnknownItem(String),
    #[error("group {group_id:?} has {size} completion(s); at least 2 required")]
    GroupTooSmall { group_id: String, size: usize },
    #[error("rewards must be finite")]
    NonFinite,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub lambda: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights { lambda: 0.1 }
    }
}

impl RewardWeights {
    pub fn new(lambda: f64) -> Result<Self, RewardError> {
        let w = RewardWeights { lambda };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(RewardError::InvalidConfig(format!("lambda {} must be finite and >= 0", self.lambda)));
        }
        Ok(())
    }
}

pub fn total_reward(r_f: u8, r_a: u8, r_v: u8, w: RewardWeights) -> f64 {
    f64::from(r_f) + f64::from(r_a) + w.lambda * f64::from(r_v)
}

/// 1 iff the answer section resolves to the gold option.
pub fn accuracy_reward(resp: &StaResponse, gold_index: usize, options: &[String]) -> u8 {
    u8::from(extract_choice(&resp.answer, options) == Some(gold_index))
}

pub const DEFAULT_VERIFIER_PROMPT: &str = "Below is a textual description of a video.\n\nDescription:\n{description}\n\nUsing only this description, answer the question.\nQuestion: {question}\n{options}\nReply with the letter of the correct option only.";

pub const DEFAULT_OPEN_VERIFIER_PROMPT: &str =
    "Below is a textual description of a video.\n\nDescription:\n{description}\n\nUsing only this description, answer the question in a few words.\nQuestion: {question}";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierConfig {
    pub endpoint: EndpointConfig,
    /// Placeholders: `{description}`, `{question}`, `{options}`.
    pub prompt_template: String,
    #[serde(default = "yes")]
    pub include_options: bool,
    /// Map verifier failures to `r_v = 0` instead of propagating them.
    #[serde(default)]
    pub lenient: bool,
}

fn yes() -> bool {
    true
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            endpoint: EndpointConfig::verifier(),
            prompt_template: DEFAULT_VERIFIER_PROMPT.into(),
            include_options: true,
            lenient: false,
        }
    }
}

impl VerifierConfig {
    pub fn with_endpoint(endpoint: EndpointConfig) -> Self {
        VerifierConfig {
            endpoint,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        if self.endpoint.kind != EndpointKind::Chat {
            return Err(RewardError::InvalidConfig(format!(
                "verifier endpoint must be text-only chat, got {:?}",
                self.endpoint.kind
            )));
        }
        Ok(())
    }

    /// The verifier prompt: description, question and (optionally) options.
    pub fn prompt(&self, description: &str, item: &QAItem) -> String {
        let options = if self.include_options {
            format!("Options:\n{}", format_options(&item.options))
        } else {
            String::new()
        };
        self.prompt_template
            .replace("{description}", description.trim())
            .replace("{question}", &item.question)
            .replace("{options}", &options)
    }
}

/// Asks the verifier to answer from the description alone. An empty
/// description scores 0 without a call.
pub fn visual_knowledge_reward(resp: &StaResponse, item: &QAItem, vcfg: &VerifierConfig, gw: &Gateway) -> Result<u8, RewardError> {
    if resp.see.trim().is_empty() {
        return Ok(0);
    }
    vcfg.validate()?;
    let prompt = vcfg.prompt(&resp.see, item);
    match gw.chat(&vcfg.endpoint, &[Message::user(prompt)]) {
        Ok(reply) => Ok(u8::from(extract_choice(&reply, &item.options) == Some(item.answer_index))),
        Err(e) if vcfg.lenient => {
            log::warn!("verifier failed for {}: {e}; r_v = 0", item.id);
            Ok(0)
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub item_id: String,
    pub r_f: u8,
    pub r_a: u8,
    pub r_v: u8,
    pub lambda: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardGroup {
    pub group_id: String,
    pub records: Vec<RewardRecord>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionInput {
    pub group_id: String,
    pub item_id: String,
    #[serde(alias = "completion")]
    pub raw: String,
}

/// Scores one completion against its item.
pub fn score_completion(
    raw: &str,
    item: &QAItem,
    parser: &StaParser,
    w: RewardWeights,
    vcfg: &VerifierConfig,
    gw: &Gateway,
) -> Result<RewardRecord, RewardError> {
    let resp = parser.parse(raw);
    let r_f = format_reward(&resp);
    let r_a = accuracy_reward(&resp, item.answer_index, &item.options);
    let r_v = visual_knowledge_reward(&resp, item, vcfg, gw)?;
    Ok(RewardRecord {
        item_id: item.id.clone(),
        r_f,
        r_a,
        r_v,
        lambda: w.lambda,
        total: total_reward(r_f, r_a, r_v, w),
    })
}

/// Everything needed to turn raw completions into scored groups.
#[derive(Debug, Clone)]
pub struct RewardScorer {
    pub weights: RewardWeights,
    pub verifier: VerifierConfig,
    pub parser: StaParser,
    pub exec: Execution,
}

impl RewardScorer {
    pub fn new(weights: RewardWeights, verifier: VerifierConfig) -> Self {
        RewardScorer {
            weights,
            verifier,
            parser: StaParser::new(StaTemplate::default()).expect("default template compiles"),
            exec: Execution::default(),
        }
    }

    pub fn with_template(mut self, template: StaTemplate) -> Result<Self, RewardError> {
        self.parser = StaParser::new(template).map_err(|e| RewardError::InvalidConfig(e.to_string()))?;
        Ok(self)
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    /// Groups come back sorted by group id; records keep input order within
    /// a group. Input validation happens before any verifier call.
    pub fn score_batch(&self, completions: &[CompletionInput], manifest: &Manifest, gw: &Gateway) -> Result<Vec<RewardGroup>, RewardError> {
        self.weights.validate()?;
        self.verifier.validate()?;
        let index = manifest.index();
        let items = completions
            .iter()
            .map(|c| index.get(c.item_id.as_str()).copied().ok_or_else(|| RewardError::UnknownItem(c.item_id.clone())))
            .collect::<Result<Vec<_>, _>>()?;

        let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in completions.iter().enumerate() {
            groups.entry(c.group_id.as_str()).or_default().push(i);
        }
        if let Some((id, members)) = groups.iter().find(|(_, m)| m.len() < 2) {
            return Err(RewardError::GroupTooSmall {
                group_id: id.to_string(),
                size: members.len(),
            });
        }

        let jobs: Vec<usize> = (0..completions.len()).collect();
        let records = par::try_map(self.exec, &jobs, |&i| {
            score_completion(&completions[i].raw, items[i], &self.parser, self.weights, &self.verifier, gw)
        })?;

        groups
            .into_iter()
            .map(|(id, members)| {
                let recs: Vec<RewardRecord> = members.iter().map(|&i| records[i].clone()).collect();
                let totals: Vec<f64> = recs.iter().map(|r| r.total).collect();
                let advantages = group_advantages(&totals).map_err(|e| match e {
                    RewardError::GroupTooSmall { size, .. } => RewardError::GroupTooSmall {
                        group_id: id.to_string(),
                        size,
                    },
                    other => other,
                })?;
                Ok(RewardGroup {
                    group_id: id.to_string(),
                    records: recs,
                    advantages,
                })
            })
            .collect()
    }
}

pub fn score_batch(
    completions: &[CompletionInput],
    manifest: &Manifest,
    w: RewardWeights,
    vcfg: &VerifierConfig,
    gw: &Gateway,
) -> Result<Vec<RewardGroup>, RewardError> {
    RewardScorer::new(w, vcfg.clone()).score_batch(completions, manifest, gw)
}

/// Passed through to the trainer; the scorer itself never uses these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerMetadata {
    pub lambda: f64,
    pub kl_beta: f64,
    pub clip_epsilon: f64,
    pub num_generations: u32,
}

impl Default for TrainerMetadata {
    fn default() -> Self {
        TrainerMetadata {
            lambda: RewardWeights::default().lambda,
            kl_beta: 0.04,
            clip_epsilon: 0.2,
            num_generations: 8,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::item;
    use crate::gateway::mock::ScriptedTransport;
    use crate::gateway::Response;
    use std::sync::Arc;

    fn verifier_answering(letter: &'static str) -> (Gateway, Arc<ScriptedTransport>) {
        let t = Arc::new(ScriptedTransport::new(move |_, _, _| Ok(Response::Text(letter.to_string()))));
        (Gateway::uncached(t.clone()), t)
    }

    fn vcfg() -> VerifierConfig {
        let mut ep = EndpointConfig::verifier();
        ep.base_url = "http://mock/v1".into();
        VerifierConfig::with_endpoint(ep)
    }

    const GOOD: &str = "<see>a cup tips over</see><think>gravity</think><answer>A</answer>";

    #[test]
    fn totals() {
        let w = RewardWeights::default();
        assert_eq!(total_reward(1, 1, 1, w), 2.1);
        assert_eq!(total_reward(0, 0, 0, RewardWeights { lambda: 0.7 }), 0.0);
        assert!(RewardWeights::new(-0.1).is_err());
        assert!(RewardWeights::new(f64::NAN).is_err());
    }

    #[test]
    fn accuracy() {
        let it = item("q", "v.mp4", "what happens?", 4);
        assert_eq!(accuracy_reward(&parse_sta(GOOD), 0, &it.options), 1);
        assert_eq!(accuracy_reward(&parse_sta(GOOD), 1, &it.options), 0);
        let ill = parse_sta("<see>x</see><answer>A</answer>");
        assert_eq!(accuracy_reward(&ill, 0, &it.options), 1);
        assert_eq!(accuracy_reward(&parse_sta("<answer>no idea</answer>"), 0, &it.options), 0);
    }

    #[test]
    fn verifier_gold_and_wrong() {
        let it = item("q", "v.mp4", "what happens?", 4);
        let (gw, _) = verifier_answering("A");
        assert_eq!(visual_knowledge_reward(&parse_sta(GOOD), &it, &vcfg(), &gw).unwrap(), 1);
        let (gw, _) = verifier_answering("C");
        assert_eq!(visual_knowledge_reward(&parse_sta(GOOD), &it, &vcfg(), &gw).unwrap(), 0);
    }

    #[test]
    fn empty_see_makes_no_call() {
        let it = item("q", "v.mp4", "what happens?", 4);
        let (gw, t) = verifier_answering("A");
        let resp = parse_sta("<see> </see><think>t</think><answer>A</answer>");
        assert_eq!(visual_knowledge_reward(&resp, &it, &vcfg(), &gw).unwrap(), 0);
        assert_eq!(t.calls(), 0);
    }

    #[test]
    fn verifier_prompt_carries_only_description() {
        let it = item("q", "v.mp4", "what happens?", 2);
        let (gw, t) = verifier_answering("A");
        let resp = parse_sta("<see>a cup tips over</see><think>SECRET-THINK</think><answer>SECRET-ANSWER</answer>");
        visual_knowledge_reward(&resp, &it, &vcfg(), &gw).unwrap();
        let body = t.requests()[0].1.text();
        assert!(body.contains("a cup tips over") && body.contains("what happens?"));
        assert!(!body.contains("SECRET"));
        assert!(t.requests()[0].1.frames().is_none());
    }

    #[test]
    fn open_ended_mode_omits_options() {
        let it = item("q", "v.mp4", "what happens?", 2);
        let mut v = vcfg();
        v.include_options = false;
        v.prompt_template = DEFAULT_OPEN_VERIFIER_PROMPT.into();
        let p = v.prompt("desc", &it);
        assert!(!p.contains(&it.options[1]));
    }

    #[test]
    fn vision_verifier_rejected() {
        let mut v = vcfg();
        v.endpoint.kind = EndpointKind::ChatVision;
        assert!(matches!(v.validate(), Err(RewardError::InvalidConfig(_))));
    }

    #[test]
    fn lenient_maps_failure_to_zero() {
        let it = item("q", "v.mp4", "what happens?", 2);
        let t = Arc::new(ScriptedTransport::new(|_, _, _| {
            Err(crate::gateway::TransportError::Status {
                status: 400,
                body: "bad".into(),
            })
        }));
        let gw = Gateway::uncached(t);
        assert!(visual_knowledge_reward(&parse_sta(GOOD), &it, &vcfg(), &gw).is_err());
        let mut v = vcfg();
        v.lenient = true;
        assert_eq!(visual_knowledge_reward(&parse_sta(GOOD), &it, &v, &gw).unwrap(), 0);
    }

    #[test]
    fn batch_of_one_group() {
        let m = Manifest::new(vec![item("q", "v.mp4", "what happens?", 4)]);
        let (gw, _) = verifier_answering("A");
        let comps = vec![
            CompletionInput {
                group_id: "g".into(),
                item_id: "q".into(),
                raw: GOOD.into(),
            },
            CompletionInput {
                group_id: "g".into(),
                item_id: "q".into(),
                raw: "I think it is B".into(),
            },
        ];
        let groups = score_batch(&comps, &m, RewardWeights::default(), &vcfg(), &gw).unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].records[0].total, 2.1);
        assert_eq!(groups[0].records[1].total, 0.0);
        assert!((groups[0].advantages[0] - 1.0).abs() < 1e-6);
        assert!((groups[0].advantages[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn batch_errors() {
        let m = Manifest::new(vec![item("q", "v.mp4", "what happens?", 4)]);
        let (gw, t) = verifier_answering("A");
        let c = |g: &str, id: &str| CompletionInput {
            group_id: g.into(),
            item_id: id.into(),
            raw: GOOD.into(),
        };
        let err = score_batch(&[c("g", "q"), c("g", "nope")], &m, RewardWeights::default(), &vcfg(), &gw).unwrap_err();
        assert!(matches!(err, RewardError::UnknownItem(id) if id == "nope"));
        let err = score_batch(&[c("g", "q"), c("g", "q"), c("h", "q")], &m, RewardWeights::default(), &vcfg(), &gw).unwrap_err();
        assert!(matches!(err, RewardError::GroupTooSmall { group_id, size: 1 } if group_id == "h"));
        assert_eq!(t.calls(), 0);
    }
}
