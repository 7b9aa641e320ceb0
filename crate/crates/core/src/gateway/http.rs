//! OpenAI-compatible HTTP surface: `/chat/completions`, `/embeddings`,
//! `/audio/transcriptions`.

use std::path::PathBuf;
use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{EndpointConfig, FrameAttachment, Message, Request, Response, Role, SamplingParams, Transport, TransportError};
use crate::media::{MediaToolkit, Segment};

/// Turns frame references into inline JPEG data URLs via ffmpeg.
#[derive(Debug, Clone)]
pub struct FrameEncoder {
    pub toolkit: MediaToolkit,
    pub frame_dir: PathBuf,
}

impl FrameEncoder {
    fn data_urls(&self, frames: &FrameAttachment) -> Result<Vec<String>, TransportError> {
        let dir = self.frame_dir.join(hex::encode(Sha256::digest(frames.video.identity().as_bytes())));
        let paths = self
            .toolkit
            .extract_frames(&frames.video, &frames.timestamps, &dir)
            .map_err(|e| TransportError::Other(e.to_string()))?;
        paths
            .iter()
            .map(|p| {
                let bytes = std::fs::read(p).map_err(|e| TransportError::Other(format!("{}: {e}", p.display())))?;
                Ok(format!("data:image/jpeg;base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
            })
            .collect()
    }
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    frames: Option<FrameEncoder>,
    toolkit: MediaToolkit,
}

impl HttpTransport {
    pub fn new() -> Result<Self, TransportError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| TransportError::Other(format!("cannot build http client: {e}")))?;
        Ok(HttpTransport {
            client,
            frames: None,
            toolkit: MediaToolkit::default(),
        })
    }

    pub fn with_frames(mut self, encoder: FrameEncoder) -> Self {
        self.toolkit = encoder.toolkit.clone();
        self.frames = Some(encoder);
        self
    }

    fn url(cfg: &EndpointConfig, path: &str) -> String {
        format!("{}/{}", cfg.base_url.trim_end_matches('/'), path)
    }

    fn authorize(&self, cfg: &EndpointConfig, req: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        let req = req.timeout(Duration::from_secs(cfg.timeout_secs));
        match cfg.auth_env.as_deref().and_then(|name| std::env::var(name).ok()) {
            Some(token) => req.bearer_auth(token),
            None => req,
        }
    }

    fn message_json(&self, m: &Message) -> Result<Value, TransportError> {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let Some(frames) = &m.frames else {
            return Ok(json!({"role": role, "content": m.text}));
        };
        let encoder = self
            .frames
            .as_ref()
            .ok_or_else(|| TransportError::Other("frames attached but no frame encoder configured".into()))?;
        let mut parts: Vec<Value> = encoder
            .data_urls(frames)?
            .into_iter()
            .map(|url| json!({"type": "image_url", "image_url": {"url": url}}))
            .collect();
        parts.push(json!({"type": "text", "text": m.text}));
        Ok(json!({"role": role, "content": parts}))
    }

    fn chat_body(&self, cfg: &EndpointConfig, messages: &[Message], sampling: &SamplingParams, sample_index: u32) -> Result<Value, TransportError> {
        let msgs = messages.iter().map(|m| self.message_json(m)).collect::<Result<Vec<_>, _>>()?;
        let mut body = json!({
            "model": cfg.model,
            "messages": msgs,
            "temperature": sampling.temperature,
            "top_p": sampling.top_p,
            "max_tokens": sampling.max_tokens,
            "n": 1,
        });
        if let Some(seed) = sampling.seed {
            body["seed"] = json!(seed.wrapping_add(sample_index as u64));
        }
        if let Some(budget) = messages.iter().find_map(|m| m.frames.as_ref()).map(|f| &f.resolution_budget) {
            if !budget.is_empty() {
                body["resolution_budget"] = json!(budget);
            }
        }
        Ok(body)
    }

    fn finish(resp: reqwest::Result<reqwest::blocking::Response>) -> Result<Value, TransportError> {
        let resp = resp.map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(TransportError::Status {
                status: status.as_u16(),
                body: text.chars().take(2000).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| TransportError::Decode(format!("{e}: {}", text.chars().take(200).collect::<String>())))
    }
}

fn classify(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else if e.is_connect() {
        TransportError::Connect(e.to_string())
    } else if e.is_decode() {
        TransportError::Decode(e.to_string())
    } else {
        TransportError::Other(e.to_string())
    }
}

fn decode<T>(v: Option<T>, what: &str) -> Result<T, TransportError> {
    v.ok_or_else(|| TransportError::Decode(format!("missing {what}")))
}

impl Transport for HttpTransport {
    fn send(&self, cfg: &EndpointConfig, request: &Request) -> Result<Response, TransportError> {
        match request {
            Request::Chat {
                messages,
                sampling,
                sample_index,
            } => {
                let body = self.chat_body(cfg, messages, sampling, *sample_index)?;
                let v = Self::finish(self.authorize(cfg, self.client.post(Self::url(cfg, "chat/completions"))).json(&body).send())?;
                let text = decode(v.pointer("/choices/0/message/content").and_then(Value::as_str), "choices[0].message.content")?;
                Ok(Response::Text(text.to_string()))
            }
            Request::Embed { input } => {
                let body = json!({"model": cfg.model, "input": input});
                let v = Self::finish(self.authorize(cfg, self.client.post(Self::url(cfg, "embeddings"))).json(&body).send())?;
                let arr = decode(v.pointer("/data/0/embedding").and_then(Value::as_array), "data[0].embedding")?;
                let vec = arr
                    .iter()
                    .map(|x| x.as_f64().ok_or_else(|| TransportError::Decode("non-numeric embedding".into())))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Response::Embedding(vec))
            }
            Request::Transcribe { video } => {
                let path = self.toolkit.resolve_path(video).map_err(|e| TransportError::Other(e.to_string()))?;
                let bytes = std::fs::read(&path).map_err(|e| TransportError::Other(format!("{}: {e}", path.display())))?;
                let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "media".into());
                let form = reqwest::blocking::multipart::Form::new()
                    .text("model", cfg.model.clone())
                    .text("response_format", "verbose_json")
                    .part("file", reqwest::blocking::multipart::Part::bytes(bytes).file_name(name));
                let v = Self::finish(
                    self.authorize(cfg, self.client.post(Self::url(cfg, "audio/transcriptions")))
                        .multipart(form)
                        .send(),
                )?;
                Ok(Response::Transcript(parse_transcription(&v)?))
            }
        }
    }
}

/// Accepts `verbose_json` (with segments) or plain `{"text": ...}` bodies.
fn parse_transcription(v: &Value) -> Result<Vec<Segment>, TransportError> {
    if let Some(segs) = v.get("segments").and_then(Value::as_array) {
        return segs
            .iter()
            .map(|s| {
                Ok(Segment {
                    start: decode(s.get("start").and_then(Value::as_f64), "segment start")?,
                    end: decode(s.get("end").and_then(Value::as_f64), "segment end")?,
                    text: decode(s.get("text").and_then(Value::as_str), "segment text")?.to_string(),
                })
            })
            .collect();
    }
    let text = decode(v.get("text").and_then(Value::as_str), "text")?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let end = v.get("duration").and_then(Value::as_f64).unwrap_or(0.0);
    Ok(vec![Segment {
        start: 0.0,
        end,
        text: text.to_string(),
    }])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcription_bodies() {
        let verbose = json!({"text": "a b", "segments": [{"id": 0, "start": 0.0, "end": 1.0, "text": "a"}, {"id": 1, "start": 1.0, "end": 2.0, "text": " b"}]});
        assert_eq!(parse_transcription(&verbose).unwrap().len(), 2);
        assert!(parse_transcription(&json!({"text": ""})).unwrap().is_empty());
        assert_eq!(parse_transcription(&json!({"text": "hi", "duration": 3.5})).unwrap()[0].end, 3.5);
        assert!(parse_transcription(&json!({})).is_err());
    }

    #[test]
    fn chat_body_shape() {
        let t = HttpTransport::new().unwrap();
        let cfg = EndpointConfig::new("http://x/v1/", "m", super::super::EndpointKind::Chat);
        let mut s = SamplingParams::evaluation();
        s.seed = Some(10);
        let body = t.chat_body(&cfg, &[Message::system("sys"), Message::user("hi")], &s, 3).unwrap();
        assert_eq!(body["temperature"], json!(0.1));
        assert_eq!(body["top_p"], json!(0.001));
        assert_eq!(body["seed"], json!(13));
        assert_eq!(body["messages"][1], json!({"role": "user", "content": "hi"}));
        assert_eq!(HttpTransport::url(&cfg, "embeddings"), "http://x/v1/embeddings");
    }
}
