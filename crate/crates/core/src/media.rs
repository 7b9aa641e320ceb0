//! Video probing, frame sampling and transcription.
//!
//! Pixels are never decoded here. Probing and frame extraction shell out to
//! an ffprobe/ffmpeg-compatible toolchain; model requests carry frame
//! timestamps by reference.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::VideoRef;
use crate::gateway::{EndpointConfig, FrameAttachment, Gateway, GatewayError};

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("{uri}: unreadable media: {reason}")]
    Unreadable { uri: String, reason: String },
    #[error("{uri}: no {stream} stream")]
    MissingStream { uri: String, stream: &'static str },
    #[error("requested {requested} frames but only {available} available")]
    TooManyFrames { requested: usize, available: usize },
    #[error("frame count must be >= 1")]
    NoFrames,
    #[error("invalid asset: {0}")]
    InvalidAsset(String),
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("unknown video {0}")]
    UnknownVideo(String),
    #[error("transcription failed for {uri}: {source}")]
    Gateway {
        uri: String,
        #[source]
        source: GatewayError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub video: VideoRef,
    pub duration: f64,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
}

impl VideoAsset {
    pub fn validate(&self) -> Result<(), MediaError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(MediaError::InvalidAsset(format!("{}: duration {} must be > 0", self.video.uri, self.duration)));
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(MediaError::InvalidAsset(format!("{}: fps {} must be > 0", self.video.uri, self.fps)));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.fps).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSample {
    pub timestamps: Vec<f64>,
    pub count: usize,
    pub resolution_budget: String,
}

impl FrameSample {
    pub fn attach(&self, video: &VideoRef) -> FrameAttachment {
        FrameAttachment {
            video: video.clone(),
            timestamps: self.timestamps.clone(),
            resolution_budget: self.resolution_budget.clone(),
        }
    }
}

/// Uniform midpoint sampling: `t_k = (k + 0.5) / n * duration`.
pub fn sample_frames(asset: &VideoAsset, n: usize, resolution_budget: &str) -> Result<FrameSample, MediaError> {
    asset.validate()?;
    if n == 0 {
        return Err(MediaError::NoFrames);
    }
    let available = asset.frame_count();
    if n > available {
        return Err(MediaError::TooManyFrames { requested: n, available });
    }
    let timestamps = (0..n).map(|k| (k as f64 + 0.5) / n as f64 * asset.duration).collect();
    Ok(FrameSample {
        timestamps,
        count: n,
        resolution_budget: resolution_budget.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub segments: Vec<Segment>,
    pub full_text: String,
}

impl Transcript {
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self, MediaError> {
        let mut prev_end = f64::NEG_INFINITY;
        for s in &segments {
            if !(s.start <= s.end) {
                return Err(MediaError::InvalidTranscript(format!("segment ends before it starts: {s:?}")));
            }
            if s.start < prev_end {
                return Err(MediaError::InvalidTranscript(format!("segment overlaps its predecessor: {s:?}")));
            }
            prev_end = s.end;
        }
        let full_text = segments.iter().map(|s| s.text.as_str()).collect();
        Ok(Transcript { segments, full_text })
    }

    pub fn is_silent(&self) -> bool {
        self.full_text.trim().is_empty()
    }
}

pub fn transcribe(video: &VideoRef, cfg: &EndpointConfig, gw: &Gateway) -> Result<Transcript, MediaError> {
    let segments = gw.transcribe(cfg, video).map_err(|source| MediaError::Gateway {
        uri: video.uri.clone(),
        source,
    })?;
    Transcript::from_segments(segments)
}

/// Locations of the external media tools.
#[derive(Debug, Clone)]
pub struct MediaToolkit {
    pub ffprobe: PathBuf,
    pub ffmpeg: PathBuf,
    /// Prefix for relative video paths.
    pub media_root: Option<PathBuf>,
}

impl Default for MediaToolkit {
    fn default() -> Self {
        MediaToolkit {
            ffprobe: PathBuf::from("ffprobe"),
            ffmpeg: PathBuf::from("ffmpeg"),
            media_root: None,
        }
    }
}

impl MediaToolkit {
    pub fn resolve_path(&self, video: &VideoRef) -> Result<PathBuf, MediaError> {
        let local = video.local_path().ok_or_else(|| MediaError::Unreadable {
            uri: video.uri.clone(),
            reason: "not a local file".into(),
        })?;
        let p = Path::new(local);
        Ok(match &self.media_root {
            Some(root) if p.is_relative() => root.join(p),
            _ => p.to_path_buf(),
        })
    }

    pub fn probe(&self, video: &VideoRef) -> Result<VideoAsset, MediaError> {
        let path = self.resolve_path(video)?;
        let out = Command::new(&self.ffprobe)
            .args(["-v", "error", "-print_format", "json", "-show_format", "-show_streams"])
            .arg(&path)
            .output()
            .map_err(|e| MediaError::Unreadable {
                uri: video.uri.clone(),
                reason: format!("cannot run {}: {e}", self.ffprobe.display()),
            })?;
        if !out.status.success() {
            return Err(MediaError::Unreadable {
                uri: video.uri.clone(),
                reason: String::from_utf8_lossy(&out.stderr).trim().to_string(),
            });
        }
        parse_probe_output(video, &String::from_utf8_lossy(&out.stdout))
    }

    /// Extracts one JPEG per timestamp into `out_dir`, reusing existing files.
    pub fn extract_frames(&self, video: &VideoRef, timestamps: &[f64], out_dir: &Path) -> Result<Vec<PathBuf>, MediaError> {
        let path = self.resolve_path(video)?;
        std::fs::create_dir_all(out_dir).map_err(|e| MediaError::Unreadable {
            uri: video.uri.clone(),
            reason: e.to_string(),
        })?;
        let mut frames = Vec::with_capacity(timestamps.len());
        for &t in timestamps {
            let target = out_dir.join(format!("t{:010}.jpg", (t * 1000.0).round() as u64));
            if !target.exists() {
                let status = Command::new(&self.ffmpeg)
                    .args(["-v", "error", "-y", "-ss", &format!("{t:.3}"), "-i"])
                    .arg(&path)
                    .args(["-frames:v", "1", "-q:v", "2"])
                    .arg(&target)
                    .status()
                    .map_err(|e| MediaError::Unreadable {
                        uri: video.uri.clone(),
                        reason: format!("cannot run {}: {e}", self.ffmpeg.display()),
                    })?;
                if !status.success() || !target.exists() {
                    return Err(MediaError::Unreadable {
                        uri: video.uri.clone(),
                        reason: format!("frame extraction failed at {t:.3}s"),
                    });
                }
            }
            frames.push(target);
        }
        Ok(frames)
    }
}

pub fn probe_video(video: &VideoRef, toolkit: &MediaToolkit) -> Result<VideoAsset, MediaError> {
    toolkit.probe(video)
}

#[derive(Deserialize)]
struct ProbeOutput {
    #[serde(default)]
    streams: Vec<ProbeStream>,
    #[serde(default)]
    format: Option<ProbeFormat>,
}

#[derive(Deserialize)]
struct ProbeStream {
    codec_type: Option<String>,
    width: Option<u32>,
    height: Option<u32>,
    avg_frame_rate: Option<String>,
    r_frame_rate: Option<String>,
    duration: Option<String>,
}

#[derive(Deserialize)]
struct ProbeFormat {
    duration: Option<String>,
}

fn parse_rate(r: &str) -> Option<f64> {
    let (num, den) = match r.split_once('/') {
        Some((n, d)) => (n.parse::<f64>().ok()?, d.parse::<f64>().ok()?),
        None => (r.parse::<f64>().ok()?, 1.0),
    };
    let v = num / den;
    (v.is_finite() && v > 0.0).then_some(v)
}

/// Interprets ffprobe `-print_format json -show_format -show_streams` output.
pub fn parse_probe_output(video: &VideoRef, json: &str) -> Result<VideoAsset, MediaError> {
    let probe: ProbeOutput = serde_json::from_str(json).map_err(|e| MediaError::Unreadable {
        uri: video.uri.clone(),
        reason: format!("bad probe output: {e}"),
    })?;
    let stream = probe
        .streams
        .iter()
        .find(|s| s.codec_type.as_deref() == Some("video"))
        .ok_or_else(|| MediaError::MissingStream {
            uri: video.uri.clone(),
            stream: "video",
        })?;
    let fps = stream
        .avg_frame_rate
        .as_deref()
        .and_then(parse_rate)
        .or_else(|| stream.r_frame_rate.as_deref().and_then(parse_rate))
        .ok_or_else(|| MediaError::Unreadable {
            uri: video.uri.clone(),
            reason: "no frame rate".into(),
        })?;
    let duration = probe
        .format
        .as_ref()
        .and_then(|f| f.duration.as_deref())
        .or(stream.duration.as_deref())
        .and_then(|d| d.parse::<f64>().ok())
        .ok_or_else(|| MediaError::Unreadable {
            uri: video.uri.clone(),
            reason: "no duration".into(),
        })?;
    let asset = VideoAsset {
        video: video.clone(),
        duration,
        fps,
        width: stream.width.unwrap_or(0),
        height: stream.height.unwrap_or(0),
    };
    asset.validate()?;
    Ok(asset)
}

/// Maps a video reference to its probed metadata.
pub trait AssetResolver: Send + Sync {
    fn resolve(&self, video: &VideoRef) -> Result<VideoAsset, MediaError>;
}

/// Precomputed assets keyed by video identity, loaded from JSONL.
#[derive(Debug, Clone, Default)]
pub struct AssetCatalog {
    assets: HashMap<String, VideoAsset>,
}

impl AssetCatalog {
    pub fn new(assets: impl IntoIterator<Item = VideoAsset>) -> Self {
        AssetCatalog {
            assets: assets.into_iter().map(|a| (a.video.identity().to_string(), a)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, MediaError> {
        let text = std::fs::read_to_string(path).map_err(|e| MediaError::Unreadable {
            uri: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let mut assets = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let asset: VideoAsset = serde_json::from_str(line)
                .map_err(|e| MediaError::InvalidAsset(format!("{}:{}: {e}", path.display(), i + 1)))?;
            asset.validate()?;
            assets.push(asset);
        }
        Ok(Self::new(assets))
    }

    pub fn len(&self) -> usize {
        self.assets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assets.is_empty()
    }
}

impl AssetResolver for AssetCatalog {
    fn resolve(&self, video: &VideoRef) -> Result<VideoAsset, MediaError> {
        self.assets
            .get(video.identity())
            .cloned()
            .ok_or_else(|| MediaError::UnknownVideo(video.uri.clone()))
    }
}

/// Probes each video once with ffprobe and memoizes the result.
#[derive(Debug, Default)]
pub struct ProbingResolver {
    toolkit: MediaToolkit,
    memo: Mutex<HashMap<String, VideoAsset>>,
}

impl ProbingResolver {
    pub fn new(toolkit: MediaToolkit) -> Self {
        ProbingResolver {
            toolkit,
            memo: Mutex::new(HashMap::new()),
        }
    }
}

impl AssetResolver for ProbingResolver {
    fn resolve(&self, video: &VideoRef) -> Result<VideoAsset, MediaError> {
        if let Some(a) = self.memo.lock().unwrap().get(video.identity()) {
            return Ok(a.clone());
        }
        let asset = self.toolkit.probe(video)?;
        self.memo.lock().unwrap().insert(video.identity().to_string(), asset.clone());
        Ok(asset)
    }
}
