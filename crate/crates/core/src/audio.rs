//! Audio chunking and transcription.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use crate::media::PcmStream;
use crate::model::{AudioChunk, PcmSpan, Transcript, TranscriptSegment};
use crate::net::{with_retry, HttpTransport, NetError, NetworkPolicy, RetryPolicy};
use crate::sidecar::Sidecar;

pub const DEFAULT_CHUNK_SECONDS: f64 = 30.0;
pub const DEFAULT_MIN_CHUNK_SECONDS: f64 = 1.0;
pub const DEFAULT_IN_FLIGHT: usize = 4;
pub const STUB_FILE: &str = "transcriptions.json";

/// Primary subtags accepted as language hints (the Whisper language set).
const LANGUAGES: &[&str] = &[
    "af", "am", "ar", "as", "az", "ba", "be", "bg", "bn", "bo", "br", "bs", "ca", "cs", "cy", "da",
    "de", "el", "en", "es", "et", "eu", "fa", "fi", "fo", "fr", "gl", "gu", "ha", "haw", "he",
    "hi", "hr", "ht", "hu", "hy", "id", "is", "it", "ja", "jw", "ka", "kk", "km", "kn", "ko", "la",
    "lb", "ln", "lo", "lt", "lv", "mg", "mi", "mk", "ml", "mn", "mr", "ms", "mt", "my", "ne", "nl",
    "nn", "no", "oc", "pa", "pl", "ps", "pt", "ro", "ru", "sa", "sd", "si", "sk", "sl", "sn", "so",
    "sq", "sr", "su", "sv", "sw", "ta", "te", "tg", "th", "tk", "tl", "tr", "tt", "uk", "ur", "uz",
    "vi", "yi", "yo", "yue", "zh",
];

#[derive(Debug, Error, PartialEq)]
pub enum AudioError {
    #[error("invalid chunking parameters: {0}")]
    InvalidChunking(String),
    #[error("unsupported language hint {0:?}")]
    InvalidLanguage(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranscribeError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("stub fixture: {0}")]
    Fixture(String),
}

impl TranscribeError {
    fn retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::RateLimited(_))
    }
}

/// Normalises a hint to `auto` or a tag like `en` / `pt-BR`.
pub fn validate_language_hint(hint: &str) -> Result<String, AudioError> {
    let h = hint.trim();
    if h.eq_ignore_ascii_case("auto") || h.is_empty() {
        return Ok("auto".into());
    }
    let bad = || AudioError::InvalidLanguage(hint.to_string());
    let mut parts = h.split(['-', '_']);
    let primary = parts.next().ok_or_else(bad)?.to_ascii_lowercase();
    if !LANGUAGES.contains(&primary.as_str()) {
        return Err(bad());
    }
    let mut out = primary;
    for p in parts {
        let norm = match p.len() {
            2 if p.chars().all(|c| c.is_ascii_alphabetic()) => p.to_ascii_uppercase(),
            3 if p.chars().all(|c| c.is_ascii_digit()) => p.to_string(),
            4 if p.chars().all(|c| c.is_ascii_alphabetic()) => {
                let mut s = p.to_ascii_lowercase();
                s[..1].make_ascii_uppercase();
                s
            }
            _ => return Err(bad()),
        };
        out.push('-');
        out.push_str(&norm);
    }
    Ok(out)
}

/// Hard-cut chunks over `n_samples`. A trailing piece shorter than
/// `min_chunk_seconds` is dropped.
pub fn chunk_samples(
    asset_id: &str,
    sample_rate: u32,
    n_samples: usize,
    chunk_seconds: f64,
    min_chunk_seconds: f64,
) -> Result<Vec<AudioChunk>, AudioError> {
    if sample_rate == 0 {
        return Err(AudioError::InvalidChunking("sample rate is zero".into()));
    }
    if !(chunk_seconds.is_finite() && chunk_seconds > 0.0) {
        return Err(AudioError::InvalidChunking(format!(
            "chunk_seconds = {chunk_seconds}"
        )));
    }
    if !(min_chunk_seconds.is_finite() && (0.0..=chunk_seconds).contains(&min_chunk_seconds)) {
        return Err(AudioError::InvalidChunking(format!(
            "min_chunk_seconds = {min_chunk_seconds}"
        )));
    }
    let rate = sample_rate as f64;
    let chunk_len = (chunk_seconds * rate).round() as usize;
    let min_len = (min_chunk_seconds * rate).round() as usize;
    if chunk_len == 0 {
        return Err(AudioError::InvalidChunking(
            "chunk shorter than one sample".into(),
        ));
    }
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < n_samples {
        let len = chunk_len.min(n_samples - offset);
        if len < min_len.max(1) {
            break;
        }
        out.push(AudioChunk {
            asset_id: asset_id.to_string(),
            index: out.len(),
            start_s: offset as f64 / rate,
            end_s: (offset + len) as f64 / rate,
            samples: PcmSpan {
                sample_rate,
                offset,
                len,
            },
        });
        offset += len;
    }
    Ok(out)
}

pub fn chunk_audio(
    asset_id: &str,
    stream: &PcmStream,
    chunk_seconds: f64,
    min_chunk_seconds: f64,
) -> Result<Vec<AudioChunk>, AudioError> {
    chunk_samples(
        asset_id,
        stream.sample_rate,
        stream.samples.len(),
        chunk_seconds,
        min_chunk_seconds,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AudioFormat {
    pub sample_rate: u32,
    pub channels: u16,
    /// Always `s16le` for now.
    pub encoding: &'static str,
}

#[derive(Debug, Clone)]
pub struct TranscriptionRequest<'a> {
    pub chunk: &'a AudioChunk,
    pub audio: &'a [u8],
    pub format: AudioFormat,
    pub language_hint: &'a str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptionResponse {
    pub text: String,
    pub detected_language: Option<String>,
}

pub trait TranscriptionClient: Send + Sync {
    fn transcribe(
        &self,
        req: &TranscriptionRequest<'_>,
    ) -> Result<TranscriptionResponse, TranscribeError>;
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum StubEntry {
    Text(String),
    Error { error: String },
}

#[derive(Debug, Deserialize)]
struct StubFile {
    #[serde(default)]
    language: Option<String>,
    /// Keyed by `<asset_id>#<index>`; `*` is a fallback where `{index}` expands.
    chunks: HashMap<String, StubEntry>,
}

/// Canned transcriptions read from a fixture directory.
#[derive(Debug)]
pub struct StubTranscriber {
    language: Option<String>,
    chunks: HashMap<String, StubEntry>,
    calls: AtomicUsize,
    hints: Mutex<Vec<String>>,
}

impl StubTranscriber {
    pub fn from_dir(dir: &Path) -> Result<Self, TranscribeError> {
        let path = dir.join(STUB_FILE);
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| TranscribeError::Fixture(format!("{}: {e}", path.display())))?;
        let file: StubFile = serde_json::from_str(&raw)
            .map_err(|e| TranscribeError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::build(file))
    }

    /// Every chunk transcribes to `template` with `{index}` expanded.
    pub fn with_template(template: &str) -> Self {
        let mut chunks = HashMap::new();
        chunks.insert("*".to_string(), StubEntry::Text(template.to_string()));
        Self::build(StubFile {
            language: None,
            chunks,
        })
    }

    /// Makes `<asset_id>#<index>` fail with `kind` (`transport`, `auth`, `rate_limited`).
    pub fn fail(mut self, asset_id: &str, index: usize, kind: &str) -> Self {
        self.chunks.insert(
            format!("{asset_id}#{index}"),
            StubEntry::Error {
                error: kind.to_string(),
            },
        );
        self
    }

    fn build(file: StubFile) -> Self {
        Self {
            language: file.language,
            chunks: file.chunks,
            calls: AtomicUsize::new(0),
            hints: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Language hints seen, in call order.
    pub fn hints(&self) -> Vec<String> {
        self.hints.lock().expect("stub hint log").clone()
    }
}

impl TranscriptionClient for StubTranscriber {
    fn transcribe(
        &self,
        req: &TranscriptionRequest<'_>,
    ) -> Result<TranscriptionResponse, TranscribeError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.hints
            .lock()
            .expect("stub hint log")
            .push(req.language_hint.to_string());
        let key = format!("{}#{}", req.chunk.asset_id, req.chunk.index);
        let entry = self
            .chunks
            .get(&key)
            .or_else(|| self.chunks.get("*"))
            .ok_or_else(|| {
                TranscribeError::Fixture(format!("no canned transcription for {key}"))
            })?;
        match entry {
            StubEntry::Text(t) => Ok(TranscriptionResponse {
                text: t.replace("{index}", &req.chunk.index.to_string()),
                detected_language: self.language.clone(),
            }),
            StubEntry::Error { error } => Err(match error.as_str() {
                "auth" => TranscribeError::Auth("stub".into()),
                "rate_limited" => TranscribeError::RateLimited("stub".into()),
                "rejected" => TranscribeError::Rejected("stub".into()),
                _ => TranscribeError::Transport(format!("stub failure for {key}")),
            }),
        }
    }
}

/// OpenAI-compatible `audio/transcriptions` endpoint.
#[derive(Debug, Clone)]
pub struct HttpTranscriber {
    transport: HttpTransport,
    endpoint: String,
    api_key: String,
    model: String,
}

impl HttpTranscriber {
    pub fn new(
        policy: NetworkPolicy,
        endpoint: &str,
        api_key: &str,
        model: &str,
        timeout: Duration,
    ) -> Result<Self, TranscribeError> {
        if api_key.is_empty() {
            return Err(TranscribeError::Auth(
                "TRANSCRIBE_API_KEY is not set".into(),
            ));
        }
        Ok(Self {
            transport: HttpTransport::new(policy, "transcription", timeout)?,
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            model: model.to_string(),
        })
    }
}

/// Wraps raw s16le mono samples in a WAV container.
pub fn wav_bytes(pcm_le: &[u8], format: AudioFormat) -> Result<Vec<u8>, TranscribeError> {
    let spec = hound::WavSpec {
        channels: format.channels,
        sample_rate: format.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cur = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cur, spec)
            .map_err(|e| TranscribeError::Rejected(e.to_string()))?;
        for s in pcm_le.chunks_exact(2) {
            w.write_sample(i16::from_le_bytes([s[0], s[1]]))
                .map_err(|e| TranscribeError::Rejected(e.to_string()))?;
        }
        w.finalize()
            .map_err(|e| TranscribeError::Rejected(e.to_string()))?;
    }
    Ok(cur.into_inner())
}

impl TranscriptionClient for HttpTranscriber {
    fn transcribe(
        &self,
        req: &TranscriptionRequest<'_>,
    ) -> Result<TranscriptionResponse, TranscribeError> {
        let wav = wav_bytes(req.audio, req.format)?;
        let part = reqwest::blocking::multipart::Part::bytes(wav)
            .file_name(format!("{}-{}.wav", req.chunk.asset_id, req.chunk.index))
            .mime_str("audio/wav")
            .map_err(|e| TranscribeError::Rejected(e.to_string()))?;
        let mut form = reqwest::blocking::multipart::Form::new()
            .part("file", part)
            .text("model", self.model.clone())
            .text("response_format", "verbose_json");
        if req.language_hint != "auto" {
            let primary = req
                .language_hint
                .split('-')
                .next()
                .unwrap_or("")
                .to_string();
            form = form.text("language", primary);
        }
        let resp = self
            .transport
            .client()
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .multipart(form)
            .send()
            .map_err(|e| TranscribeError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().unwrap_or_default();
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(TranscribeError::Auth(status.to_string())),
            429 => return Err(TranscribeError::RateLimited(body)),
            500..=599 => return Err(TranscribeError::Transport(format!("{status}: {body}"))),
            _ => return Err(TranscribeError::Rejected(format!("{status}: {body}"))),
        }
        let v: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| TranscribeError::Transport(format!("bad response body: {e}")))?;
        let text = v["text"]
            .as_str()
            .ok_or_else(|| TranscribeError::Transport("response lacks text".into()))?;
        Ok(TranscriptionResponse {
            text: text.to_string(),
            detected_language: v["language"].as_str().map(str::to_string),
        })
    }
}

/// Local transcription through the model sidecar.
pub struct SidecarTranscriber {
    sidecar: Arc<Sidecar>,
}

impl SidecarTranscriber {
    pub fn new(sidecar: Arc<Sidecar>) -> Self {
        Self { sidecar }
    }
}

impl TranscriptionClient for SidecarTranscriber {
    fn transcribe(
        &self,
        req: &TranscriptionRequest<'_>,
    ) -> Result<TranscriptionResponse, TranscribeError> {
        let (text, lang) = self
            .sidecar
            .transcribe(req.audio, req.format.sample_rate, req.language_hint)
            .map_err(|e| {
                if e.is_transport() {
                    TranscribeError::Transport(e.to_string())
                } else {
                    TranscribeError::Rejected(e.to_string())
                }
            })?;
        Ok(TranscriptionResponse {
            text,
            detected_language: Some(lang),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TranscribeOptions {
    pub language_hint: String,
    pub in_flight: usize,
    pub retry: RetryPolicy,
}

impl Default for TranscribeOptions {
    fn default() -> Self {
        Self {
            language_hint: "auto".into(),
            in_flight: DEFAULT_IN_FLIGHT,
            retry: RetryPolicy::default(),
        }
    }
}

type ChunkResult = Result<TranscriptionResponse, TranscribeError>;

/// One transcript for one asset. Chunk failures become empty segments with
/// an error note; only an authentication failure aborts.
pub fn transcribe_asset(
    asset_id: &str,
    chunks: &[AudioChunk],
    pcm: &PcmStream,
    client: &dyn TranscriptionClient,
    opts: &TranscribeOptions,
) -> Result<Transcript, TranscribeError> {
    let format = AudioFormat {
        sample_rate: pcm.sample_rate,
        channels: 1,
        encoding: "s16le",
    };
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let results: Mutex<Vec<Option<ChunkResult>>> = Mutex::new(vec![None; chunks.len()]);
    let workers = opts.in_flight.clamp(1, chunks.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(chunk) = chunks.get(i) else { break };
                let audio = pcm.bytes(chunk.samples.offset, chunk.samples.len);
                let req = TranscriptionRequest {
                    chunk,
                    audio: &audio,
                    format,
                    language_hint: &opts.language_hint,
                };
                let (res, attempts) = with_retry(&opts.retry, TranscribeError::retryable, |_| {
                    client.transcribe(&req)
                });
                if attempts > 1 {
                    tracing::debug!(asset_id, chunk = i, attempts, "transcription retried");
                }
                if matches!(res, Err(TranscribeError::Auth(_))) {
                    abort.store(true, Ordering::SeqCst);
                }
                results.lock().expect("transcript results")[i] = Some(res);
            });
        }
    });

    let results = results.into_inner().expect("transcript results");
    if let Some(Some(Err(e))) = results
        .iter()
        .find(|r| matches!(r, Some(Err(TranscribeError::Auth(_)))))
    {
        return Err(e.clone());
    }

    let mut detected = None;
    let segments = chunks
        .iter()
        .zip(results)
        .map(|(chunk, r)| {
            let (text, error) = match r {
                Some(Ok(resp)) => {
                    if detected.is_none() {
                        detected = resp.detected_language;
                    }
                    (resp.text, None)
                }
                Some(Err(e)) => {
                    tracing::warn!(asset_id, chunk = chunk.index, error = %e, "chunk transcription failed");
                    (String::new(), Some(e.to_string()))
                }
                None => (String::new(), Some("not attempted".to_string())),
            };
            TranscriptSegment {
                start_s: chunk.start_s,
                end_s: chunk.end_s,
                text,
                error,
            }
        })
        .collect();

    let language = if opts.language_hint != "auto" {
        opts.language_hint.clone()
    } else {
        detected.unwrap_or_else(|| "auto".into())
    };
    Ok(Transcript {
        asset_id: asset_id.to_string(),
        language,
        segments,
    })
}

/// Transcribes each asset in turn; assets with no chunks are skipped.
pub fn transcribe_case(
    assets: &[(Vec<AudioChunk>, &PcmStream)],
    client: &dyn TranscriptionClient,
    opts: &TranscribeOptions,
) -> Result<Vec<Transcript>, TranscribeError> {
    let mut out = Vec::new();
    for (chunks, pcm) in assets {
        let Some(first) = chunks.first() else {
            continue;
        };
        out.push(transcribe_asset(
            &first.asset_id,
            chunks,
            pcm,
            client,
            opts,
        )?);
    }
    Ok(out)
}
