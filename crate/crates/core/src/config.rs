//! Pipeline configuration: JSON file, environment overrides, validation.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{validate_language_hint, DEFAULT_CHUNK_SECONDS, DEFAULT_MIN_CHUNK_SECONDS};
use crate::cluster::ClusteringConfig;
use crate::embed::EmbedderConfig;
use crate::evidence::fetch::{DEFAULT_FETCH_TIMEOUT, DEFAULT_POLITENESS, DEFAULT_SIZE_CAP};
use crate::evidence::search::DEFAULT_K;
use crate::imageprep::{DEFAULT_JPEG_QUALITY, DEFAULT_MAX_SIDE};
use crate::net::RetryPolicy;
use crate::shots::ShotDetectorConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderKind {
    /// In-process MP4/H.264 reader.
    #[default]
    Builtin,
    /// ffmpeg/ffprobe-compatible executables.
    Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranscriberKind {
    #[default]
    Http,
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub model: String,
    pub timeout_s: u64,
    /// Minimum spacing between requests.
    pub min_interval_ms: u64,
    pub max_source_chars: usize,
    pub image_max_side: u32,
    pub jpeg_quality: u8,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key: String::new(),
            model: "gpt-4o".into(),
            timeout_s: 120,
            min_interval_ms: 0,
            max_source_chars: 4000,
            image_max_side: DEFAULT_MAX_SIDE,
            jpeg_quality: DEFAULT_JPEG_QUALITY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FetchSettings {
    pub timeout_s: u64,
    pub size_cap: usize,
    pub in_flight: usize,
    pub politeness_ms: u64,
}

impl Default for FetchSettings {
    fn default() -> Self {
        Self {
            timeout_s: DEFAULT_FETCH_TIMEOUT.as_secs(),
            size_cap: DEFAULT_SIZE_CAP,
            in_flight: 4,
            politeness_ms: DEFAULT_POLITENESS.as_millis() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriptionSettings {
    pub backend: TranscriberKind,
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: String,
    pub model: String,
    pub in_flight: usize,
    pub timeout_s: u64,
}

impl Default for TranscriptionSettings {
    fn default() -> Self {
        Self {
            backend: TranscriberKind::Http,
            endpoint: "https://api.openai.com/v1/audio/transcriptions".into(),
            api_key: String::new(),
            model: "whisper-1".into(),
            in_flight: 4,
            timeout_s: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrySettings {
    pub attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetrySettings {
    fn default() -> Self {
        let d = RetryPolicy::default();
        Self {
            attempts: d.attempts,
            base_delay_ms: d.base_delay.as_millis() as u64,
            max_delay_ms: d.max_delay.as_millis() as u64,
        }
    }
}

impl RetrySettings {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.attempts,
            base_delay: Duration::from_millis(self.base_delay_ms),
            max_delay: Duration::from_millis(self.max_delay_ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub clustering: ClusteringConfig,
    pub shot: ShotDetectorConfig,
    pub embedder: EmbedderConfig,
    pub search_k: usize,
    pub chunk_seconds: f64,
    pub min_chunk_seconds: f64,
    pub language_hint: String,
    pub offline: bool,
    pub refresh: bool,
    /// Per-case work directories go beneath this; empty means the case directory itself.
    pub output_dir: PathBuf,
    /// Stub fixtures for offline runs; defaults to `<case_dir>/stubs`.
    pub fixtures_dir: Option<PathBuf>,
    pub decoder: DecoderKind,
    pub decoder_path: PathBuf,
    pub probe_path: PathBuf,
    /// Sidecar launch command; `--stdio` is appended.
    pub sidecar_command: Option<Vec<String>>,
    pub sidecar_read_deadline_s: u64,
    pub llm: LlmSettings,
    pub search: SearchSettings,
    pub fetch: FetchSettings,
    pub transcription: TranscriptionSettings,
    pub retry: RetrySettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            clustering: ClusteringConfig::default(),
            shot: ShotDetectorConfig::default(),
            embedder: EmbedderConfig::default(),
            search_k: DEFAULT_K,
            chunk_seconds: DEFAULT_CHUNK_SECONDS,
            min_chunk_seconds: DEFAULT_MIN_CHUNK_SECONDS,
            language_hint: "auto".into(),
            offline: false,
            refresh: false,
            output_dir: PathBuf::new(),
            fixtures_dir: None,
            decoder: DecoderKind::Builtin,
            decoder_path: PathBuf::from("ffmpeg"),
            probe_path: PathBuf::from("ffprobe"),
            sidecar_command: None,
            sidecar_read_deadline_s: 30,
            llm: LlmSettings::default(),
            search: SearchSettings::default(),
            fetch: FetchSettings::default(),
            transcription: TranscriptionSettings::default(),
            retry: RetrySettings::default(),
        }
    }
}

/// Environment variables that override config keys.
pub const ENV_KEYS: [&str; 6] = [
    "LLM_API_KEY",
    "LLM_API_ENDPOINT",
    "LLM_MODEL",
    "SEARCH_API_KEY",
    "SEARCH_API_ENDPOINT",
    "TRANSCRIBE_API_KEY",
];

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Applies overrides from `lookup` (normally `std::env::var`). Empty values are ignored.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) {
        let get = |k: &str| lookup(k).filter(|v| !v.trim().is_empty());
        if let Some(v) = get("LLM_API_KEY") {
            self.llm.api_key = v;
        }
        if let Some(v) = get("LLM_API_ENDPOINT") {
            self.llm.endpoint = v;
        }
        if let Some(v) = get("LLM_MODEL") {
            self.llm.model = v;
        }
        if let Some(v) = get("SEARCH_API_KEY") {
            self.search.api_key = v;
        }
        if let Some(v) = get("SEARCH_API_ENDPOINT") {
            self.search.endpoint = v;
        }
        if let Some(v) = get("TRANSCRIBE_API_KEY") {
            self.transcription.api_key = v;
        }
    }

    pub fn apply_process_env(&mut self) {
        self.apply_env(|k| std::env::var(k).ok());
    }

    /// Checks every sub-config and normalises the language hint.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.clustering.validate().map_err(|e| invalid(&e))?;
        self.shot.validate().map_err(|e| invalid(&e))?;
        if self.search_k == 0 {
            return Err(ConfigError::Invalid("search_k must be >= 1".into()));
        }
        if !(self.chunk_seconds.is_finite() && self.chunk_seconds > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "chunk_seconds must be > 0, got {}",
                self.chunk_seconds
            )));
        }
        if !(0.0..=self.chunk_seconds).contains(&self.min_chunk_seconds) {
            return Err(ConfigError::Invalid(format!(
                "min_chunk_seconds must be within [0, chunk_seconds], got {}",
                self.min_chunk_seconds
            )));
        }
        if self.retry.attempts == 0 {
            return Err(ConfigError::Invalid("retry.attempts must be >= 1".into()));
        }
        if self.llm.image_max_side == 0 || !(1..=100).contains(&self.llm.jpeg_quality) {
            return Err(ConfigError::Invalid(
                "llm image settings out of range".into(),
            ));
        }
        self.language_hint =
            validate_language_hint(&self.language_hint).map_err(|e| invalid(&e))?;
        Ok(())
    }
}
