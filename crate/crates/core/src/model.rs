//! Domain types shared across the pipeline stages.
//!
//! Everything here is plain data: construction, validation and serde shape.
//! JSON field names follow the on-disk formats (case `metadata.json`, stage
//! caches and `report.json`).

use std::fmt;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Exact content marker for a source that could not be crawled.
pub const FETCH_FAILED: &str = "Failed to fetch the page.";

/// Date value used when a source carries no publication date.
pub const DATE_NOT_AVAILABLE: &str = "Not available";

/// Case metadata as delivered in `<case_id>/metadata.json`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseMetadata {
    #[serde(rename = "location", default)]
    pub location_hint: String,
    #[serde(rename = "violence level", default)]
    pub violence_level: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "media link", default)]
    pub media_link: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub category: String,
}

impl CaseMetadata {
    /// Retrieval needs at least one of title/description.
    pub fn has_searchable_text(&self) -> bool {
        !self.title.trim().is_empty() || !self.description.trim().is_empty()
    }

    pub fn media_link(&self) -> Option<&str> {
        let link = self.media_link.trim();
        (!link.is_empty()).then_some(link)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MediaKind {
    Video,
    Image,
}

impl MediaKind {
    /// Maps a file extension (case-insensitive) to a media kind.
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "mp4" => Some(MediaKind::Video),
            "jpg" | "jpeg" | "png" => Some(MediaKind::Image),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaAsset {
    pub asset_id: String,
    pub kind: MediaKind,
    pub path: PathBuf,
    /// Known once the container has been probed; always `None` for images.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
}

impl MediaAsset {
    /// Builds an asset from a file path, deriving kind from the extension and
    /// the id from the file stem.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, CaseError> {
        let path = path.as_ref();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
        let kind = MediaKind::from_extension(ext)
            .ok_or_else(|| CaseError::UnsupportedMedia(path.display().to_string()))?;
        let asset_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        Ok(Self {
            asset_id,
            kind,
            path: path.to_path_buf(),
            duration_s: None,
        })
    }
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("case has no media assets")]
    EmptyCase,
    #[error("unsupported media file: {0}")]
    UnsupportedMedia(String),
    #[error("invalid asset {asset_id}: {reason}")]
    InvalidAsset { asset_id: String, reason: String },
    #[error("duplicate asset id {0}")]
    DuplicateAsset(String),
    /// Title and description are both empty. The case is otherwise valid and
    /// carried along so the caller can continue without retrieval.
    #[error("title and description are both empty; retrieval cannot run")]
    EmptyMetadata { case: Box<Case> },
    #[error("cannot read case directory {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed metadata.json: {0}")]
    Metadata(#[from] serde_json::Error),
}

/// One verification job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub metadata: CaseMetadata,
    pub assets: Vec<MediaAsset>,
}

impl Case {
    pub fn videos(&self) -> impl Iterator<Item = &MediaAsset> {
        self.assets.iter().filter(|a| a.kind == MediaKind::Video)
    }

    pub fn images(&self) -> impl Iterator<Item = &MediaAsset> {
        self.assets.iter().filter(|a| a.kind == MediaKind::Image)
    }
}

/// Checks a case before any processing.
///
/// Asset kinds are re-derived from the file extension so a mislabelled kind
/// cannot reach the decoders.
pub fn validate_case(
    case_id: &str,
    metadata: CaseMetadata,
    assets: Vec<MediaAsset>,
) -> Result<Case, CaseError> {
    if assets.is_empty() {
        return Err(CaseError::EmptyCase);
    }
    let mut normalized = Vec::with_capacity(assets.len());
    let mut seen = std::collections::BTreeSet::new();
    for mut asset in assets {
        let ext = asset
            .path
            .extension()
            .and_then(|e| e.to_str())
            .unwrap_or("");
        asset.kind = MediaKind::from_extension(ext)
            .ok_or_else(|| CaseError::UnsupportedMedia(asset.path.display().to_string()))?;
        match (asset.kind, asset.duration_s) {
            (MediaKind::Image, Some(_)) => {
                return Err(CaseError::InvalidAsset {
                    asset_id: asset.asset_id,
                    reason: "images carry no duration".into(),
                })
            }
            (MediaKind::Video, Some(d)) if !(d.is_finite() && d > 0.0) => {
                return Err(CaseError::InvalidAsset {
                    asset_id: asset.asset_id,
                    reason: format!("video duration must be positive, got {d}"),
                })
            }
            _ => {}
        }
        if !seen.insert(asset.asset_id.clone()) {
            return Err(CaseError::DuplicateAsset(asset.asset_id));
        }
        normalized.push(asset);
    }
    let case = Case {
        case_id: case_id.to_string(),
        metadata,
        assets: normalized,
    };
    if !case.metadata.has_searchable_text() {
        return Err(CaseError::EmptyMetadata {
            case: Box::new(case),
        });
    }
    Ok(case)
}

/// A sampled frame position within one asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    pub asset_id: String,
    /// Index in the native (undecimated) frame numbering.
    pub frame_index: u64,
    pub timestamp_s: f64,
}

/// A contiguous, inclusive range of sampled frames of one asset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub asset_id: String,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Shot {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn range(&self) -> std::ops::RangeInclusive<usize> {
        self.start_frame..=self.end_frame
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum EmbeddingError {
    #[error("embedding contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("empty embedding vector")]
    Empty,
}

/// A feature vector tagged with the extractor that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    vector: Vec<f64>,
    extractor_id: String,
}

impl Embedding {
    pub fn new(vector: Vec<f64>, extractor_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        if vector.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(pos) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos));
        }
        Ok(Self {
            vector,
            extractor_id: extractor_id.into(),
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn extractor_id(&self) -> &str {
        &self.extractor_id
    }

    /// L2-normalizes in place; zero vectors are left untouched.
    pub fn normalize(&mut self) {
        let norm = self.vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            self.vector.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub frame: FrameRef,
    pub shot: Shot,
    pub cluster_id: usize,
    pub distance_to_centroid: f64,
}

/// Location of a chunk's samples inside the asset's PCM stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcmSpan {
    pub sample_rate: u32,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioChunk {
    pub asset_id: String,
    pub index: usize,
    pub start_s: f64,
    pub end_s: f64,
    pub samples: PcmSpan,
}

impl AudioChunk {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start_s: f64,
    pub end_s: f64,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub asset_id: String,
    pub language: String,
    pub segments: Vec<TranscriptSegment>,
}

impl Transcript {
    pub fn text(&self) -> String {
        self.segments
            .iter()
            .map(|s| s.text.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// One crawled web source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub link: String,
    pub date: String,
    pub title: String,
    pub content: String,
    pub rank: usize,
    #[serde(default)]
    pub exact_match: bool,
}

impl SourceDocument {
    pub fn fetch_failed(&self) -> bool {
        self.content == FETCH_FAILED
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("date span is reversed: {earliest} > {latest}")]
pub struct ReversedSpan {
    pub earliest: NaiveDate,
    pub latest: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateSpan {
    earliest: NaiveDate,
    latest: NaiveDate,
}

impl DateSpan {
    pub fn new(earliest: NaiveDate, latest: NaiveDate) -> Result<Self, ReversedSpan> {
        if earliest > latest {
            return Err(ReversedSpan { earliest, latest });
        }
        Ok(Self { earliest, latest })
    }

    /// Builds a span from two dates in either order.
    pub fn ordered(a: NaiveDate, b: NaiveDate) -> Self {
        Self {
            earliest: a.min(b),
            latest: a.max(b),
        }
    }

    pub fn single(day: NaiveDate) -> Self {
        Self::ordered(day, day)
    }

    pub fn earliest(&self) -> NaiveDate {
        self.earliest
    }

    pub fn latest(&self) -> NaiveDate {
        self.latest
    }

    pub fn days(&self) -> i64 {
        (self.latest - self.earliest).num_days()
    }
}

impl fmt::Display for DateSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.earliest == self.latest {
            write!(f, "{}", self.earliest.format("%d/%m/%Y"))
        } else {
            write!(
                f,
                "{} - {}",
                self.earliest.format("%d/%m/%Y"),
                self.latest.format("%d/%m/%Y")
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConsensusLabel {
    Consensus,
    Partial,
    #[serde(rename = "Non-verifiable")]
    NonVerifiable,
}

impl ConsensusLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConsensusLabel::Consensus => "Consensus",
            ConsensusLabel::Partial => "Partial",
            ConsensusLabel::NonVerifiable => "Non-verifiable",
        }
    }

    /// Reads the label vocabulary models use ("Yes" stands for consensus).
    pub fn from_model_text(text: &str) -> Option<Self> {
        let t = text.trim().trim_matches('"').to_ascii_lowercase();
        let t = t.replace(['-', '_'], " ");
        match t.as_str() {
            "yes" | "consensus" => Some(ConsensusLabel::Consensus),
            "partial" => Some(ConsensusLabel::Partial),
            "non verifiable" | "nonverifiable" | "no" | "not verifiable" => {
                Some(ConsensusLabel::NonVerifiable)
            }
            _ => None,
        }
    }
}

impl fmt::Display for ConsensusLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        if !(lat.is_finite() && (-90.0..=90.0).contains(&lat)) {
            return Err(GeoError::Latitude(lat));
        }
        if !(lon.is_finite() && (-180.0..=180.0).contains(&lon)) {
            return Err(GeoError::Longitude(lon));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Parsed and rule-checked output of the cross-validation prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidation {
    pub location_name: String,
    #[serde(default)]
    pub coordinates: Option<GeoPoint>,
    /// Coordinates exactly as the model wrote them.
    #[serde(default)]
    pub coordinates_text: String,
    #[serde(default)]
    pub date_span: Option<DateSpan>,
    /// Date field exactly as the model wrote it.
    #[serde(default)]
    pub date_text: String,
    pub consensus: ConsensusLabel,
    pub notes: String,
    pub consensus_about: String,
    pub conflicts: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetadataValidation {
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub event: String,
    #[serde(default)]
    pub people: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForensicAnalysis {
    #[serde(rename = "metadata-validation")]
    pub metadata_validation: MetadataValidation,
    pub authenticity: String,
    #[serde(rename = "auth-evidence")]
    pub auth_evidence: String,
    #[serde(rename = "synt-type")]
    pub synt_type: String,
    pub other: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOutcome {
    Completed,
    Skipped,
    Failed,
}

/// Per-stage entry in the report: what ran and why something did not.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub outcome: StageOutcome,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub case_id: String,
    pub metadata: CaseMetadata,
    pub cross_validation: Option<CrossValidation>,
    pub forensic: Option<ForensicAnalysis>,
    pub transcripts: Vec<Transcript>,
    pub sources: Vec<SourceDocument>,
    pub keyframe_manifest: Vec<Keyframe>,
    pub human_review_required: bool,
    pub human_review_reason: String,
    pub stages: Vec<StageRecord>,
}
