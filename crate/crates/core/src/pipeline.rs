//! Case orchestration.
//!
//! ingest, then media processing and evidence retrieval in parallel, then
//! cross-validation, forensic analysis and the report. Each stage's output is
//! cached as JSON in the case work directory and reused unless `refresh` is
//! set. Branch threads only compute; the coordinator does every write.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{
    chunk_audio, transcribe_case, HttpTranscriber, SidecarTranscriber, StubTranscriber,
    TranscribeOptions, TranscriptionClient,
};
use crate::config::{ConfigError, DecoderKind, PipelineConfig, TranscriberKind};
use crate::embed::embed_frames;
use crate::evidence::fetch::{HttpFetcher, StubFetcher};
use crate::evidence::search::{HttpSearch, StubSearch};
use crate::evidence::{
    gather_evidence, load_buffer, save_buffer, EvidenceBuffer, PageFetcher, RetrievalConfig,
    SearchClient,
};
use crate::imageprep::{encode_jpeg, prepare_llm_images, resize_longer_side};
use crate::keyframes::{
    aggregate_case_keyframes, keyframe_file_name, select_shot_keyframes, ManifestEntry,
};
use crate::llm::{HttpLlm, LlmClient, StubLlm};
use crate::media::{
    AudioTrack, BuiltinDecoder, CommandDecoder, DecodeError, MediaDecoder, PcmStream,
    WORKING_MAX_SIDE,
};
use crate::model::{
    validate_case, AudioChunk, Case, CaseError, CrossValidation, Embedding, ForensicAnalysis,
    FrameRef, Keyframe, MediaAsset, MediaKind, Shot, StageOutcome, StageRecord, Transcript,
};
use crate::net::NetworkPolicy;
use crate::report::{assemble_report, stage, write_report, ReportError, ReportInputs};
use crate::shots::{detect_shots, TransitionScorer};
use crate::sidecar::Sidecar;
use crate::verify::{
    run_cross_validation, run_forensic_analysis, ForensicImage, LlmStageConfig, StageResult,
};

pub const METADATA_FILE: &str = "metadata.json";
pub const SHOTS_FILE: &str = "shots.json";
pub const KEYFRAMES_FILE: &str = "keyframes.json";
pub const TRANSCRIPTS_FILE: &str = "transcripts.json";
pub const CROSSVAL_FILE: &str = "crossval.json";
pub const FORENSIC_FILE: &str = "forensic.json";

/// JPEG quality for stored keyframes.
const KEYFRAME_JPEG_QUALITY: u8 = 90;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid case: {0}")]
    Case(#[from] CaseError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot persist {path}: {reason}")]
    Persist { path: String, reason: String },
    #[error(transparent)]
    Report(#[from] ReportError),
}

fn persist_err(path: &Path, reason: impl std::fmt::Display) -> PipelineError {
    PipelineError::Persist {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingested,
    MediaDone,
    EvidenceDone,
    CrossvalDone,
    ForensicDone,
    Reported,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseStatus {
    pub case_id: String,
    pub stage: Stage,
    pub human_review_required: bool,
    pub reasons: Vec<String>,
    pub work_dir: PathBuf,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Ingested => "ingested",
            Stage::MediaDone => "media_done",
            Stage::EvidenceDone => "evidence_done",
            Stage::CrossvalDone => "crossval_done",
            Stage::ForensicDone => "forensic_done",
            Stage::Reported => "reported",
        }
    }
}

impl CaseStatus {
    /// Moves forward only; an earlier stage is ignored.
    fn advance(&mut self, s: Stage) {
        self.stage = self.stage.max(s);
    }

    fn flag(&mut self, reasons: &[String]) {
        for r in reasons {
            if !self.reasons.contains(r) {
                self.reasons.push(r.clone());
            }
        }
        self.human_review_required = !self.reasons.is_empty();
    }
}

/// A client, or the reason it is unavailable.
pub type Slot<T> = Result<Arc<T>, String>;

/// External collaborators for one run.
pub struct Clients {
    pub decoder: Arc<dyn MediaDecoder>,
    pub sidecar: Option<Arc<Sidecar>>,
    pub transcriber: Slot<dyn TranscriptionClient>,
    pub search: Slot<dyn SearchClient>,
    pub fetcher: Slot<dyn PageFetcher>,
    pub llm: Slot<dyn LlmClient>,
    pub notes: Vec<String>,
}

impl Clients {
    /// Stub clients from `<fixtures>` in offline mode, HTTP clients otherwise.
    pub fn from_config(cfg: &PipelineConfig, case_dir: &Path) -> Self {
        let mut notes = Vec::new();
        let decoder: Arc<dyn MediaDecoder> = match cfg.decoder {
            DecoderKind::Builtin => Arc::new(BuiltinDecoder::default()),
            DecoderKind::Command => {
                Arc::new(CommandDecoder::new(&cfg.decoder_path, &cfg.probe_path))
            }
        };
        let sidecar = cfg.sidecar_command.as_ref().and_then(|cmd| {
            match Sidecar::start(cmd, Duration::from_secs(cfg.sidecar_read_deadline_s)) {
                Ok(s) => Some(Arc::new(s)),
                Err(e) => {
                    notes.push(format!("sidecar unavailable: {e}"));
                    None
                }
            }
        });
        let sidecar_transcriber = |sc: &Option<Arc<Sidecar>>| -> Slot<dyn TranscriptionClient> {
            match sc {
                Some(s) => Ok(Arc::new(SidecarTranscriber::new(s.clone()))),
                None => Err("transcription sidecar is not running".into()),
            }
        };

        if cfg.offline {
            let dir = cfg
                .fixtures_dir
                .clone()
                .unwrap_or_else(|| case_dir.join("stubs"));
            let transcriber: Slot<dyn TranscriptionClient> = match cfg.transcription.backend {
                TranscriberKind::Sidecar => sidecar_transcriber(&sidecar),
                TranscriberKind::Http => StubTranscriber::from_dir(&dir)
                    .map(|c| Arc::new(c) as Arc<dyn TranscriptionClient>)
                    .map_err(|e| format!("offline transcription fixture: {e}")),
            };
            return Self {
                decoder,
                transcriber,
                search: StubSearch::from_dir(&dir)
                    .map(|c| Arc::new(c) as Arc<dyn SearchClient>)
                    .map_err(|e| format!("offline search fixture: {e}")),
                fetcher: StubFetcher::from_dir(&dir)
                    .map(|c| Arc::new(c) as Arc<dyn PageFetcher>)
                    .map_err(|e| format!("offline page fixture: {e}")),
                llm: StubLlm::from_dir(&dir)
                    .map(|c| Arc::new(c) as Arc<dyn LlmClient>)
                    .map_err(|e| format!("offline LLM fixture: {e}")),
                sidecar,
                notes,
            };
        }

        let net = NetworkPolicy::online();
        let tr = &cfg.transcription;
        let transcriber: Slot<dyn TranscriptionClient> = match tr.backend {
            TranscriberKind::Sidecar => sidecar_transcriber(&sidecar),
            TranscriberKind::Http => HttpTranscriber::new(
                net,
                &tr.endpoint,
                &tr.api_key,
                &tr.model,
                Duration::from_secs(tr.timeout_s),
            )
            .map(|c| Arc::new(c) as Arc<dyn TranscriptionClient>)
            .map_err(|e| e.to_string()),
        };
        let fetch_timeout = Duration::from_secs(cfg.fetch.timeout_s);
        Self {
            decoder,
            transcriber,
            search: HttpSearch::new(
                net,
                &cfg.search.endpoint,
                &cfg.search.api_key,
                fetch_timeout,
            )
            .map(|c| Arc::new(c) as Arc<dyn SearchClient>)
            .map_err(|e| e.to_string()),
            fetcher: HttpFetcher::new(
                net,
                fetch_timeout,
                Duration::from_millis(cfg.fetch.politeness_ms),
            )
            .map(|c| Arc::new(c) as Arc<dyn PageFetcher>)
            .map_err(|e| e.to_string()),
            llm: HttpLlm::new(
                net,
                &cfg.llm.endpoint,
                &cfg.llm.api_key,
                &cfg.llm.model,
                Duration::from_secs(cfg.llm.timeout_s),
                Duration::from_millis(cfg.llm.min_interval_ms),
            )
            .map(|c| Arc::new(c) as Arc<dyn LlmClient>)
            .map_err(|e| e.to_string()),
            sidecar,
            notes,
        }
    }
}

/// Which stages may compute; the rest only read their caches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Full,
    MediaOnly,
    EvidenceOnly,
    ReportOnly,
}

impl RunMode {
    fn computes_media(self) -> bool {
        matches!(self, RunMode::Full | RunMode::MediaOnly)
    }

    fn computes_evidence(self) -> bool {
        matches!(self, RunMode::Full | RunMode::EvidenceOnly)
    }

    fn writes_report(self) -> bool {
        matches!(self, RunMode::Full | RunMode::ReportOnly)
    }
}

/// A loaded case. `searchable` is false when title and description are empty.
#[derive(Debug, Clone)]
pub struct LoadedCase {
    pub case: Case,
    pub searchable: bool,
}

/// Reads `metadata.json` and every supported media file directly inside
/// `case_dir`, sorted by file name. The directory name is the case id.
pub fn load_case(case_dir: &Path) -> Result<LoadedCase, PipelineError> {
    let io = |source| CaseError::Io {
        path: case_dir.display().to_string(),
        source,
    };
    let dir = case_dir.canonicalize().map_err(io)?;
    let case_id = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("case")
        .to_string();
    let meta_path = dir.join(METADATA_FILE);
    let raw = std::fs::read_to_string(&meta_path).map_err(|source| CaseError::Io {
        path: meta_path.display().to_string(),
        source,
    })?;
    let metadata = serde_json::from_str(&raw).map_err(CaseError::Metadata)?;
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .and_then(MediaKind::from_extension)
                .is_some()
        })
        .collect();
    files.sort();
    let assets = files
        .iter()
        .map(MediaAsset::from_path)
        .collect::<Result<Vec<_>, _>>()?;
    match validate_case(&case_id, metadata, assets) {
        Ok(case) => Ok(LoadedCase {
            case,
            searchable: true,
        }),
        Err(CaseError::EmptyMetadata { case }) => Ok(LoadedCase {
            case: *case,
            searchable: false,
        }),
        Err(e) => Err(e.into()),
    }
}

/// Where a case's caches and report go.
pub fn work_dir(cfg: &PipelineConfig, case_dir: &Path, case_id: &str) -> PathBuf {
    if cfg.output_dir.as_os_str().is_empty() {
        case_dir.to_path_buf()
    } else {
        cfg.output_dir.join(case_id)
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| persist_err(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| persist_err(path, e))?;
    bytes.push(b'\n');
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(|e| persist_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| persist_err(path, e))
}

/// `None` when absent or unreadable; an unreadable cache is recomputed.
fn read_json<T: DeserializeOwned>(path: &Path) -> Option<T> {
    let raw = std::fs::read(path).ok()?;
    match serde_json::from_slice(&raw) {
        Ok(v) => Some(v),
        Err(e) => {
            tracing::warn!(path = %path.display(), error = %e, "ignoring unreadable cache");
            None
        }
    }
}

/// Contents of `keyframes.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyframeCache {
    pub keyframes: Vec<ManifestEntry>,
    #[serde(default)]
    pub notes: Vec<String>,
    #[serde(default)]
    pub human_review: Vec<String>,
}

/// Contents of `transcripts.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TranscriptCache {
    pub transcripts: Vec<Transcript>,
    #[serde(default)]
    pub notes: Vec<String>,
}

struct KeyframeRun {
    cache: KeyframeCache,
    images: Vec<RgbImage>,
    shots: Vec<Shot>,
}

enum Computed<T> {
    Cached(T),
    Fresh(T),
    /// Not computed; the reason goes into the stage record.
    Unavailable(StageOutcome, String),
}

/// Decode failure text without the machine-specific path.
fn decode_reason(asset: &MediaAsset, e: &DecodeError) -> String {
    let file = asset
        .path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_else(|| asset.asset_id.clone());
    match e {
        DecodeError::Failure { reason, .. } => format!("{file}: {reason}"),
        other => format!("{file}: {other}"),
    }
}

fn decode_still(asset: &MediaAsset) -> Result<RgbImage, String> {
    let img = image::open(&asset.path)
        .map_err(|e| e.to_string())?
        .to_rgb8();
    if img.width().max(img.height()) > WORKING_MAX_SIDE {
        Ok(resize_longer_side(&img, WORKING_MAX_SIDE))
    } else {
        Ok(img)
    }
}

fn compute_keyframes(case: &Case, cfg: &PipelineConfig, clients: &Clients) -> KeyframeRun {
    let seed = cfg.clustering.seed_for(&case.case_id);
    let mut cache = KeyframeCache::default();
    let mut shots_out = Vec::new();
    let mut pool: Vec<(Keyframe, RgbImage, Embedding)> = Vec::new();
    let scorer = clients
        .sidecar
        .as_deref()
        .map(|s| s as &dyn TransitionScorer);

    for asset in &case.assets {
        let id = &asset.asset_id;
        match asset.kind {
            MediaKind::Video => {
                let seq = match clients
                    .decoder
                    .decode_video(id, &asset.path, cfg.shot.sample_fps)
                {
                    Ok(s) if s.is_empty() => {
                        cache
                            .human_review
                            .push(format!("decode failure: {id}: no frames decoded"));
                        continue;
                    }
                    Ok(s) => s,
                    Err(e) => {
                        cache
                            .human_review
                            .push(format!("decode failure: {}", decode_reason(asset, &e)));
                        continue;
                    }
                };
                let shots = detect_shots(&seq, &cfg.shot, scorer).unwrap_or_else(|e| {
                    cache.notes.push(format!(
                        "{id}: shot detection failed ({e}); treating as one shot"
                    ));
                    vec![Shot {
                        asset_id: id.clone(),
                        start_frame: 0,
                        end_frame: seq.len() - 1,
                    }]
                });
                let images: Vec<&RgbImage> = seq.images().collect();
                let embeddings =
                    match embed_frames(&images, &cfg.embedder, clients.sidecar.as_deref()) {
                        Ok(e) => e,
                        Err(e) => {
                            cache.notes.push(format!("{id}: embedding failed: {e}"));
                            continue;
                        }
                    };
                for shot in &shots {
                    let range = shot.range();
                    let frames: Vec<FrameRef> = seq.frames[range.clone()]
                        .iter()
                        .map(|(f, _)| f.clone())
                        .collect();
                    match select_shot_keyframes(
                        shot,
                        &frames,
                        &embeddings[range.clone()],
                        &cfg.clustering,
                        seed,
                    ) {
                        Ok(kfs) => {
                            for kf in kfs {
                                let pos = range
                                    .clone()
                                    .find(|&p| seq.frames[p].0.frame_index == kf.frame.frame_index)
                                    .expect("keyframe comes from its shot");
                                pool.push((kf, seq.frames[pos].1.clone(), embeddings[pos].clone()));
                            }
                        }
                        Err(e) => cache.notes.push(format!(
                            "{id}: keyframe selection failed for shot {}..{}: {e}",
                            shot.start_frame, shot.end_frame
                        )),
                    }
                }
                shots_out.extend(shots);
            }
            MediaKind::Image => {
                let img = match decode_still(asset) {
                    Ok(i) => i,
                    Err(e) => {
                        let file = asset.path.file_name().unwrap_or_default().to_string_lossy();
                        cache
                            .human_review
                            .push(format!("decode failure: {file}: {e}"));
                        continue;
                    }
                };
                let emb = match embed_frames(&[&img], &cfg.embedder, clients.sidecar.as_deref()) {
                    Ok(mut v) => v.remove(0),
                    Err(e) => {
                        cache.notes.push(format!("{id}: embedding failed: {e}"));
                        continue;
                    }
                };
                let shot = Shot {
                    asset_id: id.clone(),
                    start_frame: 0,
                    end_frame: 0,
                };
                let kf = Keyframe {
                    frame: FrameRef {
                        asset_id: id.clone(),
                        frame_index: 0,
                        timestamp_s: 0.0,
                    },
                    shot: shot.clone(),
                    cluster_id: 0,
                    distance_to_centroid: 0.0,
                };
                shots_out.push(shot);
                pool.push((kf, img, emb));
            }
        }
    }

    let mut images = Vec::new();
    if !pool.is_empty() {
        let kfs: Vec<Keyframe> = pool.iter().map(|(k, _, _)| k.clone()).collect();
        let embs: Vec<Embedding> = pool.iter().map(|(_, _, e)| e.clone()).collect();
        let selected =
            aggregate_case_keyframes(&kfs, &embs, &cfg.clustering, seed).unwrap_or_else(|e| {
                cache.notes.push(format!(
                    "case-level aggregation failed ({e}); keeping the first keyframes"
                ));
                kfs.iter()
                    .cloned()
                    .enumerate()
                    .take(cfg.clustering.case_budget)
                    .collect()
            });
        for (i, kf) in selected {
            cache
                .keyframes
                .push(ManifestEntry::from_keyframe(&kf, keyframe_file_name(&kf)));
            images.push(pool[i].1.clone());
        }
    }
    if cache.keyframes.is_empty() {
        cache.notes.push("no keyframes could be extracted".into());
    }
    KeyframeRun {
        cache,
        images,
        shots: shots_out,
    }
}

fn compute_transcripts(
    case: &Case,
    cfg: &PipelineConfig,
    clients: &Clients,
) -> Computed<TranscriptCache> {
    let client = match &clients.transcriber {
        Ok(c) => c,
        Err(why) => return Computed::Unavailable(StageOutcome::Skipped, why.clone()),
    };
    let mut notes = Vec::new();
    let mut streams: Vec<(String, PcmStream)> = Vec::new();
    for asset in case.videos() {
        match clients.decoder.extract_audio(&asset.path) {
            Ok(AudioTrack::Pcm(p)) => streams.push((asset.asset_id.clone(), p)),
            Ok(AudioTrack::NoAudio) => notes.push(format!("{}: no audio track", asset.asset_id)),
            Err(e) => notes.push(format!(
                "audio extraction failed: {}",
                decode_reason(asset, &e)
            )),
        }
    }
    let mut chunked: Vec<(Vec<AudioChunk>, &PcmStream)> = Vec::new();
    for (id, pcm) in &streams {
        match chunk_audio(id, pcm, cfg.chunk_seconds, cfg.min_chunk_seconds) {
            Ok(c) if c.is_empty() => notes.push(format!("{id}: audio shorter than one chunk")),
            Ok(c) => chunked.push((c, pcm)),
            Err(e) => notes.push(format!("{id}: {e}")),
        }
    }
    let opts = TranscribeOptions {
        language_hint: cfg.language_hint.clone(),
        in_flight: cfg.transcription.in_flight,
        retry: cfg.retry.policy(),
    };
    match transcribe_case(&chunked, client.as_ref(), &opts) {
        Ok(transcripts) => {
            for t in &transcripts {
                let failed = t.segments.iter().filter(|s| s.error.is_some()).count();
                if failed > 0 {
                    notes.push(format!(
                        "{}: {failed} chunk(s) failed to transcribe",
                        t.asset_id
                    ));
                }
            }
            Computed::Fresh(TranscriptCache { transcripts, notes })
        }
        Err(e) => {
            Computed::Unavailable(StageOutcome::Failed, format!("transcription aborted: {e}"))
        }
    }
}

fn retrieval_config(cfg: &PipelineConfig) -> RetrievalConfig {
    RetrievalConfig {
        k: cfg.search_k,
        in_flight: cfg.fetch.in_flight,
        size_cap: cfg.fetch.size_cap,
        retry: cfg.retry.policy(),
    }
}

fn compute_evidence(
    loaded: &LoadedCase,
    cfg: &PipelineConfig,
    clients: &Clients,
) -> Computed<EvidenceBuffer> {
    if !loaded.searchable {
        return Computed::Unavailable(
            StageOutcome::Skipped,
            "title and description are both empty".into(),
        );
    }
    let fetcher = match &clients.fetcher {
        Ok(f) => f,
        Err(why) => return Computed::Unavailable(StageOutcome::Failed, why.clone()),
    };
    let search = clients.search.as_ref().ok().map(|s| s.as_ref());
    let mut buffer = gather_evidence(
        &loaded.case,
        search,
        fetcher.as_ref(),
        &retrieval_config(cfg),
    );
    if let Err(why) = &clients.search {
        buffer.notes.push(why.clone());
    }
    Computed::Fresh(buffer)
}

fn record(stage: &str, outcome: StageOutcome, notes: Vec<String>) -> StageRecord {
    StageRecord {
        stage: stage.to_string(),
        outcome,
        notes,
    }
}

fn load_keyframe_images(work: &Path, entries: &[ManifestEntry]) -> Result<Vec<RgbImage>, String> {
    entries
        .iter()
        .map(|e| {
            image::open(work.join(&e.file))
                .map(|i| i.to_rgb8())
                .map_err(|err| format!("{}: {err}", e.file))
        })
        .collect()
}

/// Runs every stage for one case.
pub fn run_case(
    case_dir: &Path,
    cfg: &PipelineConfig,
    clients: &Clients,
) -> Result<CaseStatus, PipelineError> {
    run_case_with(case_dir, cfg, clients, RunMode::Full)
}

/// Runs the stages `mode` allows; others are served from cache when present.
pub fn run_case_with(
    case_dir: &Path,
    cfg: &PipelineConfig,
    clients: &Clients,
    mode: RunMode,
) -> Result<CaseStatus, PipelineError> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    let cfg = &cfg;
    let loaded = load_case(case_dir)?;
    let case = &loaded.case;
    let work = work_dir(cfg, case_dir, &case.case_id);
    std::fs::create_dir_all(&work).map_err(|e| persist_err(&work, e))?;

    let mut status = CaseStatus {
        case_id: case.case_id.clone(),
        stage: Stage::Ingested,
        human_review_required: false,
        reasons: Vec::new(),
        work_dir: work.clone(),
    };
    let mut stages = Vec::new();
    let mut ingest_notes = clients.notes.clone();
    if !loaded.searchable {
        ingest_notes.push(
            CaseError::EmptyMetadata {
                case: Box::new(case.clone()),
            }
            .to_string(),
        );
    }
    stages.push(record(stage::INGEST, StageOutcome::Completed, ingest_notes));

    let refresh = cfg.refresh;
    let kf_path = work.join(KEYFRAMES_FILE);
    let tr_path = work.join(TRANSCRIPTS_FILE);
    let cached_kf: Option<KeyframeCache> = if refresh { None } else { read_json(&kf_path) };
    let cached_tr: Option<TranscriptCache> = if refresh { None } else { read_json(&tr_path) };
    let cached_ev = if refresh {
        None
    } else {
        load_buffer(&work).unwrap_or_else(|e| {
            tracing::warn!(error = %e, "ignoring unreadable evidence cache");
            None
        })
    };

    // The two independent branches.
    let (kf_result, tr_result, ev_result) = std::thread::scope(|s| {
        let media = s.spawn(|| {
            let kf = match cached_kf {
                Some(c) => Computed::Cached((c, None)),
                None if mode.computes_media() => {
                    let run = compute_keyframes(case, cfg, clients);
                    Computed::Fresh((run.cache, Some((run.images, run.shots))))
                }
                None => Computed::Unavailable(StageOutcome::Skipped, "no cached output".into()),
            };
            let tr = match cached_tr {
                Some(c) => Computed::Cached(c),
                None if mode.computes_media() => compute_transcripts(case, cfg, clients),
                None => Computed::Unavailable(StageOutcome::Skipped, "no cached output".into()),
            };
            (kf, tr)
        });
        let evidence = s.spawn(|| match cached_ev {
            Some(b) => Computed::Cached(b),
            None if mode.computes_evidence() => compute_evidence(&loaded, cfg, clients),
            None => Computed::Unavailable(StageOutcome::Skipped, "no cached output".into()),
        });
        let (kf, tr) = media.join().expect("media branch panicked");
        (kf, tr, evidence.join().expect("evidence branch panicked"))
    });

    // Media results.
    let mut media_fresh = false;
    let keyframes: Option<KeyframeCache> = match kf_result {
        Computed::Cached((c, _)) => Some(c),
        Computed::Fresh((c, extra)) => {
            media_fresh = true;
            if let Some((images, shots)) = extra {
                write_json(&work.join(SHOTS_FILE), &shots)?;
                let kf_dir = work.join("keyframes");
                std::fs::create_dir_all(&kf_dir).map_err(|e| persist_err(&kf_dir, e))?;
                for (entry, img) in c.keyframes.iter().zip(&images) {
                    let path = work.join(&entry.file);
                    let jpeg = encode_jpeg(img, KEYFRAME_JPEG_QUALITY)
                        .map_err(|e| persist_err(&path, e))?;
                    std::fs::write(&path, jpeg).map_err(|e| persist_err(&path, e))?;
                }
            }
            write_json(&kf_path, &c)?;
            Some(c)
        }
        Computed::Unavailable(outcome, why) => {
            stages.push(record(stage::KEYFRAMES, outcome, vec![why]));
            None
        }
    };
    if let Some(c) = &keyframes {
        status.flag(&c.human_review);
        let mut notes = c.human_review.clone();
        notes.extend(c.notes.iter().cloned());
        let outcome = if c.keyframes.is_empty() {
            StageOutcome::Failed
        } else {
            StageOutcome::Completed
        };
        stages.push(record(stage::KEYFRAMES, outcome, notes));
    }
    let transcripts: Option<TranscriptCache> = match tr_result {
        Computed::Cached(c) => Some(c),
        Computed::Fresh(c) => {
            media_fresh = true;
            write_json(&tr_path, &c)?;
            Some(c)
        }
        Computed::Unavailable(outcome, why) => {
            stages.push(record(stage::TRANSCRIPTION, outcome, vec![why]));
            None
        }
    };
    if let Some(c) = &transcripts {
        stages.push(record(
            stage::TRANSCRIPTION,
            StageOutcome::Completed,
            c.notes.clone(),
        ));
    }
    if keyframes.is_some() || transcripts.is_some() {
        status.advance(Stage::MediaDone);
    }

    // Evidence results.
    let mut evidence_fresh = false;
    let evidence: Option<EvidenceBuffer> = match ev_result {
        Computed::Cached(b) => Some(b),
        Computed::Fresh(b) => {
            evidence_fresh = true;
            save_buffer(&work, &b).map_err(|e| persist_err(&work, e))?;
            Some(b)
        }
        Computed::Unavailable(outcome, why) => {
            stages.push(record(stage::EVIDENCE, outcome, vec![why]));
            None
        }
    };
    if let Some(b) = &evidence {
        stages.push(record(
            stage::EVIDENCE,
            StageOutcome::Completed,
            b.notes.clone(),
        ));
        status.advance(Stage::EvidenceDone);
    }

    if matches!(mode, RunMode::MediaOnly | RunMode::EvidenceOnly) {
        return Ok(status);
    }

    let llm_cfg = LlmStageConfig {
        retry: cfg.retry.policy(),
        max_source_chars: cfg.llm.max_source_chars,
    };

    // Cross-validation.
    let cv_path = work.join(CROSSVAL_FILE);
    let mut cv_fresh = false;
    let cached_cv: Option<StageResult<CrossValidation>> = if refresh || evidence_fresh {
        None
    } else {
        read_json(&cv_path)
    };
    let cv_result: Result<StageResult<CrossValidation>, String> = match (cached_cv, &evidence) {
        (Some(c), _) => Ok(c),
        (None, None) => Err("no evidence buffer".into()),
        (None, Some(_)) if mode == RunMode::ReportOnly => Err("no cached output".into()),
        (None, Some(buffer)) => match &clients.llm {
            Err(why) => {
                let reason = format!("cross-validation: LLM unavailable: {why}");
                status.flag(std::slice::from_ref(&reason));
                Err(reason)
            }
            Ok(llm) => match run_cross_validation(buffer, llm.as_ref(), &llm_cfg) {
                Ok(r) => {
                    write_json(&cv_path, &r)?;
                    cv_fresh = true;
                    Ok(r)
                }
                Err(e) => {
                    let reason = format!("cross-validation: {e}");
                    status.flag(std::slice::from_ref(&reason));
                    Err(reason)
                }
            },
        },
    };
    let cross_validation: Option<CrossValidation> = match cv_result {
        Ok(r) => {
            status.flag(&r.human_review);
            let mut notes = r.human_review.clone();
            notes.extend(r.notes.iter().cloned());
            let outcome = if r.value.is_some() {
                StageOutcome::Completed
            } else {
                StageOutcome::Failed
            };
            stages.push(record(stage::CROSS_VALIDATION, outcome, notes));
            r.value
        }
        Err(why) => {
            stages.push(record(
                stage::CROSS_VALIDATION,
                StageOutcome::Skipped,
                vec![why],
            ));
            None
        }
    };
    if cross_validation.is_some() {
        status.advance(Stage::CrossvalDone);
    }

    // Forensic analysis.
    let fo_path = work.join(FORENSIC_FILE);
    let stale = refresh || cv_fresh || media_fresh;
    let cached_fo: Option<StageResult<ForensicAnalysis>> =
        if stale { None } else { read_json(&fo_path) };
    let transcript_list: &[Transcript] = transcripts
        .as_ref()
        .map(|t| t.transcripts.as_slice())
        .unwrap_or_default();
    let kf_entries: &[ManifestEntry] = keyframes
        .as_ref()
        .map(|k| k.keyframes.as_slice())
        .unwrap_or_default();
    let fo_result: Result<StageResult<ForensicAnalysis>, String> =
        match (cached_fo, &cross_validation) {
            (Some(c), _) => Ok(c),
            (None, None) => Err("cross-validation output is absent".into()),
            (None, Some(_)) if kf_entries.is_empty() => Err("no keyframes to analyse".into()),
            (None, Some(_)) if mode == RunMode::ReportOnly => Err("no cached output".into()),
            (None, Some(cv)) => match &clients.llm {
                Err(why) => {
                    let reason = format!("forensic analysis: LLM unavailable: {why}");
                    status.flag(std::slice::from_ref(&reason));
                    Err(reason)
                }
                Ok(llm) => {
                    let images = load_keyframe_images(&work, kf_entries)
                        .and_then(|imgs| {
                            let refs: Vec<&RgbImage> = imgs.iter().collect();
                            prepare_llm_images(&refs, cfg.llm.image_max_side, cfg.llm.jpeg_quality)
                                .map_err(|e| e.to_string())
                        })
                        .map(|prepared| {
                            kf_entries
                                .iter()
                                .zip(prepared)
                                .map(|(e, p)| ForensicImage {
                                    label: format!("{} at {:.2} s", e.asset_id, e.timestamp_s),
                                    base64_jpeg: p.base64,
                                })
                                .collect::<Vec<_>>()
                        });
                    match images {
                        Err(e) => Err(format!("keyframe images unreadable: {e}")),
                        Ok(images) => match run_forensic_analysis(
                            &images,
                            cv,
                            transcript_list,
                            llm.as_ref(),
                            &llm_cfg,
                        ) {
                            Ok(r) => {
                                write_json(&fo_path, &r)?;
                                Ok(r)
                            }
                            Err(e) => {
                                let reason = format!("forensic analysis: {e}");
                                status.flag(std::slice::from_ref(&reason));
                                Err(reason)
                            }
                        },
                    }
                }
            },
        };
    let forensic: Option<ForensicAnalysis> = match fo_result {
        Ok(r) => {
            status.flag(&r.human_review);
            let mut notes = r.human_review.clone();
            notes.extend(r.notes.iter().cloned());
            let outcome = if r.value.is_some() {
                StageOutcome::Completed
            } else {
                StageOutcome::Failed
            };
            stages.push(record(stage::FORENSIC, outcome, notes));
            r.value
        }
        Err(why) => {
            stages.push(record(stage::FORENSIC, StageOutcome::Skipped, vec![why]));
            None
        }
    };
    if forensic.is_some() {
        status.advance(Stage::ForensicDone);
    }

    if mode.writes_report() {
        let kf_list: Vec<Keyframe> = kf_entries.iter().map(ManifestEntry::to_keyframe).collect();
        let report = assemble_report(&ReportInputs {
            case_id: &case.case_id,
            metadata: &case.metadata,
            cross_validation: cross_validation.as_ref(),
            forensic: forensic.as_ref(),
            transcripts: transcript_list,
            evidence: evidence.as_ref(),
            keyframes: &kf_list,
            stages: &stages,
            human_review: &status.reasons,
        });
        write_report(&work, &report)?;
        status.advance(Stage::Reported);
    }
    Ok(status)
}
