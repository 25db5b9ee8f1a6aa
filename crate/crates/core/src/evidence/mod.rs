//! Web evidence retrieval: query building, ranked search, crawling and the
//! on-disk evidence buffer.

pub mod fetch;
pub mod keywords;
pub mod search;

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Case, SourceDocument, DATE_NOT_AVAILABLE};
use crate::net::RetryPolicy;

pub use fetch::{fetch_content, PageFetcher};
pub use keywords::{extract_keywords, SearchQuery};
pub use search::{search, RankedResult, SearchClient, SearchResult};

pub const EVIDENCE_FILE: &str = "evidence.json";
pub const EVIDENCE_META_FILE: &str = "evidence.meta.json";
pub const NO_SOURCES_NOTE: &str = "no external sources";

#[derive(Debug, Error)]
pub enum EvidenceError {
    #[error("title and description contain no usable keywords")]
    NoKeywords,
    #[error("cannot write evidence buffer {path}: {source}")]
    Persist {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unreadable evidence cache {path}: {reason}")]
    Corrupt { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceBuffer {
    pub case_id: String,
    /// The case's own media link, fetched like any source; rank 0.
    pub source_link: Option<SourceDocument>,
    /// Search-derived sources, ranks 1..n.
    pub documents: Vec<SourceDocument>,
    pub fetched_at: DateTime<Utc>,
    pub query: Option<SearchQuery>,
    /// Retrieval problems worth surfacing in the report.
    pub notes: Vec<String>,
}

impl EvidenceBuffer {
    /// Media link first, then ranked sources.
    pub fn all_documents(&self) -> impl Iterator<Item = &SourceDocument> {
        self.source_link.iter().chain(self.documents.iter())
    }

    pub fn has_external_sources(&self) -> bool {
        !self.documents.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    pub k: usize,
    pub in_flight: usize,
    pub size_cap: usize,
    pub retry: RetryPolicy,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: search::DEFAULT_K,
            in_flight: 4,
            size_cap: fetch::DEFAULT_SIZE_CAP,
            retry: RetryPolicy::default(),
        }
    }
}

struct Job {
    link: String,
    title: String,
    date: Option<String>,
    rank: usize,
    exact_match: bool,
}

fn fetch_all(
    jobs: &[Job],
    fetcher: &dyn PageFetcher,
    cfg: &RetrievalConfig,
) -> Vec<SourceDocument> {
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<SourceDocument>>> = Mutex::new(vec![None; jobs.len()]);
    let workers = cfg.in_flight.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let page = fetch_content(&job.link, fetcher, cfg.size_cap);
                let date = job
                    .date
                    .clone()
                    .filter(|d| !d.trim().is_empty())
                    .or(page.meta_date)
                    .unwrap_or_else(|| DATE_NOT_AVAILABLE.to_string());
                out.lock().expect("fetch results")[i] = Some(SourceDocument {
                    link: job.link.clone(),
                    date,
                    title: job.title.clone(),
                    content: page.content,
                    rank: job.rank,
                    exact_match: job.exact_match,
                });
            });
        }
    });
    out.into_inner()
        .expect("fetch results")
        .into_iter()
        .map(|d| d.expect("every job produces a document"))
        .collect()
}

/// Crawls every ranked result (and the media link, if any) into a buffer.
pub fn build_evidence_buffer(
    case_id: &str,
    media_link: Option<&str>,
    results: &[RankedResult],
    fetcher: &dyn PageFetcher,
    cfg: &RetrievalConfig,
) -> EvidenceBuffer {
    let mut jobs: Vec<Job> = Vec::new();
    if let Some(link) = media_link {
        jobs.push(Job {
            link: link.to_string(),
            title: "Source link".into(),
            date: None,
            rank: 0,
            exact_match: false,
        });
    }
    jobs.extend(results.iter().take(cfg.k).map(|r| Job {
        link: r.result.link.clone(),
        title: r.result.title.clone(),
        date: r.result.date.clone(),
        rank: r.rank,
        exact_match: r.exact_match,
    }));
    let mut docs = fetch_all(&jobs, fetcher, cfg);
    let source_link = if media_link.is_some() {
        Some(docs.remove(0))
    } else {
        None
    };
    docs.sort_by_key(|d| d.rank);
    let mut notes = Vec::new();
    if docs.is_empty() {
        notes.push(NO_SOURCES_NOTE.to_string());
    }
    EvidenceBuffer {
        case_id: case_id.to_string(),
        source_link,
        documents: docs,
        fetched_at: Utc::now(),
        query: None,
        notes,
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BufferMeta {
    case_id: String,
    fetched_at: DateTime<Utc>,
    query: Option<SearchQuery>,
    notes: Vec<String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), EvidenceError> {
    let persist = |source| EvidenceError::Persist {
        path: path.display().to_string(),
        source,
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(persist)?;
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes).map_err(persist)?;
    std::fs::rename(&tmp, path).map_err(persist)
}

/// Writes `evidence.json` (array of sources, media link first) and
/// `evidence.meta.json` into `dir`.
pub fn save_buffer(dir: &Path, buf: &EvidenceBuffer) -> Result<(), EvidenceError> {
    let docs: Vec<&SourceDocument> = buf.all_documents().collect();
    let body = serde_json::to_vec_pretty(&docs).expect("documents serialize");
    let meta = BufferMeta {
        case_id: buf.case_id.clone(),
        fetched_at: buf.fetched_at,
        query: buf.query.clone(),
        notes: buf.notes.clone(),
    };
    write_atomic(&dir.join(EVIDENCE_FILE), &body)?;
    write_atomic(
        &dir.join(EVIDENCE_META_FILE),
        &serde_json::to_vec_pretty(&meta).expect("meta serializes"),
    )
}

/// Loads a saved buffer; `Ok(None)` when none exists.
pub fn load_buffer(dir: &Path) -> Result<Option<EvidenceBuffer>, EvidenceError> {
    let path = dir.join(EVIDENCE_FILE);
    let meta_path = dir.join(EVIDENCE_META_FILE);
    if !path.exists() || !meta_path.exists() {
        return Ok(None);
    }
    let corrupt = |p: &PathBuf, reason: String| EvidenceError::Corrupt {
        path: p.display().to_string(),
        reason,
    };
    let read = |p: &PathBuf| std::fs::read(p).map_err(|e| corrupt(p, e.to_string()));
    let docs: Vec<SourceDocument> =
        serde_json::from_slice(&read(&path)?).map_err(|e| corrupt(&path, e.to_string()))?;
    let meta: BufferMeta = serde_json::from_slice(&read(&meta_path)?)
        .map_err(|e| corrupt(&meta_path, e.to_string()))?;
    let (source, documents): (Vec<_>, Vec<_>) = docs.into_iter().partition(|d| d.rank == 0);
    Ok(Some(EvidenceBuffer {
        case_id: meta.case_id,
        source_link: source.into_iter().next(),
        documents,
        fetched_at: meta.fetched_at,
        query: meta.query,
        notes: meta.notes,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    pub buffer: EvidenceBuffer,
    pub from_cache: bool,
}

/// Search plus crawl for a case, without touching the disk.
pub fn gather_evidence(
    case: &Case,
    search_client: Option<&dyn SearchClient>,
    fetcher: &dyn PageFetcher,
    cfg: &RetrievalConfig,
) -> EvidenceBuffer {
    let meta = &case.metadata;
    let mut notes = Vec::new();
    let (query, ranked) = match extract_keywords(&meta.title, &meta.description) {
        Ok(q) => match search_client {
            Some(client) => {
                let outcome = search(&q, cfg.k, client, &cfg.retry);
                if let Some(e) = outcome.error {
                    notes.push(format!("search failed: {e}"));
                }
                (Some(q), outcome.results)
            }
            None => {
                notes.push("search client unavailable".into());
                (Some(q), Vec::new())
            }
        },
        Err(e) => {
            notes.push(e.to_string());
            (None, Vec::new())
        }
    };
    let mut buffer = build_evidence_buffer(&case.case_id, meta.media_link(), &ranked, fetcher, cfg);
    buffer.query = query;
    notes.append(&mut buffer.notes);
    buffer.notes = notes;
    buffer
}

/// Full retrieval for a case, reusing `case_dir`'s buffer unless `refresh`.
pub fn retrieve_evidence(
    case: &Case,
    search_client: &dyn SearchClient,
    fetcher: &dyn PageFetcher,
    cfg: &RetrievalConfig,
    case_dir: &Path,
    refresh: bool,
) -> Result<Retrieval, EvidenceError> {
    if !refresh {
        if let Some(buffer) = load_buffer(case_dir)? {
            return Ok(Retrieval {
                buffer,
                from_cache: true,
            });
        }
    }
    let buffer = gather_evidence(case, Some(search_client), fetcher, cfg);
    save_buffer(case_dir, &buffer)?;
    Ok(Retrieval {
        buffer,
        from_cache: false,
    })
}
