//! Search clients and exact-phrase promotion.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::keywords::SearchQuery;
use crate::net::{with_retry, HttpTransport, NetError, NetworkPolicy, RetryPolicy};

pub const DEFAULT_K: usize = 10;
pub const STUB_FILE: &str = "search.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub link: String,
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub date: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    #[serde(flatten)]
    pub result: SearchResult,
    pub rank: usize,
    pub exact_match: bool,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("search quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("search transport: {0}")]
    Transport(String),
    #[error("search authentication failed: {0}")]
    Auth(String),
    #[error("search request rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("search fixture: {0}")]
    Fixture(String),
}

impl SearchError {
    fn retryable(&self) -> bool {
        matches!(self, Self::QuotaExceeded(_) | Self::Transport(_))
    }
}

pub trait SearchClient: Send + Sync {
    fn search(&self, query: &SearchQuery, k: usize) -> Result<Vec<SearchResult>, SearchError>;
}

/// Case-insensitive containment of the phrase in title or snippet.
pub fn contains_phrase(r: &SearchResult, phrase: &str) -> bool {
    let p = phrase.to_lowercase();
    r.title.to_lowercase().contains(&p) || r.snippet.to_lowercase().contains(&p)
}

/// Stable partition of exact matches ahead of the rest, truncated to `k`,
/// ranks rewritten from 1.
pub fn promote(results: Vec<SearchResult>, phrase: Option<&str>, k: usize) -> Vec<RankedResult> {
    let flagged: Vec<(bool, SearchResult)> = results
        .into_iter()
        .map(|r| (phrase.is_some_and(|p| contains_phrase(&r, p)), r))
        .collect();
    let (hits, rest): (Vec<_>, Vec<_>) = flagged.into_iter().partition(|(m, _)| *m);
    hits.into_iter()
        .chain(rest)
        .take(k)
        .enumerate()
        .map(|(i, (exact_match, result))| RankedResult {
            result,
            rank: i + 1,
            exact_match,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub results: Vec<RankedResult>,
    /// Set when the client failed after retries; results are then empty.
    pub error: Option<String>,
}

pub fn search(
    query: &SearchQuery,
    k: usize,
    client: &dyn SearchClient,
    retry: &RetryPolicy,
) -> SearchOutcome {
    let (res, attempts) = with_retry(retry, SearchError::retryable, |_| client.search(query, k));
    match res {
        Ok(raw) => SearchOutcome {
            results: promote(raw, query.exact_phrase.as_deref(), k),
            error: None,
        },
        Err(e) => {
            tracing::warn!(attempts, error = %e, "search failed");
            SearchOutcome {
                results: Vec::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// Canned results from `<dir>/search.json`: either a bare array of results or
/// `{"results": [...]}` / `{"error": "quota"|"transport"|"auth"}`.
#[derive(Debug)]
pub struct StubSearch {
    response: Result<Vec<SearchResult>, SearchError>,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StubSearchFile {
    Bare(Vec<SearchResult>),
    Results { results: Vec<SearchResult> },
    Error { error: String },
}

impl StubSearch {
    pub fn new(results: Vec<SearchResult>) -> Self {
        Self {
            response: Ok(results),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn failing(err: SearchError) -> Self {
        Self {
            response: Err(err),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self, SearchError> {
        let path = dir.join(STUB_FILE);
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| SearchError::Fixture(format!("{}: {e}", path.display())))?;
        let file: StubSearchFile = serde_json::from_str(&raw)
            .map_err(|e| SearchError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(match file {
            StubSearchFile::Bare(r) | StubSearchFile::Results { results: r } => Self::new(r),
            StubSearchFile::Error { error } => Self::failing(match error.as_str() {
                "quota" => SearchError::QuotaExceeded("stub".into()),
                "auth" => SearchError::Auth("stub".into()),
                _ => SearchError::Transport("stub".into()),
            }),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl SearchClient for StubSearch {
    fn search(&self, _query: &SearchQuery, k: usize) -> Result<Vec<SearchResult>, SearchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.response.clone().map(|mut r| {
            r.truncate(k);
            r
        })
    }
}

/// JSON search API reached with `GET <endpoint>?q=..&num=k&key=..`.
/// Understands `items` (Google Programmable Search) and `results`/`organic` arrays.
#[derive(Debug, Clone)]
pub struct HttpSearch {
    transport: HttpTransport,
    endpoint: String,
    api_key: String,
}

impl HttpSearch {
    pub fn new(
        policy: NetworkPolicy,
        endpoint: &str,
        api_key: &str,
        timeout: Duration,
    ) -> Result<Self, SearchError> {
        if endpoint.is_empty() {
            return Err(SearchError::Rejected(
                "SEARCH_API_ENDPOINT is not set".into(),
            ));
        }
        if api_key.is_empty() {
            return Err(SearchError::Auth("SEARCH_API_KEY is not set".into()));
        }
        Ok(Self {
            transport: HttpTransport::new(policy, "search", timeout)?,
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
        })
    }
}

fn parse_results(v: &serde_json::Value) -> Vec<SearchResult> {
    let arr = ["items", "results", "organic"]
        .iter()
        .find_map(|k| v.get(*k).and_then(|a| a.as_array()));
    let Some(arr) = arr else { return Vec::new() };
    arr.iter()
        .filter_map(|it| {
            let s = |k: &str| it.get(k).and_then(|x| x.as_str()).map(str::to_string);
            let link = s("link").or_else(|| s("url"))?;
            Some(SearchResult {
                link,
                title: s("title").unwrap_or_default(),
                snippet: s("snippet")
                    .or_else(|| s("description"))
                    .unwrap_or_default(),
                date: s("date").or_else(|| s("published")),
            })
        })
        .collect()
}

impl SearchClient for HttpSearch {
    fn search(&self, query: &SearchQuery, k: usize) -> Result<Vec<SearchResult>, SearchError> {
        let resp = self
            .transport
            .client()
            .get(&self.endpoint)
            .query(&[
                ("q", query.query_string()),
                ("num", k.to_string()),
                ("key", self.api_key.clone()),
            ])
            .send()
            .map_err(|e| SearchError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().unwrap_or_default();
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(SearchError::Auth(status.to_string())),
            429 => return Err(SearchError::QuotaExceeded(body)),
            500..=599 => return Err(SearchError::Transport(format!("{status}: {body}"))),
            _ => return Err(SearchError::Rejected(format!("{status}: {body}"))),
        }
        let v: serde_json::Value = serde_json::from_str(&body)
            .map_err(|e| SearchError::Transport(format!("bad response body: {e}")))?;
        let mut out = parse_results(&v);
        out.truncate(k);
        Ok(out)
    }
}
