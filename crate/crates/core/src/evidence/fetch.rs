//! Page fetching and readable-text extraction.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use scraper::{ElementRef, Html, Node, Selector};
use thiserror::Error;

use crate::model::FETCH_FAILED;
use crate::net::{HttpTransport, NetError, NetworkPolicy};

pub const DEFAULT_FETCH_TIMEOUT: Duration = Duration::from_secs(15);
pub const DEFAULT_SIZE_CAP: usize = 2 * 1024 * 1024;
pub const DEFAULT_POLITENESS: Duration = Duration::from_secs(1);
pub const STUB_DIR: &str = "pages";
pub const STUB_INDEX: &str = "index.json";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FetchError {
    #[error("invalid url {0:?}")]
    InvalidUrl(String),
    #[error("fetch failed: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("unsupported content type {0}")]
    ContentType(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("page fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchedPage {
    pub body: Vec<u8>,
    pub content_type: Option<String>,
    pub truncated: bool,
}

pub trait PageFetcher: Send + Sync {
    fn fetch(&self, url: &url::Url, cap: usize) -> Result<FetchedPage, FetchError>;
}

/// Reads at most `cap` bytes; reports whether more were available.
pub fn read_capped(mut r: impl Read, cap: usize) -> std::io::Result<(Vec<u8>, bool)> {
    let mut buf = Vec::new();
    r.by_ref().take(cap as u64 + 1).read_to_end(&mut buf)?;
    let truncated = buf.len() > cap;
    buf.truncate(cap);
    Ok((buf, truncated))
}

pub struct HttpFetcher {
    transport: HttpTransport,
    politeness: Duration,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl HttpFetcher {
    pub fn new(
        policy: NetworkPolicy,
        timeout: Duration,
        politeness: Duration,
    ) -> Result<Self, FetchError> {
        Ok(Self {
            transport: HttpTransport::new(policy, "page fetch", timeout)?,
            politeness,
            next_slot: Mutex::new(HashMap::new()),
        })
    }

    /// Reserves the next allowed start time for `host` and sleeps until then.
    fn wait_for_host(&self, host: &str) {
        let now = Instant::now();
        let start = {
            let mut slots = self.next_slot.lock().expect("politeness table");
            let slot = slots.entry(host.to_string()).or_insert(now);
            let start = (*slot).max(now);
            *slot = start + self.politeness;
            start
        };
        if start > now {
            std::thread::sleep(start - now);
        }
    }
}

impl PageFetcher for HttpFetcher {
    fn fetch(&self, url: &url::Url, cap: usize) -> Result<FetchedPage, FetchError> {
        self.wait_for_host(url.host_str().unwrap_or(""));
        let resp = self
            .transport
            .client()
            .get(url.clone())
            .send()
            .map_err(|e| FetchError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(FetchError::Status(resp.status().as_u16()));
        }
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let (body, truncated) =
            read_capped(resp, cap).map_err(|e| FetchError::Transport(e.to_string()))?;
        Ok(FetchedPage {
            body,
            content_type,
            truncated,
        })
    }
}

/// Pages from `<dir>/pages/index.json`, a map of URL to file name
/// (relative to `pages/`) or `null` for an unreachable page.
#[derive(Debug)]
pub struct StubFetcher {
    root: PathBuf,
    index: HashMap<String, Option<String>>,
    calls: AtomicUsize,
}

impl StubFetcher {
    pub fn from_dir(dir: &Path) -> Result<Self, FetchError> {
        let root = dir.join(STUB_DIR);
        let path = root.join(STUB_INDEX);
        let index = match std::fs::read_to_string(&path) {
            Ok(raw) => serde_json::from_str(&raw)
                .map_err(|e| FetchError::Fixture(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => HashMap::new(),
            Err(e) => return Err(FetchError::Fixture(format!("{}: {e}", path.display()))),
        };
        Ok(Self {
            root,
            index,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl PageFetcher for StubFetcher {
    fn fetch(&self, url: &url::Url, cap: usize) -> Result<FetchedPage, FetchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let Some(Some(file)) = self.index.get(url.as_str()) else {
            return Err(FetchError::Transport(format!("{url} is unreachable")));
        };
        let f = std::fs::File::open(self.root.join(file))
            .map_err(|e| FetchError::Fixture(format!("{file}: {e}")))?;
        let (body, truncated) =
            read_capped(f, cap).map_err(|e| FetchError::Fixture(e.to_string()))?;
        let content_type = if file.ends_with(".txt") {
            "text/plain"
        } else {
            "text/html"
        };
        Ok(FetchedPage {
            body,
            content_type: Some(content_type.into()),
            truncated,
        })
    }
}

const SKIP: &[&str] = &[
    "script", "style", "noscript", "nav", "header", "footer", "aside", "form", "button", "svg",
    "iframe", "template", "select",
];
const BLOCKS: &[&str] = &[
    "p",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "li",
    "pre",
    "blockquote",
    "td",
    "th",
    "dd",
    "dt",
    "figcaption",
];
const MIN_BLOCK_CHARS: usize = 20;
const MAX_LINK_DENSITY: f64 = 0.5;

fn is_heading(name: &str) -> bool {
    name.len() == 2 && name.starts_with('h') && name.as_bytes()[1].is_ascii_digit()
}

/// Whitespace-normalised text under `el`, skipping boilerplate tags.
/// Also returns the length of text inside links.
fn block_text(el: ElementRef<'_>) -> (String, usize) {
    fn walk(el: ElementRef<'_>, in_link: bool, out: &mut String, link_chars: &mut usize) {
        for child in el.children() {
            match child.value() {
                Node::Text(t) => {
                    out.push_str(t);
                    out.push(' ');
                    if in_link {
                        *link_chars += t.trim().chars().count();
                    }
                }
                Node::Element(e) if !SKIP.contains(&e.name()) => {
                    if let Some(c) = ElementRef::wrap(child) {
                        walk(c, in_link || e.name() == "a", out, link_chars);
                    }
                }
                _ => {}
            }
        }
    }
    let mut raw = String::new();
    let mut link_chars = 0;
    walk(el, el.value().name() == "a", &mut raw, &mut link_chars);
    (
        raw.split_whitespace().collect::<Vec<_>>().join(" "),
        link_chars,
    )
}

fn collect_blocks(el: ElementRef<'_>, out: &mut Vec<String>) {
    for child in el.children() {
        let Some(c) = ElementRef::wrap(child) else {
            continue;
        };
        let name = c.value().name();
        if SKIP.contains(&name) {
            continue;
        }
        if BLOCKS.contains(&name) {
            let (text, link_chars) = block_text(c);
            let len = text.chars().count();
            if len == 0 {
                continue;
            }
            let density = link_chars as f64 / len as f64;
            if density <= MAX_LINK_DENSITY && (is_heading(name) || len >= MIN_BLOCK_CHARS) {
                out.push(text);
            }
        } else {
            collect_blocks(c, out);
        }
    }
}

/// Readable text of an HTML document: paragraph-like blocks with low link
/// density, from `<article>` or `<main>` when present.
pub fn extract_readable_text(html: &str) -> String {
    let doc = Html::parse_document(html);
    let root = ["article", "main", "body"]
        .iter()
        .find_map(|s| {
            doc.select(&Selector::parse(s).expect("static selector"))
                .next()
        })
        .unwrap_or_else(|| doc.root_element());
    let mut blocks = Vec::new();
    collect_blocks(root, &mut blocks);
    if blocks.is_empty() {
        let (text, _) = block_text(root);
        return text;
    }
    blocks.join("\n")
}

/// Publication date advertised in page metadata, if any.
pub fn extract_meta_date(html: &str) -> Option<String> {
    let doc = Html::parse_document(html);
    let sel = Selector::parse("meta").expect("static selector");
    const KEYS: &[&str] = &["article:published_time", "datepublished", "date", "pubdate"];
    for key in KEYS {
        for m in doc.select(&sel) {
            let v = m.value();
            let name = v
                .attr("property")
                .or_else(|| v.attr("name"))
                .or_else(|| v.attr("itemprop"));
            if name.is_some_and(|n| n.eq_ignore_ascii_case(key)) {
                if let Some(c) = v.attr("content").map(str::trim).filter(|c| !c.is_empty()) {
                    return Some(c.to_string());
                }
            }
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageContent {
    pub content: String,
    pub meta_date: Option<String>,
}

/// Total: every failure becomes the fixed failure marker.
pub fn fetch_content(link: &str, fetcher: &dyn PageFetcher, cap: usize) -> PageContent {
    match try_fetch(link, fetcher, cap) {
        Ok(p) => p,
        Err(e) => {
            tracing::info!(link, error = %e, "page fetch failed");
            PageContent {
                content: FETCH_FAILED.to_string(),
                meta_date: None,
            }
        }
    }
}

fn try_fetch(link: &str, fetcher: &dyn PageFetcher, cap: usize) -> Result<PageContent, FetchError> {
    let url = url::Url::parse(link).map_err(|_| FetchError::InvalidUrl(link.to_string()))?;
    if !matches!(url.scheme(), "http" | "https") {
        return Err(FetchError::InvalidUrl(link.to_string()));
    }
    let page = fetcher.fetch(&url, cap)?;
    let ct = page
        .content_type
        .clone()
        .unwrap_or_default()
        .to_ascii_lowercase();
    let text = String::from_utf8_lossy(&page.body);
    let looks_html = text.trim_start().starts_with('<');
    let (mut content, meta_date) = if ct.contains("html") || (ct.is_empty() && looks_html) {
        (extract_readable_text(&text), extract_meta_date(&text))
    } else if ct.starts_with("text/") || ct.is_empty() {
        (text.split_whitespace().collect::<Vec<_>>().join(" "), None)
    } else {
        return Err(FetchError::ContentType(ct));
    };
    if content.trim().is_empty() {
        return Err(FetchError::Transport("no readable text".into()));
    }
    if page.truncated {
        content.push_str(&format!("\n[truncated at {cap} bytes]"));
    }
    Ok(PageContent { content, meta_date })
}
