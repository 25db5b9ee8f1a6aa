//! Multimodal LLM clients: request/reply types, refusal detection, retry,
//! a fixture-backed stub and an OpenAI-compatible HTTP backend.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::net::{with_retry, HttpTransport, NetError, NetworkPolicy, RetryPolicy};

const REFUSAL_PHRASES: &str = include_str!("../data/refusal_phrases.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("llm transport: {0}")]
    Transport(String),
    #[error("llm rate limited: {0}")]
    RateLimited(String),
    #[error("llm authentication failed: {0}")]
    Auth(String),
    #[error("llm request rejected: {0}")]
    Rejected(String),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("llm fixture: {0}")]
    Fixture(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: String },
}

impl LlmError {
    fn retryable(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::RateLimited(_))
    }

    pub fn is_auth(&self) -> bool {
        matches!(self, Self::Auth(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageAttachment {
    pub media_type: String,
    pub base64: String,
}

impl ImageAttachment {
    pub fn jpeg(base64: impl Into<String>) -> Self {
        Self {
            media_type: "image/jpeg".into(),
            base64: base64.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRequest {
    pub system: String,
    pub user: String,
    pub images: Vec<ImageAttachment>,
}

impl LlmRequest {
    /// Stable content hash (hex SHA-256) used to key stub fixtures.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_bytes());
        h.update([0]);
        h.update(self.user.as_bytes());
        for img in &self.images {
            h.update([0]);
            h.update(img.media_type.as_bytes());
            h.update([0]);
            h.update(img.base64.as_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a backend returned for one request.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmReply {
    pub text: String,
    pub finish_reason: String,
    pub content_filtered: bool,
    pub usage: Usage,
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError>;
}

/// Reply after refusal screening. `parsed_json` is filled by the caller that
/// knows the expected schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LlmResponse {
    pub raw_text: String,
    pub parsed_json: Option<Value>,
    pub refusal: bool,
    pub usage: Usage,
    pub attempts: u32,
}

fn refusal_phrases() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        REFUSAL_PHRASES
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// True when `text` contains a known refusal phrase.
pub fn looks_like_refusal(text: &str) -> bool {
    let norm = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    refusal_phrases().iter().any(|p| norm.contains(p))
}

/// Sends `req`, retrying transport and rate-limit failures.
pub fn call_llm(
    req: &LlmRequest,
    client: &dyn LlmClient,
    retry: &RetryPolicy,
) -> Result<LlmResponse, LlmError> {
    let (res, attempts) = with_retry(retry, LlmError::retryable, |_| client.complete(req));
    let reply = match res {
        Ok(r) => r,
        Err(e) if e.retryable() => {
            return Err(LlmError::ExhaustedRetries {
                attempts,
                last: e.to_string(),
            })
        }
        Err(e) => return Err(e),
    };
    let has_json = crate::verify::json::find_json_object(&reply.text).is_some();
    let refusal = reply.content_filtered
        || reply.finish_reason == "content_filter"
        || (!has_json && looks_like_refusal(&reply.text));
    Ok(LlmResponse {
        raw_text: reply.text,
        parsed_json: None,
        refusal,
        usage: reply.usage,
        attempts,
    })
}

#[derive(Debug, Clone, Default, Deserialize)]
struct StubMatch {
    hash: Option<String>,
    prefix: Option<String>,
    contains: Option<String>,
}

impl StubMatch {
    fn hits(&self, req: &LlmRequest, hash: &str) -> bool {
        let text = format!("{}\n{}", req.system, req.user);
        self.hash.as_deref().is_none_or(|h| h == hash)
            && self
                .prefix
                .as_deref()
                .is_none_or(|p| req.user.starts_with(p))
            && self.contains.as_deref().is_none_or(|c| text.contains(c))
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct StubReply {
    #[serde(default)]
    pub text: Option<String>,
    /// Reply text read from a file next to the index.
    #[serde(default)]
    pub file: Option<String>,
    /// `transport`, `rate_limited`, `auth` or `rejected`.
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub finish_reason: Option<String>,
    #[serde(default)]
    pub content_filter: bool,
}

#[derive(Debug, Clone, Deserialize)]
struct StubRule {
    #[serde(rename = "match", default)]
    matcher: StubMatch,
    /// Served in order; the last one repeats.
    replies: Vec<StubReply>,
}

/// Fixture-backed client. Rules from `<dir>/llm/index.json` are tried in
/// order; the first whose hash/prefix/contains conditions all hold answers.
#[derive(Debug)]
pub struct StubLlm {
    root: PathBuf,
    rules: Vec<StubRule>,
    served: Mutex<Vec<usize>>,
    calls: AtomicUsize,
}

pub const STUB_DIR: &str = "llm";
pub const STUB_INDEX: &str = "index.json";

impl StubLlm {
    pub fn from_dir(dir: &Path) -> Result<Self, LlmError> {
        let root = dir.join(STUB_DIR);
        let path = root.join(STUB_INDEX);
        let raw = std::fs::read_to_string(&path)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        let rules: Vec<StubRule> = serde_json::from_str(&raw)
            .map_err(|e| LlmError::Fixture(format!("{}: {e}", path.display())))?;
        Ok(Self::build(root, rules))
    }

    /// One rule matching every request, serving `replies` in order.
    pub fn scripted(replies: Vec<StubReply>) -> Self {
        Self::build(
            PathBuf::new(),
            vec![StubRule {
                matcher: StubMatch::default(),
                replies,
            }],
        )
    }

    /// Always answers with `text`.
    pub fn always(text: &str) -> Self {
        Self::scripted(vec![StubReply {
            text: Some(text.into()),
            ..Default::default()
        }])
    }

    fn build(root: PathBuf, rules: Vec<StubRule>) -> Self {
        let served = Mutex::new(vec![0; rules.len()]);
        Self {
            root,
            rules,
            served,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LlmClient for StubLlm {
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let hash = req.hash();
        let Some(idx) = self.rules.iter().position(|r| r.matcher.hits(req, &hash)) else {
            return Err(LlmError::Fixture(format!(
                "no stub rule matches request {hash}"
            )));
        };
        let rule = &self.rules[idx];
        let reply = {
            let mut served = self.served.lock().expect("stub counters");
            let n = served[idx];
            served[idx] += 1;
            rule.replies
                .get(n.min(rule.replies.len().saturating_sub(1)))
                .cloned()
                .ok_or_else(|| LlmError::Fixture("stub rule has no replies".into()))?
        };
        if let Some(kind) = &reply.error {
            return Err(match kind.as_str() {
                "rate_limited" => LlmError::RateLimited("stub".into()),
                "auth" => LlmError::Auth("stub".into()),
                "rejected" => LlmError::Rejected("stub".into()),
                _ => LlmError::Transport("stub".into()),
            });
        }
        let text = match (&reply.text, &reply.file) {
            (Some(t), _) => t.clone(),
            (None, Some(f)) => std::fs::read_to_string(self.root.join(f))
                .map_err(|e| LlmError::Fixture(format!("{f}: {e}")))?,
            (None, None) => String::new(),
        };
        let finish_reason = reply.finish_reason.clone().unwrap_or_else(|| {
            if reply.content_filter {
                "content_filter".into()
            } else {
                "stop".into()
            }
        });
        Ok(LlmReply {
            usage: Usage {
                prompt_tokens: (req.user.len() / 4) as u64,
                completion_tokens: (text.len() / 4) as u64,
            },
            text,
            finish_reason,
            content_filtered: reply.content_filter,
        })
    }
}

/// OpenAI-compatible chat-completions backend.
pub struct HttpLlm {
    transport: HttpTransport,
    endpoint: String,
    api_key: String,
    model: String,
    min_interval: Duration,
    next_slot: Mutex<Instant>,
}

impl HttpLlm {
    pub fn new(
        policy: NetworkPolicy,
        endpoint: &str,
        api_key: &str,
        model: &str,
        timeout: Duration,
        min_interval: Duration,
    ) -> Result<Self, LlmError> {
        if api_key.is_empty() {
            return Err(LlmError::Auth("LLM_API_KEY is not set".into()));
        }
        if endpoint.is_empty() {
            return Err(LlmError::Rejected("LLM_API_ENDPOINT is not set".into()));
        }
        Ok(Self {
            transport: HttpTransport::new(policy, "llm", timeout)?,
            endpoint: endpoint.to_string(),
            api_key: api_key.to_string(),
            model: model.to_string(),
            min_interval,
            next_slot: Mutex::new(Instant::now()),
        })
    }

    /// Process-wide spacing of requests made through this client.
    fn throttle(&self) {
        let now = Instant::now();
        let start = {
            let mut slot = self.next_slot.lock().expect("llm limiter");
            let start = (*slot).max(now);
            *slot = start + self.min_interval;
            start
        };
        if start > now {
            std::thread::sleep(start - now);
        }
    }
}

pub fn chat_body(model: &str, req: &LlmRequest) -> Value {
    let mut content = vec![json!({ "type": "text", "text": req.user })];
    content.extend(req.images.iter().map(|img| {
        json!({
            "type": "image_url",
            "image_url": { "url": format!("data:{};base64,{}", img.media_type, img.base64) }
        })
    }));
    let mut messages = Vec::new();
    if !req.system.is_empty() {
        messages.push(json!({ "role": "system", "content": req.system }));
    }
    messages.push(json!({ "role": "user", "content": content }));
    json!({ "model": model, "messages": messages, "temperature": 0 })
}

pub fn parse_chat_reply(v: &Value) -> Result<LlmReply, LlmError> {
    let choice = v["choices"]
        .get(0)
        .ok_or_else(|| LlmError::Transport("reply has no choices".into()))?;
    let msg = &choice["message"];
    let finish_reason = choice["finish_reason"].as_str().unwrap_or("").to_string();
    let refusal_field = msg["refusal"].as_str().is_some_and(|s| !s.is_empty());
    let text = msg["content"]
        .as_str()
        .or_else(|| msg["refusal"].as_str())
        .unwrap_or("")
        .to_string();
    Ok(LlmReply {
        text,
        content_filtered: refusal_field || finish_reason == "content_filter",
        finish_reason,
        usage: Usage {
            prompt_tokens: v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            completion_tokens: v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        },
    })
}

impl LlmClient for HttpLlm {
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        self.throttle();
        let resp = self
            .transport
            .client()
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&chat_body(&self.model, req))
            .send()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.text().unwrap_or_default();
        match status.as_u16() {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(status.to_string())),
            429 => return Err(LlmError::RateLimited(body)),
            500..=599 => return Err(LlmError::Transport(format!("{status}: {body}"))),
            _ if body.contains("content_filter") || body.contains("content_policy") => {
                return Ok(LlmReply {
                    text: String::new(),
                    finish_reason: "content_filter".into(),
                    content_filtered: true,
                    usage: Usage::default(),
                })
            }
            _ => return Err(LlmError::Rejected(format!("{status}: {body}"))),
        }
        let v: Value = serde_json::from_str(&body)
            .map_err(|e| LlmError::Transport(format!("bad response body: {e}")))?;
        parse_chat_reply(&v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn refusal_phrases_match_loosely() {
        assert!(looks_like_refusal(
            "I\u{2019}m sorry, I can\u{2019}t help with that."
        ));
        assert!(looks_like_refusal("I must decline this request."));
        assert!(!looks_like_refusal("The images show a brick building."));
    }

    #[test]
    fn chat_body_carries_images_in_order() {
        let req = LlmRequest {
            system: String::new(),
            user: "hi".into(),
            images: vec![ImageAttachment::jpeg("AAA"), ImageAttachment::jpeg("BBB")],
        };
        let b = chat_body("m", &req);
        let content = b["messages"][0]["content"].as_array().unwrap();
        assert_eq!(content.len(), 3);
        assert_eq!(content[2]["image_url"]["url"], "data:image/jpeg;base64,BBB");
    }

    #[test]
    fn chat_reply_flags_refusals() {
        let v = json!({"choices": [{"message": {"content": null, "refusal": "no"}, "finish_reason": "stop"}]});
        let r = parse_chat_reply(&v).unwrap();
        assert!(r.content_filtered);
        assert_eq!(r.text, "no");
        let v = json!({"choices": [{"message": {"content": "{}"}, "finish_reason": "stop"}],
                       "usage": {"prompt_tokens": 3, "completion_tokens": 1}});
        let r = parse_chat_reply(&v).unwrap();
        assert_eq!((r.text.as_str(), r.usage.prompt_tokens), ("{}", 3));
    }

    #[test]
    fn hash_depends_on_images() {
        let mut a = LlmRequest {
            system: "s".into(),
            user: "u".into(),
            images: vec![],
        };
        let h0 = a.hash();
        a.images.push(ImageAttachment::jpeg("x"));
        assert_ne!(h0, a.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
