//! Query construction from case title and description.

use std::collections::HashSet;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::EvidenceError;

pub const MAX_KEYWORDS: usize = 12;
const STOPWORDS_EN: &str = include_str!("../../data/stopwords_en.txt");

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS_EN
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

pub fn is_stopword(word: &str) -> bool {
    stopwords().contains(word)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub keywords: Vec<String>,
    pub exact_phrase: Option<String>,
}

impl SearchQuery {
    /// Engine query text: the quoted phrase, then the keywords.
    pub fn query_string(&self) -> String {
        let mut parts = Vec::new();
        if let Some(p) = &self.exact_phrase {
            parts.push(format!("\"{p}\""));
        }
        parts.extend(self.keywords.iter().cloned());
        parts.join(" ")
    }
}

#[derive(Debug)]
struct Token<'a> {
    text: &'a str,
    /// Punctuation separates this token from the previous one.
    broken: bool,
}

fn tokenize(s: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    let mut broken = true;
    for (i, c) in s.char_indices() {
        if c.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
            continue;
        }
        if let Some(st) = start.take() {
            out.push(Token {
                text: &s[st..i],
                broken,
            });
            broken = false;
        }
        if !c.is_whitespace() {
            broken = true;
        }
    }
    if let Some(st) = start {
        out.push(Token {
            text: &s[st..],
            broken,
        });
    }
    out
}

fn capitalized(w: &str) -> bool {
    w.chars().next().is_some_and(char::is_uppercase)
}

/// Runs of capitalised words not split by punctuation, trimmed of stopwords,
/// at least two words long.
fn capitalized_spans(tokens: &[Token<'_>]) -> Vec<Vec<String>> {
    let mut spans = Vec::new();
    let mut cur: Vec<&str> = Vec::new();
    let mut flush = |cur: &mut Vec<&str>| {
        let lower = |w: &&str| w.to_lowercase();
        let mut s: &[&str] = cur;
        while let Some(w) = s.first() {
            if is_stopword(&lower(w)) {
                s = &s[1..];
            } else {
                break;
            }
        }
        while let Some(w) = s.last() {
            if is_stopword(&lower(w)) {
                s = &s[..s.len() - 1];
            } else {
                break;
            }
        }
        if s.len() >= 2 {
            spans.push(s.iter().map(|w| w.to_string()).collect());
        }
        cur.clear();
    };
    for t in tokens {
        if t.broken || !capitalized(t.text) {
            flush(&mut cur);
        }
        if capitalized(t.text) {
            cur.push(t.text);
        }
    }
    flush(&mut cur);
    spans
}

pub fn extract_keywords(title: &str, description: &str) -> Result<SearchQuery, EvidenceError> {
    if title.trim().is_empty() && description.trim().is_empty() {
        return Err(EvidenceError::NoKeywords);
    }
    let mut keywords = Vec::new();
    let mut seen = HashSet::new();
    let mut best: Option<Vec<String>> = None;
    for text in [title, description] {
        let tokens = tokenize(text);
        for span in capitalized_spans(&tokens) {
            let better = match &best {
                None => true,
                Some(b) => {
                    span.len() > b.len()
                        || (span.len() == b.len() && span.join(" ").len() > b.join(" ").len())
                }
            };
            if better {
                best = Some(span);
            }
        }
        for t in &tokens {
            let w = t.text.to_lowercase();
            let short = w.chars().count() < 2 && !w.chars().all(|c| c.is_ascii_digit());
            if short || is_stopword(&w) {
                continue;
            }
            if keywords.len() < MAX_KEYWORDS && seen.insert(w.clone()) {
                keywords.push(w);
            }
        }
    }
    if keywords.is_empty() && best.is_none() {
        return Err(EvidenceError::NoKeywords);
    }
    Ok(SearchQuery {
        keywords,
        exact_phrase: best.map(|s| s.join(" ")),
    })
}
