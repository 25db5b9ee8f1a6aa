//! Pulling one JSON object out of free-form model text.

use serde_json::{Map, Value};

use super::templates::TemplateId;
use super::VerifyError;

/// Byte range of the first balanced `{...}` that parses as a JSON object.
pub fn find_json_object(text: &str) -> Option<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut start = 0;
    while let Some(off) = text[start..].find('{') {
        let open = start + off;
        if let Some(end) = balanced_end(bytes, open) {
            if serde_json::from_str::<Map<String, Value>>(&text[open..end]).is_ok() {
                return Some((open, end));
            }
        }
        start = open + 1;
    }
    None
}

/// End (exclusive) of the brace group opening at `open`, skipping string literals.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i + 1);
                }
            }
            _ => {}
        }
    }
    None
}

/// First JSON object in `raw`, checked for the template's required keys.
pub fn parse_llm_json(raw: &str, schema: TemplateId) -> Result<Map<String, Value>, VerifyError> {
    let (s, e) = find_json_object(raw).ok_or(VerifyError::NoJsonFound)?;
    let obj: Map<String, Value> =
        serde_json::from_str(&raw[s..e]).map_err(|_| VerifyError::NoJsonFound)?;
    let missing: Vec<String> = schema
        .required_keys()
        .iter()
        .filter(|k| !obj.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(VerifyError::SchemaViolation { missing });
    }
    Ok(obj)
}

/// Renders a JSON value as plain text: strings as-is, arrays joined, objects compact.
pub fn text_of(v: Option<&Value>) -> String {
    match v {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.trim().to_string(),
        Some(Value::Array(a)) => a
            .iter()
            .map(|x| text_of(Some(x)))
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("; "),
        Some(other) => other.to_string(),
    }
}
