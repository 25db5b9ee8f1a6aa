//! Cross-validation and forensic analysis through the LLM, with deterministic
//! date-consensus enforcement.

pub mod dates;
pub mod geo;
pub mod json;
pub mod templates;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::evidence::{EvidenceBuffer, NO_SOURCES_NOTE};
use crate::llm::{call_llm, ImageAttachment, LlmClient, LlmError, LlmRequest, Usage};
use crate::model::{
    ConsensusLabel, CrossValidation, ForensicAnalysis, MetadataValidation, Transcript,
};
use crate::net::RetryPolicy;

pub use dates::{classify_consensus, parse_date, parse_date_span};
pub use geo::{format_coordinates, parse_coordinates};
pub use json::parse_llm_json;
pub use templates::{render_prompt, Bindings, TemplateId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("template placeholder {{{{{0}}}}} has no binding")]
    MissingBinding(String),
    #[error("no JSON object found in model output")]
    NoJsonFound,
    #[error("model output lacks required keys: {}", missing.join(", "))]
    SchemaViolation { missing: Vec<String> },
    #[error("bad date {0:?}, expected dd/mm/yyyy")]
    BadDate(String),
    #[error("bad coordinates {0}")]
    BadCoordinates(String),
    #[error("forensic analysis needs at least one image")]
    NoImages,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone)]
pub struct LlmStageConfig {
    pub retry: RetryPolicy,
    /// Per-source content limit inside the prompt.
    pub max_source_chars: usize,
}

impl Default for LlmStageConfig {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            max_source_chars: 4000,
        }
    }
}

/// Result of one LLM-backed stage. `value` is absent when the stage could
/// not produce usable output; `human_review` then says why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult<T> {
    pub value: Option<T>,
    pub notes: Vec<String>,
    pub human_review: Vec<String>,
    pub raw_text: Option<String>,
    pub usage: Usage,
}

impl<T> StageResult<T> {
    pub fn empty() -> Self {
        Self {
            value: None,
            notes: Vec::new(),
            human_review: Vec::new(),
            raw_text: None,
            usage: Usage::default(),
        }
    }
}

enum Asked {
    Parsed(Map<String, Value>),
    Refused,
    Failed(String),
}

fn add_usage(total: &mut Usage, u: Usage) {
    total.prompt_tokens += u.prompt_tokens;
    total.completion_tokens += u.completion_tokens;
}

/// One request, plus a single re-ask when the reply has no usable JSON.
/// Only authentication failures escape as errors.
fn ask<T>(
    id: TemplateId,
    prompt: String,
    images: Vec<ImageAttachment>,
    client: &dyn LlmClient,
    retry: &RetryPolicy,
    out: &mut StageResult<T>,
) -> Result<Asked, VerifyError> {
    let mut req = LlmRequest {
        system: String::new(),
        user: prompt,
        images,
    };
    let mut first_error = None;
    for round in 0..2 {
        let resp = match call_llm(&req, client, retry) {
            Ok(r) => r,
            Err(e) if e.is_auth() => return Err(e.into()),
            Err(e) => return Ok(Asked::Failed(e.to_string())),
        };
        add_usage(&mut out.usage, resp.usage);
        out.raw_text = Some(resp.raw_text.clone());
        if resp.refusal {
            return Ok(Asked::Refused);
        }
        match parse_llm_json(&resp.raw_text, id) {
            Ok(obj) => {
                if round == 1 {
                    out.notes.push("model output needed a JSON re-ask".into());
                }
                return Ok(Asked::Parsed(obj));
            }
            Err(e) if round == 0 => {
                tracing::info!(template = ?id, error = %e, "re-asking for JSON");
                first_error = Some(e);
                req.user.push_str(templates::REASK_SUFFIX);
            }
            Err(e) => {
                let first = first_error
                    .take()
                    .map(|f| format!("{f}; "))
                    .unwrap_or_default();
                return Ok(Asked::Failed(format!("{first}after re-ask: {e}")));
            }
        }
    }
    unreachable!("loop returns on the second round")
}

fn field<'a>(obj: &'a Map<String, Value>, keys: &[&str]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(*k))
}

/// Maps a parsed cross-validation reply onto the domain type, enforcing the
/// consensus rule. Returns the value and notes about parsing decisions.
pub fn cross_validation_from_json(obj: &Map<String, Value>) -> (CrossValidation, Vec<String>) {
    let mut notes = Vec::new();
    let text = |v: Option<&Value>| json::text_of(v);

    let (location_name, coordinates_text) = match obj.get("location") {
        Some(Value::Object(loc)) => (
            text(field(loc, &["location", "name"])),
            text(loc.get("coordinates")),
        ),
        other => (text(other), String::new()),
    };
    let coordinates = if coordinates_text.is_empty() {
        None
    } else {
        match parse_coordinates(&coordinates_text) {
            Ok(p) => Some(p),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        }
    };

    let (date_text, model_label, date_notes) = match obj.get("date") {
        Some(Value::Object(d)) => (
            text(d.get("date")),
            text(field(d, &["consensus", "concensus"])),
            text(d.get("notes")),
        ),
        other => (text(other), String::new(), String::new()),
    };
    let date_span = if date_text.is_empty() {
        None
    } else {
        match parse_date_span(&date_text) {
            Ok(s) => Some(s),
            Err(e) => {
                notes.push(e.to_string());
                None
            }
        }
    };
    let claimed = ConsensusLabel::from_model_text(&model_label);
    let mut date_notes = date_notes;
    let consensus = match (date_span, claimed) {
        (Some(span), claimed) => {
            let rule = classify_consensus(&span);
            if claimed != Some(rule) {
                let said = if model_label.is_empty() {
                    "no label".to_string()
                } else {
                    format!("\"{model_label}\"")
                };
                let note = format!(
                    "Consensus label overridden: the model reported {said}, but the span {span} covers {} days, which the rule classifies as {rule}.",
                    span.days()
                );
                if !date_notes.is_empty() {
                    date_notes.push('\n');
                }
                date_notes.push_str(&note);
            }
            rule
        }
        (None, Some(label)) => label,
        (None, None) => ConsensusLabel::NonVerifiable,
    };

    let (consensus_about, conflicts) = match obj.get("about") {
        Some(Value::Object(a)) => (text(a.get("consensus")), text(a.get("conflicts"))),
        other => (text(other), String::new()),
    };
    let tags = match obj.get("tag").or_else(|| obj.get("tags")) {
        Some(Value::Array(a)) => a
            .iter()
            .map(|t| text(Some(t)))
            .filter(|t| !t.is_empty())
            .collect(),
        Some(Value::String(s)) => s
            .split(',')
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect(),
        _ => Vec::new(),
    };

    (
        CrossValidation {
            location_name,
            coordinates,
            coordinates_text,
            date_span,
            date_text,
            consensus,
            notes: date_notes,
            consensus_about,
            conflicts,
            tags,
        },
        notes,
    )
}

/// Renders the cross-validation prompt over the buffer and parses the reply.
pub fn run_cross_validation(
    buffer: &EvidenceBuffer,
    client: &dyn LlmClient,
    cfg: &LlmStageConfig,
) -> Result<StageResult<CrossValidation>, VerifyError> {
    let mut out = StageResult::empty();
    if !buffer.has_external_sources() {
        out.notes.push(NO_SOURCES_NOTE.to_string());
    }
    let mut b = Bindings::new();
    b.insert(
        "sources".into(),
        templates::sources_json(buffer.all_documents(), cfg.max_source_chars),
    );
    let prompt = render_prompt(TemplateId::CrossValidation, &b)?;
    match ask(
        TemplateId::CrossValidation,
        prompt,
        Vec::new(),
        client,
        &cfg.retry,
        &mut out,
    )? {
        Asked::Parsed(obj) => {
            let (cv, mut notes) = cross_validation_from_json(&obj);
            out.notes.append(&mut notes);
            out.value = Some(cv);
        }
        Asked::Refused => out
            .human_review
            .push("cross-validation: the model refused to answer".into()),
        Asked::Failed(why) => out
            .human_review
            .push(format!("cross-validation: no usable model output ({why})")),
    }
    Ok(out)
}

/// The metadata handed to the forensic prompt.
pub fn forensic_metadata(cv: &CrossValidation, transcripts: &[Transcript]) -> String {
    let transcript: Vec<Value> = transcripts
        .iter()
        .map(|t| serde_json::json!({ "asset": t.asset_id, "language": t.language, "text": t.text() }))
        .collect();
    let v = serde_json::json!({
        "location": cv.location_name,
        "coordinates": cv.coordinates_text,
        "date": cv.date_text,
        "consensus": cv.consensus.as_str(),
        "notes": cv.notes,
        "about": cv.consensus_about,
        "conflicts": cv.conflicts,
        "tag": cv.tags,
        "transcripts": transcript,
    });
    serde_json::to_string_pretty(&v).expect("metadata serializes")
}

pub fn forensic_from_json(obj: &Map<String, Value>) -> ForensicAnalysis {
    let text = |k: &str| json::text_of(obj.get(k));
    let metadata_validation = match obj.get("metadata-validation") {
        Some(Value::Object(m)) => MetadataValidation {
            location: json::text_of(m.get("location")),
            event: json::text_of(m.get("event")),
            people: json::text_of(m.get("people")),
        },
        other => MetadataValidation {
            event: json::text_of(other),
            ..Default::default()
        },
    };
    ForensicAnalysis {
        metadata_validation,
        authenticity: text("authenticity"),
        auth_evidence: text("auth-evidence"),
        synt_type: text("synt-type"),
        other: text("other"),
    }
}

/// A labelled image for the forensic prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ForensicImage {
    pub label: String,
    pub base64_jpeg: String,
}

pub fn run_forensic_analysis(
    images: &[ForensicImage],
    cv: &CrossValidation,
    transcripts: &[Transcript],
    client: &dyn LlmClient,
    cfg: &LlmStageConfig,
) -> Result<StageResult<ForensicAnalysis>, VerifyError> {
    if images.is_empty() {
        return Err(VerifyError::NoImages);
    }
    let mut out = StageResult::empty();
    let mut b = Bindings::new();
    b.insert("metadata".into(), forensic_metadata(cv, transcripts));
    b.insert(
        "images".into(),
        images
            .iter()
            .enumerate()
            .map(|(i, img)| format!("Image {}: {}", i + 1, img.label))
            .collect::<Vec<_>>()
            .join("\n"),
    );
    let prompt = render_prompt(TemplateId::Forensic, &b)?;
    let attachments = images
        .iter()
        .map(|i| ImageAttachment::jpeg(i.base64_jpeg.clone()))
        .collect();
    match ask(
        TemplateId::Forensic,
        prompt,
        attachments,
        client,
        &cfg.retry,
        &mut out,
    )? {
        Asked::Parsed(obj) => out.value = Some(forensic_from_json(&obj)),
        Asked::Refused => out
            .human_review
            .push("forensic analysis: the model refused to answer".into()),
        Asked::Failed(why) => out
            .human_review
            .push(format!("forensic analysis: no usable model output ({why})")),
    }
    Ok(out)
}
