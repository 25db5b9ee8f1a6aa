//! Bundled prompt bodies and rendering.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::VerifyError;
use crate::model::SourceDocument;

pub const CROSS_VALIDATION_BODY: &str = include_str!("../../templates/prompt1.txt");
pub const FORENSIC_BODY: &str = include_str!("../../templates/prompt2.txt");

/// Appended to the prompt on the single re-ask after unusable JSON.
pub const REASK_SUFFIX: &str = "\n\nReturn only valid JSON.";

const CROSS_VALIDATION_LAYOUT: &str = "{{body}}\n### Sources:\n{{sources}}\n";
const FORENSIC_LAYOUT: &str = "{{body}}\n### Metadata:\n{{metadata}}\n\n### Images:\n{{images}}\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    CrossValidation,
    Forensic,
}

impl TemplateId {
    pub fn body(self) -> &'static str {
        match self {
            TemplateId::CrossValidation => CROSS_VALIDATION_BODY,
            TemplateId::Forensic => FORENSIC_BODY,
        }
    }

    fn layout(self) -> &'static str {
        match self {
            TemplateId::CrossValidation => CROSS_VALIDATION_LAYOUT,
            TemplateId::Forensic => FORENSIC_LAYOUT,
        }
    }

    /// Top-level keys the reply must carry.
    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            TemplateId::CrossValidation => &["location", "date", "about", "tag"],
            TemplateId::Forensic => &[
                "metadata-validation",
                "authenticity",
                "auth-evidence",
                "synt-type",
                "other",
            ],
        }
    }
}

pub type Bindings = BTreeMap<String, String>;

/// Substitutes `{{name}}` placeholders of the template layout. Bound values
/// are inserted verbatim and never rescanned.
pub fn render_prompt(id: TemplateId, bindings: &Bindings) -> Result<String, VerifyError> {
    let layout = id.layout();
    let mut out = String::with_capacity(layout.len() + id.body().len());
    let mut rest = layout;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| VerifyError::MissingBinding("<unterminated>".into()))?;
        let name = &after[..close];
        if name == "body" {
            out.push_str(id.body());
        } else {
            let v = bindings
                .get(name)
                .ok_or_else(|| VerifyError::MissingBinding(name.to_string()))?;
            out.push_str(v);
        }
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

#[derive(Serialize)]
struct PromptSource<'a> {
    link: &'a str,
    date: &'a str,
    title: &'a str,
    content: String,
}

/// Sources as the evidence-file JSON array, each content cut to `max_chars`.
pub fn sources_json<'a>(
    docs: impl IntoIterator<Item = &'a SourceDocument>,
    max_chars: usize,
) -> String {
    let items: Vec<PromptSource<'_>> = docs
        .into_iter()
        .map(|d| PromptSource {
            link: &d.link,
            date: &d.date,
            title: &d.title,
            content: match d.content.char_indices().nth(max_chars) {
                Some((cut, _)) => format!("{}...", &d.content[..cut]),
                None => d.content.clone(),
            },
        })
        .collect();
    serde_json::to_string_pretty(&items).expect("sources serialize")
}
