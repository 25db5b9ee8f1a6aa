//! Report assembly: `report.json` (machine-readable) and `report.md`.
//!
//! Both outputs are pure functions of their inputs; nothing time-dependent is
//! written, so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::evidence::EvidenceBuffer;
use crate::keyframes::keyframe_file_name;
use crate::model::{
    CaseMetadata, CrossValidation, ForensicAnalysis, Keyframe, StageOutcome, StageRecord,
    Transcript, VerificationReport,
};
use crate::verify::format_coordinates;

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";

/// Stage names as they appear in reports and caches.
pub mod stage {
    pub const INGEST: &str = "ingest";
    pub const KEYFRAMES: &str = "keyframes";
    pub const TRANSCRIPTION: &str = "transcription";
    pub const EVIDENCE: &str = "evidence";
    pub const CROSS_VALIDATION: &str = "cross_validation";
    pub const FORENSIC: &str = "forensic";
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub struct ReportInputs<'a> {
    pub case_id: &'a str,
    pub metadata: &'a CaseMetadata,
    pub cross_validation: Option<&'a CrossValidation>,
    pub forensic: Option<&'a ForensicAnalysis>,
    pub transcripts: &'a [Transcript],
    pub evidence: Option<&'a EvidenceBuffer>,
    pub keyframes: &'a [Keyframe],
    pub stages: &'a [StageRecord],
    pub human_review: &'a [String],
}

pub fn assemble_report(inp: &ReportInputs<'_>) -> VerificationReport {
    VerificationReport {
        case_id: inp.case_id.to_string(),
        metadata: inp.metadata.clone(),
        cross_validation: inp.cross_validation.cloned(),
        forensic: inp.forensic.cloned(),
        transcripts: inp.transcripts.to_vec(),
        sources: inp
            .evidence
            .map(|b| b.all_documents().cloned().collect())
            .unwrap_or_default(),
        keyframe_manifest: inp.keyframes.to_vec(),
        human_review_required: !inp.human_review.is_empty(),
        human_review_reason: inp.human_review.join("; "),
        stages: inp.stages.to_vec(),
    }
}

/// Why a stage produced nothing, from its record.
pub fn absence_reason(report: &VerificationReport, name: &str) -> String {
    match report.stages.iter().find(|s| s.stage == name) {
        None => "stage did not run".into(),
        Some(rec) if rec.notes.is_empty() => match rec.outcome {
            StageOutcome::Completed => "no output".into(),
            StageOutcome::Skipped => "skipped".into(),
            StageOutcome::Failed => "failed".into(),
        },
        Some(rec) => rec.notes.join("; "),
    }
}

fn cell(s: &str) -> String {
    let s = s.replace('|', "\\|").replace(['\r', '\n'], " ");
    if s.trim().is_empty() {
        "-".into()
    } else {
        s
    }
}

fn or_dash(s: &str) -> &str {
    if s.trim().is_empty() {
        "-"
    } else {
        s
    }
}

fn link_text(s: &str) -> String {
    s.replace('[', "\\[").replace(']', "\\]").replace('\n', " ")
}

pub fn render_markdown(r: &VerificationReport) -> String {
    let mut md = String::new();
    let m = &r.metadata;
    let _ = writeln!(md, "# Verification report: {}\n", r.case_id);
    md.push_str("| Field | Value |\n|---|---|\n");
    for (k, v) in [
        ("Location", &m.location_hint),
        ("Violence level", &m.violence_level),
        ("Title", &m.title),
        ("Media link", &m.media_link),
        ("Description", &m.description),
        ("Category", &m.category),
    ] {
        let _ = writeln!(md, "| {k} | {} |", cell(v));
    }
    md.push('\n');
    if r.human_review_required {
        md.push_str("**Human review required.**\n\n");
        for reason in r.human_review_reason.split("; ") {
            let _ = writeln!(md, "- {reason}");
        }
        md.push('\n');
    } else {
        md.push_str("Human review: not required.\n\n");
    }

    md.push_str("## Step 1: Web sources\n\n");
    if r.sources.is_empty() {
        let _ = writeln!(
            md,
            "Sources: not available: {}\n",
            absence_reason(r, stage::EVIDENCE)
        );
    } else {
        for d in &r.sources {
            let status = if d.fetch_failed() {
                "fetch failed".to_string()
            } else {
                format!("{} chars", d.content.chars().count())
            };
            let exact = if d.exact_match { ", exact phrase" } else { "" };
            let _ = writeln!(
                md,
                "{}. [{}]({}) | date: {} | {status}{exact}",
                d.rank,
                link_text(or_dash(&d.title)),
                d.link,
                d.date
            );
        }
        if !r.sources.iter().any(|d| d.rank > 0) {
            md.push_str("\nNo external sources were found.\n");
        }
        md.push('\n');
    }

    md.push_str("## Step 2: Keyframes\n\n");
    if r.keyframe_manifest.is_empty() {
        let _ = writeln!(
            md,
            "Keyframes: not available: {}\n",
            absence_reason(r, stage::KEYFRAMES)
        );
    } else {
        for kf in &r.keyframe_manifest {
            let _ = writeln!(
                md,
                "![{} at {:.2} s]({})  \n{} frame {}, shot {}..{}, cluster {}\n",
                kf.frame.asset_id,
                kf.frame.timestamp_s,
                keyframe_file_name(kf),
                kf.frame.asset_id,
                kf.frame.frame_index,
                kf.shot.start_frame,
                kf.shot.end_frame,
                kf.cluster_id
            );
        }
    }

    md.push_str("## Step 3: Transcripts\n\n");
    if r.transcripts.is_empty() {
        let _ = writeln!(
            md,
            "Transcripts: not available: {}\n",
            absence_reason(r, stage::TRANSCRIPTION)
        );
    } else {
        for t in &r.transcripts {
            let _ = writeln!(md, "### {} ({})\n", t.asset_id, t.language);
            let _ = writeln!(md, "{}\n", or_dash(&t.text()));
            for s in t.segments.iter().filter(|s| s.error.is_some()) {
                let _ = writeln!(
                    md,
                    "- segment {:.1}-{:.1} s failed: {}",
                    s.start_s,
                    s.end_s,
                    s.error.as_deref().unwrap_or_default()
                );
            }
            if t.segments.iter().any(|s| s.error.is_some()) {
                md.push('\n');
            }
        }
    }

    md.push_str("## Step 4: Cross-validation\n\n");
    match &r.cross_validation {
        None => {
            let _ = writeln!(
                md,
                "Cross-validation: not available: {}\n",
                absence_reason(r, stage::CROSS_VALIDATION)
            );
        }
        Some(cv) => {
            let coords = match &cv.coordinates {
                Some(p) => format_coordinates(p),
                None => or_dash(&cv.coordinates_text).to_string(),
            };
            let date = match &cv.date_span {
                Some(s) => s.to_string(),
                None => or_dash(&cv.date_text).to_string(),
            };
            let tags = if cv.tags.is_empty() {
                "-".to_string()
            } else {
                cv.tags.join(", ")
            };
            for (k, v) in [
                ("Location", or_dash(&cv.location_name).to_string()),
                ("Coordinates", coords),
                ("Date", date),
                ("Consensus", cv.consensus.to_string()),
                ("Date notes", or_dash(&cv.notes).to_string()),
                ("Agreement", or_dash(&cv.consensus_about).to_string()),
                ("Conflicts", or_dash(&cv.conflicts).to_string()),
                ("Tags", tags),
            ] {
                let _ = writeln!(md, "- **{k}:** {}", v.replace('\n', "  \n  "));
            }
            md.push('\n');
        }
    }

    md.push_str("## Step 5: Forensic analysis\n\n");
    match &r.forensic {
        None => {
            let _ = writeln!(
                md,
                "Forensic analysis: not available: {}\n",
                absence_reason(r, stage::FORENSIC)
            );
        }
        Some(f) => {
            let mv = &f.metadata_validation;
            for (k, v) in [
                ("Location check", &mv.location),
                ("Event check", &mv.event),
                ("People check", &mv.people),
                ("Authenticity", &f.authenticity),
                ("Evidence", &f.auth_evidence),
                ("Synthetic type", &f.synt_type),
                ("Other", &f.other),
            ] {
                let _ = writeln!(md, "- **{k}:** {}", or_dash(v).replace('\n', "  \n  "));
            }
            md.push('\n');
        }
    }

    md.push_str("## Pipeline stages\n\n| Stage | Outcome | Notes |\n|---|---|---|\n");
    for s in &r.stages {
        let outcome = match s.outcome {
            StageOutcome::Completed => "completed",
            StageOutcome::Skipped => "skipped",
            StageOutcome::Failed => "failed",
        };
        let _ = writeln!(
            md,
            "| {} | {outcome} | {} |",
            s.stage,
            cell(&s.notes.join("; "))
        );
    }
    md
}

/// Writes `report.json` and `report.md` into `dir`.
pub fn write_report(
    dir: &Path,
    report: &VerificationReport,
) -> Result<(PathBuf, PathBuf), ReportError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let json_path = dir.join(REPORT_JSON);
    let md_path = dir.join(REPORT_MD);
    let mut json = serde_json::to_vec_pretty(report).expect("report serializes");
    json.push(b'\n');
    std::fs::write(&json_path, json).map_err(io(&json_path))?;
    std::fs::write(&md_path, render_markdown(report)).map_err(io(&md_path))?;
    Ok((json_path, md_path))
}
