use std::path::{Path, PathBuf};
use std::sync::Arc;

use vps_core::audio::StubTranscriber;
use vps_core::config::PipelineConfig;
use vps_core::evidence::fetch::StubFetcher;
use vps_core::evidence::search::StubSearch;
use vps_core::llm::{StubLlm, StubReply};
use vps_core::media::BuiltinDecoder;
use vps_core::model::{StageOutcome, VerificationReport};
use vps_core::net::real_request_count;
use vps_core::pipeline::{run_case, run_case_with, Clients, RunMode, Stage};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

struct Stubs {
    transcriber: Arc<StubTranscriber>,
    search: Arc<StubSearch>,
    fetcher: Arc<StubFetcher>,
    llm: Arc<StubLlm>,
}

impl Stubs {
    fn from_dir(dir: &Path) -> Self {
        Self {
            transcriber: Arc::new(StubTranscriber::from_dir(dir).unwrap()),
            search: Arc::new(StubSearch::from_dir(dir).unwrap()),
            fetcher: Arc::new(StubFetcher::from_dir(dir).unwrap()),
            llm: Arc::new(StubLlm::from_dir(dir).unwrap()),
        }
    }

    fn with_llm(mut self, llm: StubLlm) -> Self {
        self.llm = Arc::new(llm);
        self
    }

    fn clients(&self) -> Clients {
        Clients {
            decoder: Arc::new(BuiltinDecoder::default()),
            sidecar: None,
            transcriber: Ok(self.transcriber.clone()),
            search: Ok(self.search.clone()),
            fetcher: Ok(self.fetcher.clone()),
            llm: Ok(self.llm.clone()),
            notes: Vec::new(),
        }
    }

    fn total_calls(&self) -> usize {
        self.transcriber.calls() + self.search.calls() + self.fetcher.calls() + self.llm.calls()
    }
}

fn config(out: &Path) -> PipelineConfig {
    PipelineConfig {
        offline: true,
        output_dir: out.to_path_buf(),
        ..Default::default()
    }
}

fn read_report(dir: &Path) -> VerificationReport {
    serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn golden_case_runs_clean_and_reruns_from_cache() {
    let case = fixture("ID115");
    let out = tempfile::tempdir().unwrap();
    let cfg = config(out.path());
    let before = real_request_count();

    let cold = Stubs::from_dir(&case.join("stubs"));
    let status = run_case(&case, &cfg, &cold.clients()).unwrap();
    assert_eq!(status.stage, Stage::Reported);
    assert!(!status.human_review_required, "{:?}", status.reasons);
    assert!(cold.total_calls() > 0);
    assert_eq!(cold.llm.calls(), 2);
    // two chunks for the 36 s video, one for the 12 s video
    assert_eq!(cold.transcriber.calls(), 3);

    let work = out.path().join("ID115");
    for f in [
        "shots.json",
        "keyframes.json",
        "transcripts.json",
        "evidence.json",
        "evidence.meta.json",
        "crossval.json",
        "forensic.json",
        "report.json",
        "report.md",
    ] {
        assert!(work.join(f).is_file(), "{f}");
    }
    let first = std::fs::read(work.join("report.json")).unwrap();
    let md = std::fs::read_to_string(work.join("report.md")).unwrap();
    assert!(md.contains("Lyman"));
    assert!(md.contains("48.9781"));
    assert!(md.contains("## Step 4: Cross-validation"));
    assert!(md.contains("- **Consensus:** Non-verifiable"));
    assert!(md.contains("](https://"));
    assert!(md.contains("](keyframes/video1_"));

    let report = read_report(&work);
    assert_eq!(report.sources[0].rank, 0);
    assert_eq!(report.sources[0].content, "Failed to fetch the page.");
    assert!(report.forensic.is_some());
    assert_eq!(report.transcripts.len(), 2);
    assert!(report.keyframe_manifest.len() <= 10);
    for kf in &report.keyframe_manifest {
        let file = vps_core::keyframes::keyframe_file_name(kf);
        assert!(work.join(file).is_file());
    }
    assert!(report
        .stages
        .iter()
        .all(|s| s.outcome == StageOutcome::Completed));

    let warm = Stubs::from_dir(&case.join("stubs"));
    let again = run_case(&case, &cfg, &warm.clients()).unwrap();
    assert_eq!(again, status);
    assert_eq!(warm.total_calls(), 0);
    assert_eq!(std::fs::read(work.join("report.json")).unwrap(), first);

    assert_eq!(
        real_request_count(),
        before,
        "offline runs never build a real client"
    );
}

#[test]
fn refresh_recomputes_everything() {
    let case = fixture("ID115");
    let out = tempfile::tempdir().unwrap();
    let mut cfg = config(out.path());
    run_case(&case, &cfg, &Stubs::from_dir(&case.join("stubs")).clients()).unwrap();
    cfg.refresh = true;
    let stubs = Stubs::from_dir(&case.join("stubs"));
    run_case(&case, &cfg, &stubs.clients()).unwrap();
    assert_eq!(stubs.llm.calls(), 2);
    assert_eq!(stubs.search.calls(), 1);
}

#[test]
fn undecodable_video_and_refusal_need_review() {
    let case = fixture("refusal-case");
    let out = tempfile::tempdir().unwrap();
    let stubs = Stubs::from_dir(&case.join("stubs"));
    let status = run_case(&case, &config(out.path()), &stubs.clients()).unwrap();
    assert_eq!(status.stage, Stage::Reported);
    assert!(status.human_review_required);
    assert_eq!(status.reasons.len(), 2, "{:?}", status.reasons);
    assert!(status.reasons[0].starts_with("decode failure: broken.mp4"));
    assert!(status.reasons[1].contains("refused"));

    let work = out.path().join("refusal-case");
    let report = read_report(&work);
    assert!(report.human_review_required);
    assert!(report.human_review_reason.contains("decode failure"));
    assert!(report.human_review_reason.contains("refused"));
    assert!(report.cross_validation.is_none());
    assert!(report.forensic.is_none());
    // the still image still yields a keyframe
    assert_eq!(report.keyframe_manifest.len(), 1);
    assert_eq!(report.keyframe_manifest[0].frame.asset_id, "photo");
    let md = std::fs::read_to_string(work.join("report.md")).unwrap();
    assert!(md.contains("Forensic analysis: not available: cross-validation output is absent"));
    assert!(md.contains("Cross-validation: not available"));
}

#[test]
fn missing_forensic_output_is_reported_as_absent() {
    let case = fixture("ID115");
    let out = tempfile::tempdir().unwrap();
    let crossval = std::fs::read_to_string(case.join("stubs/llm/crossval.txt")).unwrap();
    let llm = StubLlm::scripted(vec![
        StubReply {
            text: Some(crossval),
            ..Default::default()
        },
        StubReply {
            text: Some("no structured answer".into()),
            ..Default::default()
        },
    ]);
    let stubs = Stubs::from_dir(&case.join("stubs")).with_llm(llm);
    let status = run_case(&case, &config(out.path()), &stubs.clients()).unwrap();
    assert_eq!(status.stage, Stage::Reported);
    assert!(status.human_review_required);
    assert!(status.reasons[0].starts_with("forensic analysis: no usable model output"));
    let md = std::fs::read_to_string(out.path().join("ID115/report.md")).unwrap();
    assert!(md.contains("Forensic analysis: not available"));
    assert!(md.contains("48.9781"));
}

#[test]
fn unavailable_clients_skip_stages_with_reasons() {
    let case = fixture("ID115");
    let out = tempfile::tempdir().unwrap();
    let clients = Clients {
        decoder: Arc::new(BuiltinDecoder::default()),
        sidecar: None,
        transcriber: Err("TRANSCRIBE_API_KEY is not set".into()),
        search: Err("SEARCH_API_KEY is not set".into()),
        fetcher: Ok(Arc::new(
            StubFetcher::from_dir(&case.join("stubs")).unwrap(),
        )),
        llm: Err("LLM_API_KEY is not set".into()),
        notes: Vec::new(),
    };
    let status = run_case(&case, &config(out.path()), &clients).unwrap();
    assert_eq!(status.stage, Stage::Reported);
    assert!(status.human_review_required);
    let report = read_report(&out.path().join("ID115"));
    let rec = |name: &str| {
        report
            .stages
            .iter()
            .find(|s| s.stage == name)
            .unwrap()
            .clone()
    };
    assert_eq!(rec("transcription").outcome, StageOutcome::Skipped);
    assert_eq!(rec("evidence").outcome, StageOutcome::Completed);
    assert!(rec("evidence")
        .notes
        .contains(&"SEARCH_API_KEY is not set".to_string()));
    assert!(rec("cross_validation").notes[0].contains("LLM_API_KEY"));
    // only the media link was crawled
    assert_eq!(report.sources.len(), 1);
    assert!(!report.keyframe_manifest.is_empty());
}

#[test]
fn partial_modes_advance_only_their_stages() {
    let case = fixture("ID115");
    let out = tempfile::tempdir().unwrap();
    let cfg = config(out.path());
    let work = out.path().join("ID115");

    let stubs = Stubs::from_dir(&case.join("stubs"));
    let s = run_case_with(&case, &cfg, &stubs.clients(), RunMode::ReportOnly).unwrap();
    assert_eq!(s.stage, Stage::Reported);
    assert_eq!(stubs.total_calls(), 0);
    let empty = read_report(&work);
    assert!(empty.stages[1..]
        .iter()
        .all(|r| r.outcome == StageOutcome::Skipped));

    let s = run_case_with(&case, &cfg, &stubs.clients(), RunMode::EvidenceOnly).unwrap();
    assert_eq!(s.stage, Stage::EvidenceDone);
    assert!(work.join("evidence.json").is_file());
    assert!(!work.join("keyframes.json").exists());
    assert_eq!(stubs.llm.calls(), 0);

    let s = run_case_with(&case, &cfg, &stubs.clients(), RunMode::MediaOnly).unwrap();
    assert_eq!(
        s.stage,
        Stage::EvidenceDone,
        "evidence is read back from cache"
    );
    assert!(work.join("keyframes.json").is_file());
    assert!(work.join("transcripts.json").is_file());

    let s = run_case_with(&case, &cfg, &stubs.clients(), RunMode::ReportOnly).unwrap();
    assert_eq!(s.stage, Stage::Reported);
    let report = read_report(&work);
    assert!(report.cross_validation.is_none());
    assert_eq!(stubs.llm.calls(), 0);
}

#[test]
fn empty_metadata_skips_retrieval_only() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("EMPTY1");
    std::fs::create_dir(&case).unwrap();
    std::fs::write(case.join("metadata.json"), "{}").unwrap();
    std::fs::copy(fixture("refusal-case/photo.jpg"), case.join("photo.jpg")).unwrap();
    let stubs = Stubs::from_dir(&fixture("ID115/stubs"));
    let status = run_case(&case, &config(&dir.path().join("out")), &stubs.clients()).unwrap();
    assert_eq!(status.stage, Stage::Reported);
    assert_eq!(stubs.search.calls(), 0);
    let report = read_report(&dir.path().join("out/EMPTY1"));
    let ev = report
        .stages
        .iter()
        .find(|s| s.stage == "evidence")
        .unwrap();
    assert_eq!(ev.outcome, StageOutcome::Skipped);
    assert_eq!(report.keyframe_manifest.len(), 1);
}

#[test]
fn invalid_inputs_are_fatal() {
    let out = tempfile::tempdir().unwrap();
    let stubs = Stubs::from_dir(&fixture("ID115/stubs"));
    assert!(run_case(
        Path::new("/nonexistent/case"),
        &config(out.path()),
        &stubs.clients()
    )
    .is_err());

    let bad = PipelineConfig {
        search_k: 0,
        ..config(out.path())
    };
    assert!(run_case(&fixture("ID115"), &bad, &stubs.clients()).is_err());

    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("metadata.json"), r#"{"title": "x y z"}"#).unwrap();
    assert!(
        run_case(dir.path(), &config(out.path()), &stubs.clients()).is_err(),
        "no media"
    );
}

#[test]
fn offline_config_builds_stub_clients() {
    let case = fixture("ID115");
    let out = tempfile::tempdir().unwrap();
    let cfg = config(out.path());
    let clients = Clients::from_config(&cfg, &case);
    assert!(clients.transcriber.is_ok());
    assert!(clients.search.is_ok());
    assert!(clients.fetcher.is_ok());
    assert!(clients.llm.is_ok());

    let missing = Clients::from_config(&cfg, out.path());
    assert!(missing.llm.err().unwrap().contains("offline LLM fixture"));
}
