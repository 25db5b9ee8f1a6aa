use std::time::{Duration, Instant};

use image::{Rgb, RgbImage};
use serde_json::json;
use vps_core::embed::{embed_frames, EmbedderConfig, EmbedderKind};
use vps_core::media::FrameSequence;
use vps_core::model::FrameRef;
use vps_core::shots::{detect_shots, DetectorKind, ShotDetectorConfig};
use vps_core::sidecar::{Sidecar, SidecarError, SidecarProcess};

fn fake(extra: &[&str]) -> Vec<String> {
    let mut cmd = vec![env!("CARGO_BIN_EXE_vps-fake-sidecar").to_string()];
    cmd.extend(extra.iter().map(|s| s.to_string()));
    cmd
}

fn solid(rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(16, 16, Rgb(rgb))
}

#[test]
fn handshake_reports_capabilities() {
    let sc = Sidecar::start(&fake(&["--dim", "12"]), Duration::from_secs(10)).unwrap();
    let caps = sc.capabilities();
    assert_eq!(caps.version, "vps/1");
    assert_eq!(caps.embedding_dim, 12);
    assert!(caps.supports_shot_scores);
}

#[test]
fn declared_handshake_errors() {
    let err = Sidecar::start(
        &fake(&["--fail-hello", "model_unavailable"]),
        Duration::from_secs(10),
    )
    .err()
    .unwrap();
    assert!(matches!(err, SidecarError::Remote { ref code, .. } if code == "model_unavailable"));
    let err = Sidecar::start(&fake(&["--protocol", "vps/0"]), Duration::from_secs(10))
        .err()
        .unwrap();
    assert!(matches!(err, SidecarError::Remote { ref code, .. } if code == "version_mismatch"));
}

#[test]
fn pipelined_requests_come_back_in_order() {
    let mut p = SidecarProcess::spawn(&fake(&[]), Duration::from_secs(10)).unwrap();
    p.handshake().unwrap();
    let frames = json!({ "frames": ["AAAA", "AAAA", "BBBB"] });
    let mut sent = Vec::new();
    for i in 0..100 {
        let op = if i % 2 == 0 { "embed" } else { "shot_scores" };
        sent.push(p.send(op, frames.clone()).unwrap());
    }
    for (i, id) in sent.iter().enumerate() {
        let (got, body) = p.recv().unwrap();
        assert_eq!(got, *id);
        if i % 2 == 0 {
            assert_eq!(body["vectors"].as_array().unwrap().len(), 3);
        } else {
            assert_eq!(body["scores"], json!([0.02, 0.97]));
        }
    }
}

#[test]
fn remote_errors_are_surfaced_per_request() {
    let mut p = SidecarProcess::spawn(&fake(&[]), Duration::from_secs(10)).unwrap();
    p.handshake().unwrap();
    let err = p
        .call("shot_scores", json!({ "frames": ["AAAA"] }))
        .unwrap_err();
    assert!(matches!(err, SidecarError::Remote { ref code, .. } if code == "need_two_frames"));
    // the stream stays usable afterwards
    assert!(p.call("embed", json!({ "frames": ["AAAA"] })).is_ok());
}

#[test]
fn dead_sidecar_is_a_transport_error() {
    let mut p =
        SidecarProcess::spawn(&fake(&["--die-after", "3"]), Duration::from_secs(10)).unwrap();
    p.handshake().unwrap();
    for _ in 0..2 {
        p.call("embed", json!({ "frames": ["AAAA"] })).unwrap();
    }
    let start = Instant::now();
    let err = p.call("embed", json!({ "frames": ["AAAA"] })).unwrap_err();
    assert!(err.is_transport(), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn silent_sidecar_hits_the_read_deadline() {
    let mut p =
        SidecarProcess::spawn(&fake(&["--hang-after", "1"]), Duration::from_millis(300)).unwrap();
    p.handshake().unwrap();
    let start = Instant::now();
    let err = p.call("embed", json!({ "frames": ["AAAA"] })).unwrap_err();
    assert!(matches!(err, SidecarError::Timeout { .. }), "{err}");
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[test]
fn missing_executable_fails_to_spawn() {
    let err = Sidecar::start(
        &["/nonexistent/sidecar".to_string()],
        Duration::from_secs(1),
    )
    .err()
    .unwrap();
    assert!(matches!(err, SidecarError::Spawn { .. }));
}

#[test]
fn sidecar_backs_detection_and_embedding() {
    let sc = Sidecar::start(&fake(&["--dim", "6"]), Duration::from_secs(10)).unwrap();
    let mut imgs = vec![solid([255, 0, 0]); 6];
    imgs.extend(vec![solid([0, 0, 255]); 6]);
    let seq = FrameSequence {
        asset_id: "v".into(),
        frames: imgs
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, img)| {
                (
                    FrameRef {
                        asset_id: "v".into(),
                        frame_index: i as u64,
                        timestamp_s: i as f64 * 0.5,
                    },
                    img,
                )
            })
            .collect(),
        native_fps: 2.0,
        sample_stride: 1,
    };
    let cfg = ShotDetectorConfig {
        detector: DetectorKind::Sidecar,
        ..Default::default()
    };
    let shots = detect_shots(&seq, &cfg, Some(&sc)).unwrap();
    let spans: Vec<_> = shots.iter().map(|s| (s.start_frame, s.end_frame)).collect();
    assert_eq!(spans, vec![(0, 5), (6, 11)]);

    let refs: Vec<&RgbImage> = imgs.iter().collect();
    let ecfg = EmbedderConfig {
        embedder: EmbedderKind::Sidecar,
        fallback_to_classical: false,
        ..Default::default()
    };
    let embs = embed_frames(&refs, &ecfg, Some(&sc)).unwrap();
    assert_eq!(embs.len(), 12);
    assert!(embs
        .iter()
        .all(|e| e.dim() == 6 && e.extractor_id() == "sidecar:fake-embedder"));
    assert_eq!(embs[0], embs[1]);
    assert_ne!(embs[0], embs[6]);
}

#[test]
fn embedder_falls_back_without_sidecar() {
    let img = solid([1, 2, 3]);
    let cfg = EmbedderConfig {
        embedder: EmbedderKind::Sidecar,
        ..Default::default()
    };
    let e = embed_frames(&[&img], &cfg, None).unwrap();
    assert_eq!(e[0].extractor_id(), "classical-v1");
    let strict = EmbedderConfig {
        fallback_to_classical: false,
        ..cfg
    };
    assert!(embed_frames(&[&img], &strict, None).is_err());
}
