use image::Rgb;
use vps_core::media::synth::{self, SynthAudio};
use vps_core::media::{AudioTrack, BuiltinDecoder, DecodeError, MediaDecoder};

fn close(a: &Rgb<u8>, b: [u8; 3], tol: i32) -> bool {
    a.0.iter()
        .zip(b)
        .all(|(x, y)| (*x as i32 - y as i32).abs() <= tol)
}

#[test]
fn solid_red_four_seconds_gives_eight_red_frames() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("red.mp4");
    let frames = vec![synth::solid(64, 48, [255, 0, 0]); 4 * 10];
    synth::write_mp4(&path, &frames, 10, None).unwrap();

    let dec = BuiltinDecoder::default();
    let seq = dec.decode_video("red", &path, 2.0).unwrap();
    assert_eq!(seq.len(), 8);
    assert_eq!(seq.sample_stride, 5);
    assert!((seq.native_fps - 10.0).abs() < 1e-9);
    for (i, (fref, img)) in seq.frames.iter().enumerate() {
        assert_eq!(fref.frame_index, i as u64 * 5);
        assert!((fref.timestamp_s - i as f64 * 0.5).abs() < 1e-9);
        assert_eq!(img.dimensions(), (64, 48));
        // the RGB->YUV->RGB round trip through the codec's colour conversion
        // lands saturated red at about (236, 14, 13)
        assert!(
            img.pixels().all(|p| close(p, [255, 0, 0], 24)),
            "frame {i}: {:?}",
            img.get_pixel(0, 0)
        );
    }
    let first = &seq.frames[0].1;
    assert!(seq.frames.iter().all(|(_, img)| img == first));
    assert!((dec.probe_duration(&path).unwrap() - 4.0).abs() < 1e-9);
}

#[test]
fn ten_seconds_at_thirty_fps_samples_twenty_frames() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("long.mp4");
    let frames: Vec<_> = (0..300)
        .map(|i| synth::solid(32, 32, [(i % 256) as u8, 40, 90]))
        .collect();
    synth::write_mp4(&path, &frames, 30, None).unwrap();
    let seq = BuiltinDecoder::default()
        .decode_video("a", &path, 2.0)
        .unwrap();
    assert_eq!(seq.len(), 20);
    let ts: Vec<f64> = seq.frames.iter().map(|(f, _)| f.timestamp_s).collect();
    for (j, t) in ts.iter().enumerate() {
        assert!((t - j as f64 * 0.5).abs() < 1e-9);
    }
}

fn dominant_frequency(samples: &[i16], rate: f64, candidates: impl Iterator<Item = f64>) -> f64 {
    // direct DFT magnitude at each candidate frequency
    let mut best = (0.0, f64::MIN);
    for f in candidates {
        let (mut re, mut im) = (0.0, 0.0);
        for (n, s) in samples.iter().enumerate() {
            let phase = 2.0 * std::f64::consts::PI * f * n as f64 / rate;
            re += *s as f64 * phase.cos();
            im += *s as f64 * phase.sin();
        }
        let mag = re.hypot(im);
        if mag > best.1 {
            best = (f, mag);
        }
    }
    best.0
}

#[test]
fn tone_track_decodes_to_440_hz() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tone.mp4");
    let frames = vec![synth::solid(32, 32, [0, 0, 0]); 20];
    let pcm = synth::tone(440.0, 2.0, 44_100, 0.5);
    synth::write_mp4(
        &path,
        &frames,
        10,
        Some(SynthAudio {
            sample_rate: 44_100,
            samples: &pcm,
        }),
    )
    .unwrap();
    let AudioTrack::Pcm(stream) = BuiltinDecoder::default().extract_audio(&path).unwrap() else {
        panic!("expected audio");
    };
    assert_eq!(stream.sample_rate, 16_000);
    assert!((stream.duration_s() - 2.0).abs() < 1.0 / 16_000.0 + 1e-9);
    let window = &stream.samples[..8000];
    let f = dominant_frequency(window, 16_000.0, (200..=800).step_by(10).map(f64::from));
    assert_eq!(f, 440.0);
}

#[test]
fn video_without_audio_is_marked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mute.mp4");
    synth::write_mp4(&path, &vec![synth::solid(16, 16, [1, 2, 3]); 4], 4, None).unwrap();
    assert_eq!(
        BuiltinDecoder::default().extract_audio(&path).unwrap(),
        AudioTrack::NoAudio
    );
}

#[test]
fn empty_and_garbage_files_fail_to_decode() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.mp4");
    std::fs::write(&empty, b"").unwrap();
    let garbage = dir.path().join("garbage.mp4");
    std::fs::write(&garbage, vec![0xAB; 4096]).unwrap();
    let dec = BuiltinDecoder::default();
    for p in [&empty, &garbage] {
        assert!(matches!(
            dec.decode_video("x", p, 2.0),
            Err(DecodeError::Failure { .. })
        ));
        assert!(dec.extract_audio(p).is_err());
    }
}

#[cfg(unix)]
mod command_decoder {
    use std::os::unix::fs::PermissionsExt;
    use std::path::{Path, PathBuf};

    use vps_core::media::{AudioTrack, CommandDecoder, DecodeError, MediaDecoder};

    fn script(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, format!("#!/bin/sh\n{body}\n")).unwrap();
        std::fs::set_permissions(&p, std::fs::Permissions::from_mode(0o755)).unwrap();
        p
    }

    const PROBE_AV: &str = r#"cat <<'JSON'
{"streams":[{"codec_type":"video","width":640,"height":360,"r_frame_rate":"25/1"},{"codec_type":"audio"}],"format":{"duration":"3.000000"}}
JSON"#;

    fn setup(probe: &str, decoder: &str) -> (tempfile::TempDir, CommandDecoder, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let probe = script(dir.path(), "probe", probe);
        let dec = script(dir.path(), "decode", decoder);
        let media = dir.path().join("clip.mp4");
        std::fs::write(&media, b"not inspected").unwrap();
        (dir, CommandDecoder::new(dec, probe), media)
    }

    #[test]
    fn probes_duration() {
        let (_d, dec, media) = setup(PROBE_AV, "exit 0");
        assert_eq!(dec.probe_duration(&media).unwrap(), 3.0);
    }

    #[test]
    fn raw_frames_are_split_and_timestamped() {
        // 640x360 at max side 480 scales to 480x270; three frames.
        let frame = 480 * 270 * 3;
        let (dir, dec, media) = setup(
            PROBE_AV,
            &format!(
                "echo \"$@\" > \"$(dirname \"$0\")/args\"\nhead -c {} /dev/zero",
                frame * 3
            ),
        );
        let seq = dec.decode_video("clip", &media, 2.0).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.native_fps, 25.0);
        let (f, img) = &seq.frames[2];
        assert_eq!((img.width(), img.height()), (480, 270));
        assert_eq!(f.timestamp_s, 1.0);
        assert_eq!(f.frame_index, 25);
        let args = std::fs::read_to_string(dir.path().join("args")).unwrap();
        assert!(args.contains("fps=2,scale=480:270"), "{args}");
        assert!(args.contains(&media.display().to_string()));
        assert!(args.contains("rgb24"));
    }

    #[test]
    fn pcm_is_read_as_little_endian_mono() {
        let (_d, dec, media) = setup(PROBE_AV, r"printf '\001\000\377\377'");
        match dec.extract_audio(&media).unwrap() {
            AudioTrack::Pcm(p) => {
                assert_eq!(p.sample_rate, 16_000);
                assert_eq!(p.samples, vec![1, -1]);
            }
            AudioTrack::NoAudio => panic!("expected audio"),
        }
    }

    #[test]
    fn video_only_files_have_no_audio() {
        let probe = r#"echo '{"streams":[{"codec_type":"video","width":8,"height":8}],"format":{"duration":"1"}}'"#;
        let (_d, dec, media) = setup(probe, "exit 1");
        assert!(matches!(
            dec.extract_audio(&media).unwrap(),
            AudioTrack::NoAudio
        ));
    }

    #[test]
    fn failing_tools_surface_stderr() {
        let (_d, dec, media) = setup(PROBE_AV, "echo 'moov atom not found' >&2; exit 1");
        let err = dec.decode_video("clip", &media, 2.0).unwrap_err();
        match err {
            DecodeError::Failure { reason, .. } => {
                assert!(reason.contains("moov atom not found"), "{reason}")
            }
            other => panic!("{other:?}"),
        }
        let (_d, dec, media) = setup("echo garbage", "exit 0");
        assert!(dec.probe_duration(&media).is_err());
        let (_d, dec, media) = setup(PROBE_AV, "exit 0");
        assert!(
            dec.decode_video("clip", &media, 2.0).is_err(),
            "empty output is a failure"
        );
        assert!(matches!(
            dec.decode_video("clip", &media, 0.0),
            Err(DecodeError::BadSampleRate(_))
        ));
    }

    #[test]
    fn missing_executable_is_a_decode_failure() {
        let dec = CommandDecoder::new("/nonexistent/ffmpeg", "/nonexistent/ffprobe");
        assert!(dec.probe_duration(Path::new("x.mp4")).is_err());
    }
}
