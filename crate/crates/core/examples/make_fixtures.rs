//! Regenerates the synthetic media of the bundled fixture cases.
//!
//! cargo run -p vps-core --example make_fixtures -- <fixtures dir>

use std::path::{Path, PathBuf};

use image::RgbImage;
use vps_core::media::synth::{checker, solid, tone, write_mp4, SynthAudio};
use vps_core::media::PCM_SAMPLE_RATE;

const W: u32 = 160;
const H: u32 = 120;
const FPS: u32 = 5;

fn scenes(spec: &[(RgbImage, f64)]) -> Vec<RgbImage> {
    spec.iter()
        .flat_map(|(img, secs)| std::iter::repeat_n(img.clone(), (secs * FPS as f64) as usize))
        .collect()
}

fn video(path: &Path, spec: &[(RgbImage, f64)], tone_hz: f64) {
    let frames = scenes(spec);
    let secs = frames.len() as f64 / FPS as f64;
    let samples = tone(tone_hz, secs, PCM_SAMPLE_RATE, 0.3);
    write_mp4(
        path,
        &frames,
        FPS,
        Some(SynthAudio {
            sample_rate: PCM_SAMPLE_RATE,
            samples: &samples,
        }),
    )
    .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    println!("wrote {} ({secs} s)", path.display());
}

fn main() {
    let root = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("fixtures"));

    let id115 = root.join("ID115");
    std::fs::create_dir_all(&id115).unwrap();
    // Three static scenes over 36 s: two transcription chunks plus a 6 s tail.
    video(
        &id115.join("video1.mp4"),
        &[
            (solid(W, H, [60, 140, 60]), 12.0),
            (checker(W, H, 20, [30, 80, 200], [240, 210, 40]), 12.0),
            (solid(W, H, [170, 70, 50]), 12.0),
        ],
        220.0,
    );
    // Two scenes over 12 s: one chunk.
    video(
        &id115.join("video2.mp4"),
        &[
            (checker(W, H, 10, [200, 200, 200], [40, 40, 40]), 6.0),
            (solid(W, H, [90, 60, 160]), 6.0),
        ],
        440.0,
    );

    let failure = root.join("refusal-case");
    std::fs::create_dir_all(&failure).unwrap();
    // Bytes that no MP4 reader accepts.
    let garbage: Vec<u8> = (0u32..4096)
        .map(|i| (i.wrapping_mul(2654435761) >> 13) as u8)
        .collect();
    std::fs::write(failure.join("broken.mp4"), garbage).unwrap();
    checker(W, H, 16, [210, 180, 120], [70, 110, 60])
        .save(failure.join("photo.jpg"))
        .unwrap();
    println!("wrote {}", failure.display());
}
