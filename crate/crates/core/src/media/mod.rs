//! Media decoding behind a pluggable interface.
//!
//! Two decoders ship: [`BuiltinDecoder`] (pure library path: MP4 demux,
//! OpenH264 video, symphonia audio) and [`CommandDecoder`], which shells out
//! to an ffmpeg-compatible executable configured by path.

use std::path::{Path, PathBuf};

use image::RgbImage;
use thiserror::Error;

use crate::model::FrameRef;

mod builtin;
mod command;
pub mod mp4;
pub mod synth;

pub use builtin::BuiltinDecoder;
pub use command::CommandDecoder;

/// Canonical audio format handed to transcription.
pub const PCM_SAMPLE_RATE: u32 = 16_000;

/// Frames are downscaled to this longer side at decode time.
pub const WORKING_MAX_SIDE: u32 = 480;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("cannot decode {path}: {reason}")]
    Failure { path: PathBuf, reason: String },
    #[error("invalid sample rate {0}")]
    BadSampleRate(f64),
}

impl DecodeError {
    pub fn failure(path: &Path, reason: impl std::fmt::Display) -> Self {
        DecodeError::Failure {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub asset_id: String,
    pub frames: Vec<(FrameRef, RgbImage)>,
    pub native_fps: f64,
    pub sample_stride: usize,
}

impl FrameSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn images(&self) -> impl Iterator<Item = &RgbImage> {
        self.frames.iter().map(|(_, img)| img)
    }
}

/// 16 kHz mono signed 16-bit PCM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PcmStream {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl PcmStream {
    pub fn duration_s(&self) -> f64 {
        if self.sample_rate == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Little-endian byte payload of `samples[offset..offset+len]`.
    pub fn bytes(&self, offset: usize, len: usize) -> Vec<u8> {
        let end = (offset + len).min(self.samples.len());
        let start = offset.min(end);
        self.samples[start..end]
            .iter()
            .flat_map(|s| s.to_le_bytes())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AudioTrack {
    NoAudio,
    Pcm(PcmStream),
}

pub trait MediaDecoder: Send + Sync {
    /// Container duration in seconds.
    fn probe_duration(&self, path: &Path) -> Result<f64, DecodeError>;

    /// Frames sampled uniformly at `sample_fps`.
    fn decode_video(
        &self,
        asset_id: &str,
        path: &Path,
        sample_fps: f64,
    ) -> Result<FrameSequence, DecodeError>;

    /// Audio track as 16 kHz mono PCM.
    fn extract_audio(&self, path: &Path) -> Result<AudioTrack, DecodeError>;
}

/// Picks the presentation indices to keep when sampling `n_frames` at `native_fps`
/// down to `sample_fps`. Returns `(index, target_time)` pairs.
pub(crate) fn sample_plan(n_frames: usize, native_fps: f64, sample_fps: f64) -> Vec<usize> {
    if n_frames == 0 || !(native_fps > 0.0) || !(sample_fps > 0.0) {
        return Vec::new();
    }
    let duration = n_frames as f64 / native_fps;
    let mut out = Vec::new();
    let mut j = 0u64;
    loop {
        let t = j as f64 / sample_fps;
        if t >= duration - 1e-9 {
            break;
        }
        let idx = ((t * native_fps).round() as usize).min(n_frames - 1);
        if out.last() != Some(&idx) {
            out.push(idx);
        }
        j += 1;
    }
    out
}

pub(crate) fn sample_stride(native_fps: f64, sample_fps: f64) -> usize {
    if native_fps > 0.0 && sample_fps > 0.0 {
        ((native_fps / sample_fps).round() as usize).max(1)
    } else {
        1
    }
}

/// Downscales so the longer side is at most `max_side`.
pub(crate) fn fit_working_size(img: RgbImage, max_side: u32) -> RgbImage {
    let (w, h) = img.dimensions();
    let longer = w.max(h);
    if longer <= max_side {
        return img;
    }
    let scale = max_side as f64 / longer as f64;
    let nw = ((w as f64 * scale).round() as u32).max(1);
    let nh = ((h as f64 * scale).round() as u32).max(1);
    image::imageops::resize(&img, nw, nh, image::imageops::FilterType::Triangle)
}

/// Linear-interpolation resampler for mono f32 audio.
pub(crate) fn resample_linear(input: &[f32], from_rate: u32, to_rate: u32) -> Vec<f32> {
    if from_rate == to_rate || input.is_empty() {
        return input.to_vec();
    }
    let out_len = (input.len() as u128 * to_rate as u128 / from_rate as u128) as usize;
    let step = from_rate as f64 / to_rate as f64;
    (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let i0 = pos.floor() as usize;
            let frac = (pos - i0 as f64) as f32;
            let a = input[i0.min(input.len() - 1)];
            let b = input[(i0 + 1).min(input.len() - 1)];
            a + (b - a) * frac
        })
        .collect()
}

pub(crate) fn to_i16(samples: &[f32]) -> Vec<i16> {
    samples
        .iter()
        .map(|s| (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16)
        .collect()
}
