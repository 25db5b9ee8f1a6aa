//! Scripted encoder for synthetic test videos (H.264 + 16-bit PCM in MP4).

use std::path::Path;

use image::{Rgb, RgbImage};
use openh264::encoder::{Encoder, EncoderConfig, FrameType, RateControlMode};
use openh264::formats::{RgbSliceU8, YUVBuffer};
use openh264::OpenH264API;
use thiserror::Error;

use super::mp4::{self, AvcConfig, TrackData, WriteEntry};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("no frames to encode")]
    NoFrames,
    #[error("frame dimensions must be even and equal, got {0}x{1}")]
    BadDimensions(u32, u32),
    #[error("encoder: {0}")]
    Encoder(#[from] openh264::Error),
    #[error("encoder produced no parameter sets")]
    NoParameterSets,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub fn solid(width: u32, height: u32, rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(width, height, Rgb(rgb))
}

/// Two-colour checkerboard with `cell`-pixel squares.
pub fn checker(width: u32, height: u32, cell: u32, a: [u8; 3], b: [u8; 3]) -> RgbImage {
    let cell = cell.max(1);
    RgbImage::from_fn(width, height, |x, y| {
        if ((x / cell) + (y / cell)).is_multiple_of(2) {
            Rgb(a)
        } else {
            Rgb(b)
        }
    })
}

/// Sine tone as signed 16-bit PCM.
pub fn tone(freq_hz: f64, seconds: f64, sample_rate: u32, amplitude: f64) -> Vec<i16> {
    let n = (seconds * sample_rate as f64).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate as f64;
            (amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin() * i16::MAX as f64).round()
                as i16
        })
        .collect()
}

pub struct SynthAudio<'a> {
    pub sample_rate: u32,
    pub samples: &'a [i16],
}

/// Encodes frames at `fps` into an in-memory MP4, optionally with a mono PCM track.
pub fn encode_mp4(
    frames: &[RgbImage],
    fps: u32,
    audio: Option<SynthAudio<'_>>,
) -> Result<Vec<u8>, SynthError> {
    let first = frames.first().ok_or(SynthError::NoFrames)?;
    let (w, h) = first.dimensions();
    if w % 2 != 0 || h % 2 != 0 || w == 0 || h == 0 {
        return Err(SynthError::BadDimensions(w, h));
    }
    let fps = fps.max(1);
    let config = EncoderConfig::new()
        .set_bitrate_bps(8_000_000)
        .enable_skip_frame(false)
        .max_frame_rate(fps as f32)
        .rate_control_mode(RateControlMode::Off);
    let mut encoder = Encoder::with_api_config(OpenH264API::from_source(), config)?;

    let mut sps: Option<Vec<u8>> = None;
    let mut pps: Option<Vec<u8>> = None;
    let mut samples = Vec::with_capacity(frames.len());
    let mut sync = Vec::with_capacity(frames.len());
    for frame in frames {
        if frame.dimensions() != (w, h) {
            let (fw, fh) = frame.dimensions();
            return Err(SynthError::BadDimensions(fw, fh));
        }
        let yuv =
            YUVBuffer::from_rgb8_source(RgbSliceU8::new(frame.as_raw(), (w as usize, h as usize)));
        let bitstream = encoder.encode(&yuv)?;
        let kind = bitstream.frame_type();
        let stream = bitstream.to_vec();
        let mut sample = Vec::with_capacity(stream.len());
        for nal in mp4::split_annexb(&stream) {
            match nal[0] & 0x1f {
                7 => {
                    sps.get_or_insert_with(|| nal.to_vec());
                }
                8 => {
                    pps.get_or_insert_with(|| nal.to_vec());
                }
                9 => {}
                _ => {
                    sample.extend_from_slice(&(nal.len() as u32).to_be_bytes());
                    sample.extend_from_slice(nal);
                }
            }
        }
        samples.push((sample, 1000));
        sync.push(matches!(kind, FrameType::IDR | FrameType::I));
    }
    let (sps, pps) = match (sps, pps) {
        (Some(s), Some(p)) if s.len() >= 4 => (s, p),
        _ => return Err(SynthError::NoParameterSets),
    };
    let profile = [sps[1], sps[2], sps[3]];
    let mut tracks = vec![TrackData {
        entry: WriteEntry::Avc {
            width: w as u16,
            height: h as u16,
            config: AvcConfig {
                nal_length_size: 4,
                sps: vec![sps],
                pps: vec![pps],
            },
            profile,
        },
        timescale: fps * 1000,
        samples,
        sync: Some(sync),
        samples_per_chunk: 1,
    }];
    if let Some(audio) = audio {
        if !audio.samples.is_empty() {
            tracks.push(TrackData {
                entry: WriteEntry::PcmS16Le {
                    channels: 1,
                    sample_rate: audio.sample_rate,
                },
                timescale: audio.sample_rate,
                samples: audio
                    .samples
                    .iter()
                    .map(|s| (s.to_le_bytes().to_vec(), 1))
                    .collect(),
                sync: None,
                samples_per_chunk: audio.sample_rate as usize,
            });
        }
    }
    Ok(mp4::write_movie(&tracks))
}

pub fn write_mp4(
    path: &Path,
    frames: &[RgbImage],
    fps: u32,
    audio: Option<SynthAudio<'_>>,
) -> Result<(), SynthError> {
    let bytes = encode_mp4(frames, fps, audio)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
