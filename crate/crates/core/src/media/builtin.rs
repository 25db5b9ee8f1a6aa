use std::collections::BTreeSet;
use std::fs::File;
use std::path::Path;

use image::RgbImage;
use openh264::decoder::Decoder;
use openh264::formats::YUVSource;
use symphonia::core::audio::SampleBuffer;
use symphonia::core::codecs::{DecoderOptions, CODEC_TYPE_NULL};
use symphonia::core::errors::Error as SymphoniaError;
use symphonia::core::formats::FormatOptions;
use symphonia::core::io::MediaSourceStream;
use symphonia::core::meta::MetadataOptions;
use symphonia::core::probe::Hint;

use super::mp4::{self, SampleEntry, SampleReader};
use super::{
    fit_working_size, resample_linear, sample_plan, sample_stride, to_i16, AudioTrack, DecodeError,
    FrameSequence, MediaDecoder, PcmStream, PCM_SAMPLE_RATE, WORKING_MAX_SIDE,
};
use crate::model::FrameRef;

/// In-process decoder for MP4 files carrying H.264 video and AAC/PCM audio.
#[derive(Debug, Clone)]
pub struct BuiltinDecoder {
    pub max_side: u32,
}

impl Default for BuiltinDecoder {
    fn default() -> Self {
        Self {
            max_side: WORKING_MAX_SIDE,
        }
    }
}

impl MediaDecoder for BuiltinDecoder {
    fn probe_duration(&self, path: &Path) -> Result<f64, DecodeError> {
        let movie = mp4::read_movie(path).map_err(|e| DecodeError::failure(path, e))?;
        let d = movie.duration_s();
        if d > 0.0 && d.is_finite() {
            Ok(d)
        } else {
            Err(DecodeError::failure(path, "zero duration"))
        }
    }

    fn decode_video(
        &self,
        asset_id: &str,
        path: &Path,
        sample_fps: f64,
    ) -> Result<FrameSequence, DecodeError> {
        if !(sample_fps > 0.0 && sample_fps.is_finite()) {
            return Err(DecodeError::BadSampleRate(sample_fps));
        }
        let fail = |reason: &dyn std::fmt::Display| DecodeError::failure(path, reason);
        let movie = mp4::read_movie(path).map_err(|e| fail(&e))?;
        let track = movie.video_track().ok_or_else(|| fail(&"no video track"))?;
        let config = match &track.entry {
            SampleEntry::Avc { config, .. } => config.clone(),
            SampleEntry::Visual { fourcc, .. } | SampleEntry::Other(fourcc) => {
                return Err(fail(&format!(
                    "unsupported video codec {}; configure decoder_path",
                    String::from_utf8_lossy(fourcc)
                )))
            }
            SampleEntry::Audio { .. } => return Err(fail(&"video track has audio entry")),
        };
        if track.samples.is_empty() {
            return Err(fail(&"video track has no samples"));
        }

        let mut pts: Vec<i64> = track.samples.iter().map(|s| s.pts()).collect();
        pts.sort_unstable();
        let pts0 = pts[0];
        let timescale = track.timescale.max(1) as f64;
        let native_fps = track.frame_rate();
        let wanted: BTreeSet<usize> = sample_plan(pts.len(), native_fps, sample_fps)
            .into_iter()
            .collect();

        let mut decoder = Decoder::new().map_err(|e| fail(&e))?;
        let mut reader = SampleReader::open(path).map_err(|e| fail(&e))?;
        let mut header = Vec::new();
        for nal in config.sps.iter().chain(config.pps.iter()) {
            header.extend_from_slice(&[0, 0, 0, 1]);
            header.extend_from_slice(nal);
        }

        let mut frames = Vec::with_capacity(wanted.len());
        let mut out_idx = 0usize;
        let mut errors = 0usize;
        let mut dims: Option<(u32, u32)> = None;
        let mut raw = Vec::new();
        let mut packet = Vec::new();
        let mut rgb = Vec::new();

        let mut keep = |yuv: &openh264::decoder::DecodedYUV<'_>,
                        out_idx: usize,
                        frames: &mut Vec<(FrameRef, RgbImage)>| {
            if !wanted.contains(&out_idx) {
                return;
            }
            let (w, h) = yuv.dimensions();
            rgb.resize(w * h * 3, 0);
            yuv.write_rgb8(&mut rgb);
            let Some(img) = RgbImage::from_raw(w as u32, h as u32, rgb.clone()) else {
                return;
            };
            let mut img = fit_working_size(img, self.max_side);
            match dims {
                None => dims = Some(img.dimensions()),
                Some((dw, dh)) if img.dimensions() != (dw, dh) => {
                    img = image::imageops::resize(
                        &img,
                        dw,
                        dh,
                        image::imageops::FilterType::Triangle,
                    );
                }
                Some(_) => {}
            }
            let t = pts.get(out_idx).copied().unwrap_or(pts0) - pts0;
            frames.push((
                FrameRef {
                    asset_id: asset_id.to_string(),
                    frame_index: out_idx as u64,
                    timestamp_s: t.max(0) as f64 / timescale,
                },
                img,
            ));
        };

        for (i, sample) in track.samples.iter().enumerate() {
            reader.read(sample, &mut raw).map_err(|e| fail(&e))?;
            packet.clear();
            if i == 0 {
                packet.extend_from_slice(&header);
            }
            if let Err(e) = mp4::avcc_to_annexb(&raw, config.nal_length_size, &mut packet) {
                tracing::warn!(path = %path.display(), sample = i, error = %e, "bad sample");
                errors += 1;
                continue;
            }
            match decoder.decode(&packet) {
                Ok(Some(yuv)) => {
                    keep(&yuv, out_idx, &mut frames);
                    out_idx += 1;
                }
                Ok(None) => {}
                Err(e) => {
                    tracing::warn!(path = %path.display(), sample = i, error = %e, "decode error");
                    errors += 1;
                }
            }
        }
        if let Ok(rest) = decoder.flush_remaining() {
            for yuv in rest {
                keep(&yuv, out_idx, &mut frames);
                out_idx += 1;
            }
        }

        if frames.is_empty() {
            return Err(fail(&format!(
                "no frames decoded ({errors} of {} samples failed)",
                track.samples.len()
            )));
        }
        Ok(FrameSequence {
            asset_id: asset_id.to_string(),
            frames,
            native_fps,
            sample_stride: sample_stride(native_fps, sample_fps),
        })
    }

    fn extract_audio(&self, path: &Path) -> Result<AudioTrack, DecodeError> {
        let fail = |reason: &dyn std::fmt::Display| DecodeError::failure(path, reason);
        let movie = mp4::read_movie(path).map_err(|e| fail(&e))?;
        if movie.audio_track().is_none() {
            return Ok(AudioTrack::NoAudio);
        }

        let file = File::open(path).map_err(|e| fail(&e))?;
        let mss = MediaSourceStream::new(Box::new(file), Default::default());
        let mut hint = Hint::new();
        hint.with_extension("mp4");
        let probed = symphonia::default::get_probe()
            .format(
                &hint,
                mss,
                &FormatOptions::default(),
                &MetadataOptions::default(),
            )
            .map_err(|e| fail(&e))?;
        let mut format = probed.format;
        let track = format
            .tracks()
            .iter()
            .find(|t| {
                t.codec_params.codec != CODEC_TYPE_NULL && t.codec_params.sample_rate.is_some()
            })
            .ok_or_else(|| fail(&"audio track uses an unsupported codec"))?;
        let track_id = track.id;
        let source_rate = track.codec_params.sample_rate.unwrap_or(PCM_SAMPLE_RATE);
        let mut decoder = symphonia::default::get_codecs()
            .make(&track.codec_params, &DecoderOptions::default())
            .map_err(|e| fail(&e))?;

        let mut mono: Vec<f32> = Vec::new();
        loop {
            let packet = match format.next_packet() {
                Ok(p) => p,
                Err(SymphoniaError::IoError(e))
                    if e.kind() == std::io::ErrorKind::UnexpectedEof =>
                {
                    break
                }
                Err(SymphoniaError::ResetRequired) => break,
                Err(e) => return Err(fail(&e)),
            };
            if packet.track_id() != track_id {
                continue;
            }
            match decoder.decode(&packet) {
                Ok(buf) => {
                    let spec = *buf.spec();
                    let channels = spec.channels.count().max(1);
                    let mut sb = SampleBuffer::<f32>::new(buf.capacity() as u64, spec);
                    sb.copy_interleaved_ref(buf);
                    mono.extend(
                        sb.samples()
                            .chunks(channels)
                            .map(|frame| frame.iter().sum::<f32>() / channels as f32),
                    );
                }
                Err(SymphoniaError::DecodeError(e)) => {
                    tracing::warn!(path = %path.display(), error = e, "skipping bad audio packet");
                }
                Err(e) => return Err(fail(&e)),
            }
        }

        let resampled = resample_linear(&mono, source_rate, PCM_SAMPLE_RATE);
        Ok(AudioTrack::Pcm(PcmStream {
            sample_rate: PCM_SAMPLE_RATE,
            samples: to_i16(&resampled),
        }))
    }
}
