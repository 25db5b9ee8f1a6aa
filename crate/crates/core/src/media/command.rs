use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use image::RgbImage;
use serde::Deserialize;

use super::{
    sample_stride, AudioTrack, DecodeError, FrameSequence, MediaDecoder, PcmStream,
    PCM_SAMPLE_RATE, WORKING_MAX_SIDE,
};
use crate::model::FrameRef;

/// Drives an ffmpeg-compatible decoder and its ffprobe-compatible prober as subprocesses.
#[derive(Debug, Clone)]
pub struct CommandDecoder {
    pub decoder_path: PathBuf,
    pub probe_path: PathBuf,
    pub max_side: u32,
}

#[derive(Debug, Deserialize)]
struct Probe {
    #[serde(default)]
    streams: Vec<ProbeStream>,
    #[serde(default)]
    format: Option<ProbeFormat>,
}

#[derive(Debug, Deserialize)]
struct ProbeStream {
    codec_type: String,
    #[serde(default)]
    width: Option<u32>,
    #[serde(default)]
    height: Option<u32>,
    #[serde(default)]
    r_frame_rate: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ProbeFormat {
    #[serde(default)]
    duration: Option<String>,
}

fn parse_rate(text: &str) -> Option<f64> {
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n.trim().parse::<f64>().ok()?, d.trim().parse::<f64>().ok()?),
        None => (text.trim().parse::<f64>().ok()?, 1.0),
    };
    (den != 0.0 && num > 0.0).then(|| num / den)
}

/// Even output dimensions with the longer side at most `max_side`.
fn scaled_dims(w: u32, h: u32, max_side: u32) -> (u32, u32) {
    let longer = w.max(h).max(1);
    let scale = if longer > max_side {
        max_side as f64 / longer as f64
    } else {
        1.0
    };
    let even = |v: f64| ((v / 2.0).round() as u32 * 2).max(2);
    (even(w as f64 * scale), even(h as f64 * scale))
}

impl CommandDecoder {
    pub fn new(decoder_path: impl Into<PathBuf>, probe_path: impl Into<PathBuf>) -> Self {
        Self {
            decoder_path: decoder_path.into(),
            probe_path: probe_path.into(),
            max_side: WORKING_MAX_SIDE,
        }
    }

    fn run(&self, program: &Path, args: &[&str], media: &Path) -> Result<Vec<u8>, DecodeError> {
        let output = Command::new(program)
            .args(args.iter().copied().take_while(|a| *a != "{input}"))
            .arg(media)
            .args(args.iter().copied().skip_while(|a| *a != "{input}").skip(1))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .output()
            .map_err(|e| DecodeError::failure(media, format!("{}: {e}", program.display())))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(DecodeError::failure(
                media,
                format!(
                    "{} exited with {}: {}",
                    program.display(),
                    output.status,
                    stderr.trim()
                ),
            ));
        }
        Ok(output.stdout)
    }

    fn probe(&self, path: &Path) -> Result<Probe, DecodeError> {
        let out = self.run(
            &self.probe_path,
            &[
                "-v",
                "error",
                "-show_entries",
                "stream=codec_type,width,height,r_frame_rate:format=duration",
                "-of",
                "json",
                "{input}",
            ],
            path,
        )?;
        serde_json::from_slice(&out)
            .map_err(|e| DecodeError::failure(path, format!("probe output: {e}")))
    }
}

impl MediaDecoder for CommandDecoder {
    fn probe_duration(&self, path: &Path) -> Result<f64, DecodeError> {
        let probe = self.probe(path)?;
        probe
            .format
            .and_then(|f| f.duration)
            .and_then(|d| d.trim().parse::<f64>().ok())
            .filter(|d| *d > 0.0 && d.is_finite())
            .ok_or_else(|| DecodeError::failure(path, "probe reported no duration"))
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
        let probe = self.probe(path)?;
        let video = probe
            .streams
            .iter()
            .find(|s| s.codec_type == "video")
            .ok_or_else(|| DecodeError::failure(path, "no video stream"))?;
        let (w, h) = match (video.width, video.height) {
            (Some(w), Some(h)) if w > 0 && h > 0 => (w, h),
            _ => return Err(DecodeError::failure(path, "probe reported no dimensions")),
        };
        let native_fps = video
            .r_frame_rate
            .as_deref()
            .and_then(parse_rate)
            .unwrap_or(sample_fps);
        let (ow, oh) = scaled_dims(w, h, self.max_side);
        let filter = format!("fps={sample_fps},scale={ow}:{oh}");
        let raw = self.run(
            &self.decoder_path,
            &[
                "-v", "error", "-i", "{input}", "-vf", &filter, "-f", "rawvideo", "-pix_fmt",
                "rgb24", "-",
            ],
            path,
        )?;
        let frame_len = (ow * oh * 3) as usize;
        let frames: Vec<(FrameRef, RgbImage)> = raw
            .chunks_exact(frame_len)
            .enumerate()
            .filter_map(|(j, bytes)| {
                let t = j as f64 / sample_fps;
                let img = RgbImage::from_raw(ow, oh, bytes.to_vec())?;
                Some((
                    FrameRef {
                        asset_id: asset_id.to_string(),
                        frame_index: (t * native_fps).round() as u64,
                        timestamp_s: t,
                    },
                    img,
                ))
            })
            .collect();
        if frames.is_empty() {
            return Err(DecodeError::failure(path, "decoder produced no frames"));
        }
        Ok(FrameSequence {
            asset_id: asset_id.to_string(),
            frames,
            native_fps,
            sample_stride: sample_stride(native_fps, sample_fps),
        })
    }

    fn extract_audio(&self, path: &Path) -> Result<AudioTrack, DecodeError> {
        let probe = self.probe(path)?;
        if !probe.streams.iter().any(|s| s.codec_type == "audio") {
            return Ok(AudioTrack::NoAudio);
        }
        let rate = PCM_SAMPLE_RATE.to_string();
        let raw = self.run(
            &self.decoder_path,
            &[
                "-v", "error", "-i", "{input}", "-vn", "-ac", "1", "-ar", &rate, "-f", "s16le", "-",
            ],
            path,
        )?;
        Ok(AudioTrack::Pcm(PcmStream {
            sample_rate: PCM_SAMPLE_RATE,
            samples: raw
                .chunks_exact(2)
                .map(|b| i16::from_le_bytes([b[0], b[1]]))
                .collect(),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates_and_dims() {
        assert_eq!(
            parse_rate("30000/1001").map(|r| (r * 1000.0).round()),
            Some(29970.0)
        );
        assert_eq!(parse_rate("25"), Some(25.0));
        assert_eq!(parse_rate("0/0"), None);
        assert_eq!(scaled_dims(1920, 1080, 480), (480, 270));
        assert_eq!(scaled_dims(100, 51, 480), (100, 52));
    }
}
