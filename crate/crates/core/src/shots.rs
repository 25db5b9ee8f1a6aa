//! Shot segmentation over sampled frame sequences.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::FrameSequence;
use crate::model::Shot;
use crate::sidecar::SidecarError;

pub const HUE_BINS: usize = 16;
pub const SAT_BINS: usize = 4;
pub const VAL_BINS: usize = 4;
pub const HSV_BINS: usize = HUE_BINS * SAT_BINS * VAL_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    #[default]
    Histogram,
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShotDetectorConfig {
    pub detector: DetectorKind,
    pub boundary_threshold: f64,
    pub min_shot_len: usize,
    pub sample_fps: f64,
}

impl Default for ShotDetectorConfig {
    fn default() -> Self {
        Self {
            detector: DetectorKind::Histogram,
            boundary_threshold: 0.35,
            min_shot_len: 4,
            sample_fps: 2.0,
        }
    }
}

impl ShotDetectorConfig {
    pub fn validate(&self) -> Result<(), ShotError> {
        if !(self.boundary_threshold > 0.0 && self.boundary_threshold <= 2.0) {
            return Err(ShotError::InvalidConfig(format!(
                "boundary_threshold must be in (0, 2], got {}",
                self.boundary_threshold
            )));
        }
        if self.min_shot_len < 1 {
            return Err(ShotError::InvalidConfig("min_shot_len must be >= 1".into()));
        }
        if !(self.sample_fps > 0.0 && self.sample_fps.is_finite()) {
            return Err(ShotError::InvalidConfig(format!(
                "sample_fps must be > 0, got {}",
                self.sample_fps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ShotError {
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("frame sequence is empty")]
    EmptySequence,
    #[error("invalid shot detector config: {0}")]
    InvalidConfig(String),
    #[error("sidecar detector selected but no sidecar is available")]
    SidecarUnavailable,
    #[error("sidecar returned {got} scores for {frames} frames")]
    ScoreCount { got: usize, frames: usize },
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
}

/// Source of per-gap transition scores from an external model.
pub trait TransitionScorer: Send + Sync {
    fn transition_scores(&self, frames: &[&RgbImage]) -> Result<Vec<f64>, SidecarError>;
}

fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * (((g - b) / delta).rem_euclid(6.0))
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

/// Histogram bin of one pixel: hue-major, then saturation, then value.
pub fn hsv_bin(r: u8, g: u8, b: u8) -> usize {
    let (h, s, v) = rgb_to_hsv(r, g, b);
    let hb = ((h / 360.0 * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
    let sb = ((s * SAT_BINS as f64) as usize).min(SAT_BINS - 1);
    let vb = ((v * VAL_BINS as f64) as usize).min(VAL_BINS - 1);
    (hb * SAT_BINS + sb) * VAL_BINS + vb
}

/// Normalized (sum = 1) 16x4x4 HSV histogram.
pub fn hsv_histogram(img: &RgbImage) -> Vec<f64> {
    let mut counts = vec![0u64; HSV_BINS];
    for p in img.pixels() {
        counts[hsv_bin(p[0], p[1], p[2])] += 1;
    }
    let total = (img.width() as u64 * img.height() as u64).max(1) as f64;
    counts.into_iter().map(|c| c as f64 / total).collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// L1 distance between the frames' normalized HSV histograms, in [0, 2].
pub fn histogram_distance(a: &RgbImage, b: &RgbImage) -> Result<f64, ShotError> {
    if a.dimensions() != b.dimensions() {
        return Err(ShotError::DimensionMismatch {
            a: a.dimensions(),
            b: b.dimensions(),
        });
    }
    Ok(l1(&hsv_histogram(a), &hsv_histogram(b)).min(2.0))
}

/// `d[i-1]` is the distance between frames `i-1` and `i`.
pub fn distance_series(frames: &[&RgbImage]) -> Result<Vec<f64>, ShotError> {
    if let Some(first) = frames.first() {
        if let Some(bad) = frames.iter().find(|f| f.dimensions() != first.dimensions()) {
            return Err(ShotError::DimensionMismatch {
                a: first.dimensions(),
                b: bad.dimensions(),
            });
        }
    }
    let hists: Vec<Vec<f64>> = frames.par_iter().map(|f| hsv_histogram(f)).collect();
    Ok(hists
        .windows(2)
        .map(|w| l1(&w[0], &w[1]).min(2.0))
        .collect())
}

/// Frame indices that start a new shot, given the gap scores.
///
/// Gap `g` sits between frames `g` and `g+1`. A boundary lands on frame `g+1`
/// when the score exceeds the threshold and is not smaller than either neighbouring gap.
pub fn boundaries_from_scores(scores: &[f64], threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for (g, &d) in scores.iter().enumerate() {
        if !(d > threshold) {
            continue;
        }
        let left_ok = g == 0 || d >= scores[g - 1];
        let right_ok = g + 1 == scores.len() || d >= scores[g + 1];
        if left_ok && right_ok {
            out.push(g + 1);
        }
    }
    out
}

/// Cuts `[0, n)` at `boundaries`, then folds short pieces into the preceding shot.
/// A short leading piece is folded into the shot after it.
pub fn shots_from_boundaries(
    asset_id: &str,
    n: usize,
    boundaries: &[usize],
    min_len: usize,
) -> Vec<Shot> {
    if n == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<usize> = boundaries
        .iter()
        .copied()
        .filter(|b| *b > 0 && *b < n)
        .collect();
    cuts.sort_unstable();
    cuts.dedup();

    let mut starts = vec![0usize];
    starts.extend(cuts);
    let mut ranges: Vec<(usize, usize)> = Vec::with_capacity(starts.len());
    for (i, &s) in starts.iter().enumerate() {
        let end = starts.get(i + 1).map_or(n, |next| *next) - 1;
        let piece_len = end - s + 1;
        match ranges.last_mut() {
            Some(last) if piece_len < min_len => last.1 = end,
            _ => ranges.push((s, end)),
        }
    }
    if ranges.len() > 1 && ranges[0].1 - ranges[0].0 + 1 < min_len {
        let first = ranges.remove(0);
        ranges[0].0 = first.0;
    }
    ranges
        .into_iter()
        .map(|(start_frame, end_frame)| Shot {
            asset_id: asset_id.to_string(),
            start_frame,
            end_frame,
        })
        .collect()
}

/// Segments a sampled frame sequence into shots (indices are sampled positions).
pub fn detect_shots(
    seq: &FrameSequence,
    cfg: &ShotDetectorConfig,
    scorer: Option<&dyn TransitionScorer>,
) -> Result<Vec<Shot>, ShotError> {
    cfg.validate()?;
    if seq.is_empty() {
        return Err(ShotError::EmptySequence);
    }
    let frames: Vec<&RgbImage> = seq.images().collect();
    let scores = match cfg.detector {
        DetectorKind::Histogram => distance_series(&frames)?,
        DetectorKind::Sidecar => {
            let scorer = scorer.ok_or(ShotError::SidecarUnavailable)?;
            if frames.len() < 2 {
                Vec::new()
            } else {
                let s = scorer.transition_scores(&frames)?;
                if s.len() != frames.len() - 1 {
                    return Err(ShotError::ScoreCount {
                        got: s.len(),
                        frames: frames.len(),
                    });
                }
                s
            }
        }
    };
    let boundaries = boundaries_from_scores(&scores, cfg.boundary_threshold);
    Ok(shots_from_boundaries(
        &seq.asset_id,
        frames.len(),
        &boundaries,
        cfg.min_shot_len,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn black_white_red_bins() {
        assert_eq!(hsv_bin(0, 0, 0), 0);
        // red: h=0, s=1, v=1
        assert_eq!(hsv_bin(255, 0, 0), 3 * VAL_BINS + 3);
        // blue: h=240 -> hue bin 10
        assert_eq!(hsv_bin(0, 0, 255), (10 * SAT_BINS + 3) * VAL_BINS + 3);
        // white: s=0, v=1
        assert_eq!(hsv_bin(255, 255, 255), 3);
    }

    #[test]
    fn local_max_rule() {
        assert_eq!(boundaries_from_scores(&[0.0, 0.9, 0.5, 0.0], 0.35), vec![2]);
        assert_eq!(boundaries_from_scores(&[0.9, 0.9], 0.35), vec![1, 2]);
        assert!(boundaries_from_scores(&[0.35, 0.2], 0.35).is_empty());
    }

    #[test]
    fn short_pieces_fold_backwards_and_first_forwards() {
        let s = shots_from_boundaries("a", 20, &[2, 10, 12], 4);
        let spans: Vec<_> = s.iter().map(|s| (s.start_frame, s.end_frame)).collect();
        assert_eq!(spans, vec![(0, 11), (12, 19)]);
        let one = shots_from_boundaries("a", 3, &[1, 2], 4);
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].start_frame, one[0].end_frame), (0, 2));
    }
}
