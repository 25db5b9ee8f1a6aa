//! Frame embedders: a built-in colour/layout descriptor and the sidecar model path.

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Embedding, EmbeddingError};
use crate::shots::{hsv_histogram, HSV_BINS};
use crate::sidecar::{Sidecar, SidecarError};

pub const CLASSICAL_ID: &str = "classical-v1";
pub const LUMA_GRID: usize = 8;
pub const CLASSICAL_DIM: usize = HSV_BINS + LUMA_GRID * LUMA_GRID;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Classical,
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderConfig {
    pub embedder: EmbedderKind,
    pub normalize: bool,
    pub fallback_to_classical: bool,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            embedder: EmbedderKind::Classical,
            normalize: true,
            fallback_to_classical: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no frames to embed")]
    NoFrames,
    #[error("frame dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (u32, u32), b: (u32, u32) },
    #[error("sidecar embedder unavailable: {0}")]
    SidecarUnavailable(String),
    #[error(transparent)]
    Sidecar(#[from] SidecarError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

fn luma(p: &image::Rgb<u8>) -> f64 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

/// 8x8 grid of mean luma in [0, 1], row-major.
pub fn luma_grid(img: &RgbImage) -> Vec<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Vec::with_capacity(LUMA_GRID * LUMA_GRID);
    for gy in 0..LUMA_GRID {
        let y0 = gy * h / LUMA_GRID;
        let y1 = ((gy + 1) * h / LUMA_GRID).max(y0 + 1).min(h);
        for gx in 0..LUMA_GRID {
            let x0 = gx * w / LUMA_GRID;
            let x1 = ((gx + 1) * w / LUMA_GRID).max(x0 + 1).min(w);
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in y0.min(h.saturating_sub(1))..y1 {
                for x in x0.min(w.saturating_sub(1))..x1 {
                    sum += luma(img.get_pixel(x as u32, y as u32));
                    n += 1;
                }
            }
            out.push(if n == 0 {
                0.0
            } else {
                (sum / n as f64).clamp(0.0, 1.0)
            });
        }
    }
    out
}

/// HSV histogram (256) followed by the luma grid (64); not normalized.
pub fn classical_embed(img: &RgbImage) -> Embedding {
    let mut v = hsv_histogram(img);
    v.extend(luma_grid(img));
    Embedding::new(v, CLASSICAL_ID).expect("histogram and luma values are finite")
}

fn check_dims(frames: &[&RgbImage]) -> Result<(), EmbedError> {
    let first = frames.first().ok_or(EmbedError::NoFrames)?;
    if let Some(bad) = frames.iter().find(|f| f.dimensions() != first.dimensions()) {
        return Err(EmbedError::DimensionMismatch {
            a: first.dimensions(),
            b: bad.dimensions(),
        });
    }
    Ok(())
}

/// One embedding per frame; all share `dim` and `extractor_id`.
pub fn embed_frames(
    frames: &[&RgbImage],
    cfg: &EmbedderConfig,
    sidecar: Option<&Sidecar>,
) -> Result<Vec<Embedding>, EmbedError> {
    check_dims(frames)?;
    let mut out = match (cfg.embedder, sidecar) {
        (EmbedderKind::Classical, _) => classical_all(frames),
        (EmbedderKind::Sidecar, Some(sc)) => match sidecar_embed(frames, sc) {
            Ok(v) => v,
            Err(e) if cfg.fallback_to_classical => {
                tracing::warn!(error = %e, "sidecar embedding failed; using classical embedder");
                classical_all(frames)
            }
            Err(e) => return Err(e),
        },
        (EmbedderKind::Sidecar, None) if cfg.fallback_to_classical => classical_all(frames),
        (EmbedderKind::Sidecar, None) => {
            return Err(EmbedError::SidecarUnavailable("not started".into()))
        }
    };
    if cfg.normalize {
        out.iter_mut().for_each(Embedding::normalize);
    }
    Ok(out)
}

fn classical_all(frames: &[&RgbImage]) -> Vec<Embedding> {
    frames.par_iter().map(|f| classical_embed(f)).collect()
}

fn sidecar_embed(frames: &[&RgbImage], sc: &Sidecar) -> Result<Vec<Embedding>, EmbedError> {
    let id = format!(
        "sidecar:{}",
        sc.capabilities()
            .model_ids
            .first()
            .map(String::as_str)
            .unwrap_or("unknown")
    );
    sc.embed(frames)?
        .into_iter()
        .map(|v| Embedding::new(v, id.clone()).map_err(EmbedError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;

    #[test]
    fn black_frame_layout() {
        let img = RgbImage::from_pixel(40, 30, Rgb([0, 0, 0]));
        let e = classical_embed(&img);
        assert_eq!(e.dim(), CLASSICAL_DIM);
        assert_eq!(e.extractor_id(), CLASSICAL_ID);
        assert_eq!(e.vector()[0], 1.0);
        assert!(e.vector()[1..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tiny_frames_still_fill_the_grid() {
        let img = RgbImage::from_pixel(3, 2, Rgb([255, 255, 255]));
        let grid = luma_grid(&img);
        assert_eq!(grid.len(), 64);
        assert!(grid.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }
}
