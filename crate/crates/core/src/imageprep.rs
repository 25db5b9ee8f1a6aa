//! Downscale, JPEG-encode and Base64-encode frames for model input.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use image::codecs::jpeg::JpegEncoder;
use image::imageops::FilterType;
use image::RgbImage;
use thiserror::Error;

pub const DEFAULT_MAX_SIDE: u32 = 256;
pub const DEFAULT_JPEG_QUALITY: u8 = 85;

#[derive(Debug, Error)]
pub enum ImagePrepError {
    #[error("image encoding failed: {0}")]
    EncodeFailure(String),
    #[error("invalid prep settings: {0}")]
    Invalid(String),
}

/// Target size with the longer side equal to `max_side`, aspect preserved.
pub fn target_dims(width: u32, height: u32, max_side: u32) -> (u32, u32) {
    if width >= height {
        let h = (height as f64 * max_side as f64 / width.max(1) as f64).round() as u32;
        (max_side, h.max(1))
    } else {
        let w = (width as f64 * max_side as f64 / height.max(1) as f64).round() as u32;
        (w.max(1), max_side)
    }
}

pub fn resize_longer_side(img: &RgbImage, max_side: u32) -> RgbImage {
    let (w, h) = target_dims(img.width(), img.height(), max_side);
    if (w, h) == img.dimensions() {
        return img.clone();
    }
    image::imageops::resize(img, w, h, FilterType::Triangle)
}

pub fn encode_jpeg(img: &RgbImage, quality: u8) -> Result<Vec<u8>, ImagePrepError> {
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(img)
        .map_err(|e| ImagePrepError::EncodeFailure(e.to_string()))?;
    Ok(out)
}

pub fn base64_encode(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

/// A frame ready for the model: resized JPEG bytes and their Base64 form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedImage {
    pub width: u32,
    pub height: u32,
    pub jpeg: Vec<u8>,
    pub base64: String,
}

pub fn prepare_image(
    img: &RgbImage,
    max_side: u32,
    jpeg_quality: u8,
) -> Result<PreparedImage, ImagePrepError> {
    if max_side == 0 {
        return Err(ImagePrepError::Invalid("max_side must be > 0".into()));
    }
    if !(1..=100).contains(&jpeg_quality) {
        return Err(ImagePrepError::Invalid(format!(
            "jpeg quality {jpeg_quality} outside 1..=100"
        )));
    }
    if img.width() == 0 || img.height() == 0 {
        return Err(ImagePrepError::EncodeFailure("empty image".into()));
    }
    let resized = resize_longer_side(img, max_side);
    let jpeg = encode_jpeg(&resized, jpeg_quality)?;
    Ok(PreparedImage {
        width: resized.width(),
        height: resized.height(),
        base64: base64_encode(&jpeg),
        jpeg,
    })
}

pub fn prepare_llm_images(
    images: &[&RgbImage],
    max_side: u32,
    jpeg_quality: u8,
) -> Result<Vec<PreparedImage>, ImagePrepError> {
    images
        .iter()
        .map(|img| prepare_image(img, max_side, jpeg_quality))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        assert_eq!(target_dims(512, 512, 256), (256, 256));
        assert_eq!(target_dims(1920, 1080, 256), (256, 144));
        assert_eq!(target_dims(1080, 1920, 256), (144, 256));
        assert_eq!(target_dims(100, 50, 256), (256, 128));
    }

    #[test]
    fn base64_standard() {
        assert_eq!(base64_encode(b"Man"), "TWFu");
        assert_eq!(base64_encode(b"Ma"), "TWE=");
    }
}
