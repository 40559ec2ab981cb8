//! 8-bit PNG frames and masks.
//!
//! Float channels are clamped to `[0, 1]`, scaled by 255 and rounded half to
//! even before storage, so a decoded image re-encodes to the same bytes.

use std::path::Path;

use image::{GrayImage, ImageReader, RgbImage};

use crate::error::{Error, Result};

/// Interleaved RGB, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

pub fn quantize(v: f64) -> u8 {
    scaled_to_byte(v.clamp(0.0, 1.0) * 255.0)
}

fn scaled_to_byte(s: f64) -> u8 {
    s.round_ties_even() as u8
}

pub fn to_rgb8(rgb: &[f64], width: usize, height: usize) -> Rgb8 {
    assert_eq!(rgb.len(), width * height * 3, "image buffer size");
    Rgb8 { width, height, data: rgb.iter().map(|v| quantize(*v)).collect() }
}

impl Rgb8 {
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| f64::from(*v) / 255.0).collect()
    }
}

fn image_err(path: &Path, source: image::ImageError) -> Error {
    match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image { path: path.to_path_buf(), source },
    }
}

pub fn write_rgb(path: &Path, img: &Rgb8) -> Result<()> {
    let buf = RgbImage::from_raw(img.width as u32, img.height as u32, img.data.clone()).ok_or_else(|| Error::format(path, "image buffer size"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
}

pub fn read_rgb(path: &Path) -> Result<Rgb8> {
    let img = ImageReader::open(path).map_err(|e| Error::io(path, e))?.decode().map_err(|e| image_err(path, e))?.into_rgb8();
    Ok(Rgb8 { width: img.width() as usize, height: img.height() as usize, data: img.into_raw() })
}

/// Single-channel mask.
pub fn write_mask(path: &Path, mask: &[u8], width: usize, height: usize) -> Result<()> {
    let buf = GrayImage::from_raw(width as u32, height as u32, mask.to_vec()).ok_or_else(|| Error::format(path, "mask buffer size"))?;
    buf.save_with_format(path, image::ImageFormat::Png).map_err(|e| image_err(path, e))
}

/// Mask as `{0, 1}` per pixel: values above 127 are foreground.
pub fn read_mask(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    let img = ImageReader::open(path).map_err(|e| Error::io(path, e))?.decode().map_err(|e| image_err(path, e))?.into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok((img.into_raw().into_iter().map(|v| if v > 127 { 1.0 } else { 0.0 }).collect(), w, h))
}

/// Width and height from the file header without decoding pixels.
pub fn dimensions(path: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(path).map_err(|e| image_err(path, e))?;
    Ok((w as usize, h as usize))
}
