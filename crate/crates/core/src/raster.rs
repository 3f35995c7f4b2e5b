//! Grayscale glyph rasters and PNG helpers.

use std::io::Cursor;
use std::path::Path;

use image::{imageops, ImageBuffer, ImageFormat, Luma, RgbImage};

use crate::{Error, Result};

/// Single-channel image with values in `[0, 1]`; 1.0 is white paper, low
/// values are ink.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

impl GrayImage {
    /// All-white image.
    pub fn white(width: u32, height: u32) -> Self {
        Self::filled(width, height, 1.0)
    }

    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    /// Builds an image from row-major values, clamping them into `[0, 1]`.
    pub fn from_vec(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize {
            return Err(Error::DimensionMismatch {
                expected: width as usize * height as usize,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image", "non-finite pixel value"));
        }
        let data = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: f32) {
        self.data[(y * self.width + x) as usize] = value;
    }

    /// Fraction of pixels that are exactly white.
    pub fn white_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|&&v| v >= 1.0).count() as f64 / self.data.len() as f64
    }

    pub fn from_luma8(img: &image::GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width, self.height, raw).expect("buffer size matches")
    }

    /// Round-trips through 8-bit storage, i.e. what a PNG on disk holds.
    pub fn quantized(&self) -> Self {
        Self::from_luma8(&self.to_luma8())
    }

    pub fn to_rgb8(&self) -> RgbImage {
        image::DynamicImage::ImageLuma8(self.to_luma8()).to_rgb8()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::BadImage {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self::from_luma8(&img.to_luma8()))
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_luma8(&img.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Cursor::new(Vec::new());
        self.to_luma8().write_to(&mut out, ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Resamples with a triangle filter; output is clamped into `[0, 1]`.
    pub fn resized(&self, width: u32, height: u32) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width, self.height, self.data.clone())
                .expect("buffer size matches");
        let out = imageops::resize(&buf, width, height, imageops::FilterType::Triangle);
        Self {
            width,
            height,
            data: out.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

pub fn encode_rgb_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|e| Error::BadImage {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(img.to_rgb8())
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage> {
    Ok(image::load_from_memory(bytes)?.to_rgb8())
}
