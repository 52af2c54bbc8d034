//! Floating-point RGB images.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width as usize * height as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    /// From interleaved 8-bit RGB.
    pub fn from_rgb8(width: u32, height: u32, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width as usize * height as usize {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{} bytes for a {width}x{height} RGB image",
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(3)
            .map(|p| [p[0] as f32 / 255.0, p[1] as f32 / 255.0, p[2] as f32 / 255.0])
            .collect();
        Ok(Self { width, height, pixels })
    }

    /// Interleaved 8-bit RGB, rounding to nearest after clamping.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(quantize)).collect()
    }

    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: [f32; 3]) {
        let w = self.width;
        self.pixels[(y * w + x) as usize] = v;
    }

    /// Rec. 601 luma per pixel.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn same_shape(&self, other: &Self) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::ShapeMismatch(alloc::format!(
                "{}x{} vs {}x{}",
                self.width,
                self.height,
                other.width,
                other.height
            )));
        }
        Ok(())
    }
}

pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    num_traits::Float::round(v * 255.0) as u8
}
