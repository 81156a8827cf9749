//! Linear RGB images, PNG export and a lossless float dump.
//!
//! The float dump is `"RGBF"`, `u32` width, `u32` height, then the red, green
//! and blue planes as little-endian `f32`, row-major.

use std::io::Write;

use crate::error::{Error, Result};

/// Row-major, interleaved RGB image with `f64` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

const DUMP_MAGIC: &[u8; 4] = b"RGBF";

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut img = Self::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn mse(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let n = self.data.len().max(1) as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
    }

    /// PSNR in dB for signals in `[0, 1]`.
    pub fn psnr(&self, other: &Image) -> Result<f64> {
        let mse = self.mse(other)?;
        Ok(if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        })
    }

    /// 8-bit sRGB PNG encoding of the linear image.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
            let mut writer = enc
                .write_header()
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            let bytes: Vec<u8> = self.data.iter().map(|&c| linear_to_srgb8(c)).collect();
            writer
                .write_image_data(&bytes)
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        }
        Ok(out)
    }

    pub fn to_float_dump(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(DUMP_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for c in 0..3 {
            for px in self.data.chunks_exact(3) {
                out.write_all(&(px[c] as f32).to_le_bytes()).unwrap();
            }
        }
        out
    }

    pub fn from_float_dump(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != DUMP_MAGIC {
            return Err(Error::Format("not an RGBF float dump".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = width * height;
        if bytes.len() != 12 + n * 12 {
            return Err(Error::Truncated {
                offset: bytes.len(),
                what: format!("{width}x{height} float planes"),
            });
        }
        let mut img = Self::new(width, height);
        for c in 0..3 {
            let plane = &bytes[12 + c * n * 4..12 + (c + 1) * n * 4];
            for (i, chunk) in plane.chunks_exact(4).enumerate() {
                img.data[3 * i + c] = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
            }
        }
        Ok(img)
    }
}

fn linear_to_srgb8(c: f64) -> u8 {
    let c = c.clamp(0.0, 1.0);
    let s = if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    };
    (s * 255.0).round() as u8
}
