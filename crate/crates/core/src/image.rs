//! Small owned image containers and their PNG encodings.
//!
//! Colors are linear `f64` triples in `[0, 1]`, stored row-major.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major RGB image with `f64` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn new(width: usize, height: usize, fill: [f64; 3]) -> Self {
        Self {
            width,
            height,
            pixels: vec![fill; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: [f64; 3]) {
        self.pixels[y * self.width + x] = value;
    }

    /// Mean of the three channels per pixel.
    pub fn luminance(&self) -> Vec<f64> {
        self.pixels
            .iter()
            .map(|p| (p[0] + p[1] + p[2]) / 3.0)
            .collect()
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in buf.pixels_mut().zip(&self.pixels) {
            *dst = image::Rgb(src.map(to_u8));
        }
        buf.save(path).map_err(|e| Error::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::image(path, e))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img
            .pixels()
            .map(|p| p.0.map(|c| f64::from(c) / 255.0))
            .collect();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            pixels,
        })
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary H×W mask. `true` marks the pixel as selected.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{} mask bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn set_index(&mut self, i: usize, value: bool) {
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.width == other.width && self.height == other.height
    }

    fn check(&self, other: &Mask) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn union_with(&mut self, other: &Mask) -> Result<()> {
        self.check(other)?;
        for (a, &b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.check(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    pub fn union_count(&self, other: &Mask) -> Result<usize> {
        self.check(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a || b)
            .count())
    }

    pub fn inverted(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::GrayImage::new(self.width as u32, self.height as u32);
        for (dst, &b) in buf.pixels_mut().zip(&self.bits) {
            *dst = image::Luma([if b { 255 } else { 0 }]);
        }
        buf.save(path).map_err(|e| Error::image(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::image(path, e))?
            .to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            bits: img.pixels().map(|p| p.0[0] >= 128).collect(),
        })
    }
}
