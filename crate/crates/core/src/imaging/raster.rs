use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};

/// Row-major 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: u32, height: u32, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image width and height must be at least 1"));
        }
        let expected = width as usize * height as usize;
        if pixels.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} pixels"),
                actual: format!("{} pixels", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [[u8; 3]] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let w = self.width as usize;
        self.pixels[y as usize * w + x as usize] = rgb;
    }

    pub fn from_dynamic(img: &DynamicImage) -> Result<Self> {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let pixels = rgb.pixels().map(|p| p.0).collect();
        Self::new(w, h, pixels)
    }

    pub fn to_image(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width, self.height, raw).expect("pixel count checked at construction")
    }

    /// Decodes PNG or JPEG bytes.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Self::from_dynamic(&img)
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Self::from_dynamic(&img)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_image().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_png()?)
    }
}

/// Per-class binary raster aligned to an image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverMask {
    width: u32,
    height: u32,
    class_name: String,
    bits: Vec<bool>,
}

impl CoverMask {
    pub fn new(width: u32, height: u32, class_name: impl Into<String>, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("mask width and height must be at least 1"));
        }
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(Error::DimensionMismatch {
                expected: format!("{expected} mask bits"),
                actual: format!("{} mask bits", bits.len()),
            });
        }
        Ok(Self {
            width,
            height,
            class_name: class_name.into(),
            bits,
        })
    }

    pub fn empty(width: u32, height: u32, class_name: impl Into<String>) -> Result<Self> {
        Self::new(width, height, class_name, vec![false; width as usize * height as usize])
    }

    pub fn full(width: u32, height: u32, class_name: impl Into<String>) -> Result<Self> {
        Self::new(width, height, class_name, vec![true; width as usize * height as usize])
    }

    pub fn from_fn(
        width: u32,
        height: u32,
        class_name: impl Into<String>,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self> {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, class_name, bits)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn class_name(&self) -> &str {
        &self.class_name
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = on;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn with_class_name(mut self, class_name: impl Into<String>) -> Self {
        self.class_name = class_name.into();
        self
    }

    /// Any nonzero luma value marks an in-mask pixel.
    pub fn from_gray(img: &GrayImage, class_name: impl Into<String>) -> Result<Self> {
        let (w, h) = img.dimensions();
        let bits = img.pixels().map(|p| p.0[0] != 0).collect();
        Self::new(w, h, class_name, bits)
    }

    pub fn decode(bytes: &[u8], class_name: impl Into<String>) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Self::from_gray(&img.to_luma8(), class_name)
    }

    pub fn open(path: impl AsRef<Path>, class_name: impl Into<String>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Self::from_gray(&img.to_luma8(), class_name)
    }

    pub fn to_gray(&self) -> GrayImage {
        let raw = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        GrayImage::from_raw(self.width, self.height, raw).expect("bit count checked at construction")
    }

    /// Single-channel PNG, 255 in-mask and 0 elsewhere.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        self.to_gray().write_to(&mut buf, ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), &self.encode_png()?)
    }
}

pub(crate) fn ensure_same_dims(img: &RgbImage, mask: &CoverMask) -> Result<()> {
    if img.dims() != mask.dims() {
        return Err(Error::dims(img.dims(), mask.dims()));
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}
