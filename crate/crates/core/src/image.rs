//! Grayscale and RGB images with physical pixel size, plus binary PGM (P5)
//! and PPM (P6) codecs and the per-image JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error("InvalidFormat: {0}")]
    Format(String),
    #[error("NonPositivePixelSize: pixel size must be > 0, got {0}")]
    InvalidPixelSize(f64),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidSidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

impl ImageError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Io(_) => "Io",
            Self::Format(_) => "InvalidFormat",
            Self::InvalidPixelSize(_) => "NonPositivePixelSize",
            Self::DimensionMismatch(_) => "DimensionMismatch",
            Self::Sidecar(_) => "InvalidSidecar",
        }
    }
}

fn check_pixel_size(s_xy: f64) -> Result<(), ImageError> {
    if s_xy > 0.0 && s_xy.is_finite() {
        Ok(())
    } else {
        Err(ImageError::InvalidPixelSize(s_xy))
    }
}

/// Intensities in `[0, 1]`, row-major, with isotropic pixel size in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    s_xy: f64,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>, s_xy: f64) -> Result<Self, ImageError> {
        check_pixel_size(s_xy)?;
        if data.len() != width * height {
            return Err(ImageError::DimensionMismatch(format!(
                "{} values for a {width}x{height} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImageError::Format(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data, s_xy })
    }

    pub fn filled(width: usize, height: usize, value: f64, s_xy: f64) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height], s_xy)
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn s_xy(&self) -> f64 {
        self.s_xy
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn flipped_lr(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width.max(1)) {
            data.extend(row.iter().rev());
        }
        Self { data, ..self.clone() }
    }

    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let pixels = self.data.iter().map(|v| (v * 255.0).round() as u8).collect::<Vec<_>>();
        encode_pnm(b"P5", self.width, self.height, &pixels)
    }

    pub fn from_pgm_bytes(bytes: &[u8], s_xy: f64) -> Result<Self, ImageError> {
        let raw = decode_pnm(bytes, b"P5", 1)?;
        let scale = 1.0 / raw.maxval as f64;
        let data = raw.samples.iter().map(|&v| v as f64 * scale).collect();
        Self::new(raw.width, raw.height, data, s_xy)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_file(path.as_ref(), &self.to_pgm_bytes())
    }

    pub fn read_pgm(path: impl AsRef<Path>, s_xy: f64) -> Result<Self, ImageError> {
        Self::from_pgm_bytes(&fs::read(path)?, s_xy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[u8; 3]>,
    s_xy: f64,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[u8; 3]>, s_xy: f64) -> Result<Self, ImageError> {
        check_pixel_size(s_xy)?;
        if data.len() != width * height {
            return Err(ImageError::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data, s_xy })
    }

    /// Gray replicated into all three channels.
    pub fn from_gray(img: &GrayImage) -> Self {
        let data = img
            .data
            .iter()
            .map(|v| {
                let g = (v * 255.0).round() as u8;
                [g, g, g]
            })
            .collect();
        Self { width: img.width, height: img.height, data, s_xy: img.s_xy }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn s_xy(&self) -> f64 {
        self.s_xy
    }
    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.data[y * self.width + x] = rgb;
    }

    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let flat: Vec<u8> = self.data.iter().flatten().copied().collect();
        encode_pnm(b"P6", self.width, self.height, &flat)
    }

    pub fn from_ppm_bytes(bytes: &[u8], s_xy: f64) -> Result<Self, ImageError> {
        let raw = decode_pnm(bytes, b"P6", 3)?;
        let scale = |v: u16| -> u8 {
            if raw.maxval == 255 {
                v as u8
            } else {
                (v as f64 * 255.0 / raw.maxval as f64).round() as u8
            }
        };
        let data = raw
            .samples
            .chunks_exact(3)
            .map(|c| [scale(c[0]), scale(c[1]), scale(c[2])])
            .collect();
        Self::new(raw.width, raw.height, data, s_xy)
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        write_file(path.as_ref(), &self.to_ppm_bytes())
    }

    pub fn read_ppm(path: impl AsRef<Path>, s_xy: f64) -> Result<Self, ImageError> {
        Self::from_ppm_bytes(&fs::read(path)?, s_xy)
    }
}

/// `image.json` next to each image: `{"s_xy_mm": 0.26}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub s_xy_mm: f64,
}

impl Sidecar {
    pub fn read(path: impl AsRef<Path>) -> Result<Self, ImageError> {
        let s: Sidecar = serde_json::from_slice(&fs::read(path)?)?;
        check_pixel_size(s.s_xy_mm)?;
        Ok(s)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        write_file(path.as_ref(), text.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), ImageError> {
    let mut f = fs::File::create(path)?;
    f.write_all(bytes)?;
    Ok(())
}

pub(crate) fn encode_pnm(magic: &[u8], width: usize, height: usize, samples: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() + 20);
    out.extend_from_slice(magic);
    out.extend_from_slice(format!("\n{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(samples);
    out
}

pub(crate) struct RawPnm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

/// Parses a binary netpbm header (with `#` comments) and its raster.
pub(crate) fn decode_pnm(bytes: &[u8], magic: &[u8], channels: usize) -> Result<RawPnm, ImageError> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(ImageError::Format(format!(
            "expected {} header",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while let Some(&c) = bytes.get(pos) {
                        pos += 1;
                        if c == b'\n' {
                            break;
                        }
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(ImageError::Format("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImageError::Format("bad header number".into()))?;
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(ImageError::Format("missing raster separator".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(ImageError::Format(format!("unsupported maxval {maxval}")));
    }
    let count = width * height * channels;
    let body = &bytes[pos..];
    let samples: Vec<u16> = if maxval < 256 {
        if body.len() < count {
            return Err(ImageError::Format("truncated raster".into()));
        }
        body[..count].iter().map(|&b| b as u16).collect()
    } else {
        if body.len() < 2 * count {
            return Err(ImageError::Format("truncated raster".into()));
        }
        body[..2 * count]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    if samples.iter().any(|&v| v as usize > maxval) {
        return Err(ImageError::Format("sample exceeds maxval".into()));
    }
    Ok(RawPnm { width, height, maxval: maxval as u16, samples })
}
