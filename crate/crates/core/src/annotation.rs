//! Ground truth from annotated frames: locate the colored dashed ellipse
//! drawn over a grayscale ultrasound image, fit it, rasterize the head mask,
//! and crop/rescale frames to the working resolution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{fit_ellipse, Ellipse, GeometryError, MIN_FIT_POINTS};
use crate::image::{GrayImage, RgbImage};
use crate::raster::{rasterize_ellipse, Mask};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("NoAnnotationFound: image has no chromatic annotation pixels")]
    NoAnnotationFound,
    #[error("DegenerateConfiguration: {0} annotation pixels do not determine an ellipse")]
    DegenerateConfiguration(usize),
    #[error("CropOutOfBounds: crop {rect:?} exceeds {width}x{height} image")]
    CropOutOfBounds { rect: CropRect, width: usize, height: usize },
    #[error("InvalidScale: scale factor must be in (0, 1], got {0}")]
    InvalidScale(f64),
}

impl AnnotationError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NoAnnotationFound => "NoAnnotationFound",
            Self::DegenerateConfiguration(_) => "DegenerateConfiguration",
            Self::CropOutOfBounds { .. } => "CropOutOfBounds",
            Self::InvalidScale(_) => "InvalidScale",
        }
    }
}

pub const DEFAULT_CHROMA_THRESHOLD: u8 = 30;

/// Which pixels count as annotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detector {
    /// A pixel qualifies when `max(r,g,b) − min(r,g,b)` exceeds this.
    pub chroma_threshold: u8,
    /// Optional exact color match instead: every channel within `tolerance`.
    pub key_color: Option<KeyColor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyColor {
    pub rgb: [u8; 3],
    pub tolerance: u8,
}

impl Default for Detector {
    fn default() -> Self {
        Self { chroma_threshold: DEFAULT_CHROMA_THRESHOLD, key_color: None }
    }
}

impl Detector {
    pub fn matches(&self, px: [u8; 3]) -> bool {
        match self.key_color {
            Some(k) => px.iter().zip(k.rgb).all(|(&p, c)| p.abs_diff(c) <= k.tolerance),
            None => {
                let hi = px.iter().max().copied().unwrap_or(0);
                let lo = px.iter().min().copied().unwrap_or(0);
                hi - lo > self.chroma_threshold
            }
        }
    }
}

/// Annotation pixel coordinates in scan order.
pub fn find_annotation_pixels(
    img: &RgbImage,
    detector: &Detector,
) -> Result<Vec<(usize, usize)>, AnnotationError> {
    let w = img.width();
    let pts: Vec<_> = img
        .pixels()
        .iter()
        .enumerate()
        .filter(|(_, &px)| detector.matches(px))
        .map(|(i, _)| (i % w, i / w))
        .collect();
    if pts.is_empty() {
        Err(AnnotationError::NoAnnotationFound)
    } else {
        Ok(pts)
    }
}

/// Fits the overlay ellipse and rasterizes it at the image's resolution.
pub fn extract_ground_truth(
    img: &RgbImage,
    detector: &Detector,
) -> Result<(Ellipse, Mask), AnnotationError> {
    let pixels = find_annotation_pixels(img, detector)?;
    if pixels.len() < MIN_FIT_POINTS {
        return Err(AnnotationError::DegenerateConfiguration(pixels.len()));
    }
    let pts: Vec<(f64, f64)> = pixels.iter().map(|&(x, y)| (x as f64, y as f64)).collect();
    let ellipse = fit_ellipse(&pts).map_err(|e| match e {
        GeometryError::TooFewPoints { got } => AnnotationError::DegenerateConfiguration(got),
        _ => AnnotationError::DegenerateConfiguration(pixels.len()),
    })?;
    let mask = rasterize_ellipse(&ellipse, img.width(), img.height());
    Ok((ellipse, mask))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x: 0, y: 0, width, height }
    }
}

/// Crops, then downsamples by `factor` with exact area averaging.
///
/// Output pixel `i` averages source interval `[i/f, (i+1)/f)` (clipped to
/// the crop), weighting partially covered pixels by their overlap, so
/// factor 0.5 is a plain 2×2 box average. The pixel size grows by `1/f`.
pub fn crop_and_scale(img: &GrayImage, rect: CropRect, factor: f64) -> Result<GrayImage, AnnotationError> {
    if !(factor > 0.0 && factor <= 1.0) {
        return Err(AnnotationError::InvalidScale(factor));
    }
    if rect.width == 0
        || rect.height == 0
        || rect.x + rect.width > img.width()
        || rect.y + rect.height > img.height()
    {
        return Err(AnnotationError::CropOutOfBounds {
            rect,
            width: img.width(),
            height: img.height(),
        });
    }
    let out_w = (rect.width as f64 * factor).ceil() as usize;
    let out_h = (rect.height as f64 * factor).ceil() as usize;
    let wx = area_weights(rect.width, out_w, factor);
    let wy = area_weights(rect.height, out_h, factor);

    // horizontal pass over the cropped rows, then vertical
    let mut tmp = vec![0.0; out_w * rect.height];
    for y in 0..rect.height {
        let row = &img.data()[(rect.y + y) * img.width() + rect.x..][..rect.width];
        for (ox, taps) in wx.iter().enumerate() {
            tmp[y * out_w + ox] = taps.iter().map(|&(i, w)| row[i] * w).sum();
        }
    }
    let mut out = vec![0.0; out_w * out_h];
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..out_w {
            let v: f64 = taps.iter().map(|&(i, w)| tmp[i * out_w + ox] * w).sum();
            out[oy * out_w + ox] = v.clamp(0.0, 1.0);
        }
    }
    Ok(GrayImage::new(out_w, out_h, out, img.s_xy() / factor).expect("resampled image is valid"))
}

/// Normalized overlap weights of source pixels for each output pixel.
fn area_weights(src: usize, dst: usize, factor: f64) -> Vec<Vec<(usize, f64)>> {
    (0..dst)
        .map(|o| {
            let lo = o as f64 / factor;
            let hi = ((o + 1) as f64 / factor).min(src as f64);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            let mut taps: Vec<(usize, f64)> = (first..last)
                .map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                    (i, overlap)
                })
                .filter(|&(_, w)| w > 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in taps.iter_mut() {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// How a synthetic annotation overlay is drawn.
///
/// The ellipse is sampled at `samples` uniformly spaced parametric angles;
/// a sample is drawn when its cumulative arc length modulo
/// `dash_on + dash_off` is below `dash_on` (so `dash_off = 0` gives a solid
/// line), by setting the nearest pixel to `color`. Stroke width is 1 px.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayStyle {
    pub color: [u8; 3],
    pub dash_on: f64,
    pub dash_off: f64,
    pub samples: usize,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self { color: [255, 255, 0], dash_on: 8.0, dash_off: 6.0, samples: 720 }
    }
}

impl OverlayStyle {
    pub fn solid(color: [u8; 3]) -> Self {
        Self { color, dash_off: 0.0, ..Self::default() }
    }
}

/// Draws `e` over `base` and returns the pixels that were set.
pub fn draw_overlay(base: &mut RgbImage, e: &Ellipse, style: &OverlayStyle) -> Vec<(usize, usize)> {
    let n = style.samples.max(1);
    let period = style.dash_on + style.dash_off;
    let mut drawn = Vec::new();
    let mut arc = 0.0;
    let mut prev = e.point_at(0.0);
    for k in 0..n {
        let p = e.point_at(2.0 * std::f64::consts::PI * k as f64 / n as f64);
        arc += (p.0 - prev.0).hypot(p.1 - prev.1);
        prev = p;
        let on = style.dash_off <= 0.0 || arc.rem_euclid(period) < style.dash_on;
        if !on {
            continue;
        }
        let (x, y) = (p.0.round(), p.1.round());
        if x < 0.0 || y < 0.0 || x >= base.width() as f64 || y >= base.height() as f64 {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        base.set(x, y, style.color);
        drawn.push((x, y));
    }
    drawn.sort_by_key(|&(x, y)| (y, x));
    drawn.dedup();
    drawn
}

/// Grayscale frame with the overlay drawn on top.
pub fn render_overlay(gray: &GrayImage, e: &Ellipse, style: &OverlayStyle) -> RgbImage {
    let mut img = RgbImage::from_gray(gray);
    draw_overlay(&mut img, e, style);
    img
}
