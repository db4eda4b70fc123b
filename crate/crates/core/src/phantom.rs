//! Synthetic ultrasound-like head phantoms with exact ground truth.
//!
//! A sample is drawn from `SplitMix64::new(key)` in this order: semi-major
//! axis, axis ratio, center x jitter, center y jitter, angle, shadow coin,
//! then shadow start and width (repeated on redraw), then one speckle value
//! per pixel in row-major order. Dataset sample `i` uses key
//! `derive_key(seed, i)`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Ellipse;
use crate::image::{GrayImage, ImageError, Sidecar};
use crate::raster::{rasterize_ellipse, Mask, RasterError};
use crate::rng::{derive_key, SplitMix64};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("InvalidParams: {0}")]
    InvalidParams(String),
    #[error("InvalidManifest: {0}")]
    InvalidManifest(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Raster(#[from] RasterError),
}

impl PhantomError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InvalidParams(_) => "InvalidParams",
            Self::InvalidManifest(_) => "InvalidManifest",
            Self::Io(_) => "Io",
            Self::Image(e) => e.name(),
            Self::Raster(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    /// Semi-major axis range in pixels.
    pub a_range: (f64, f64),
    /// Range of the axis ratio a/b.
    pub ratio_range: (f64, f64),
    /// Maximum center offset from the image center, per axis.
    pub center_jitter: f64,
    pub angle_range: (f64, f64),
    /// Minimum clearance between the ellipse and the image border.
    pub margin: f64,
    pub background: f64,
    pub interior: f64,
    pub rim_intensity: f64,
    pub rim_thickness: f64,
    pub speckle: f64,
    pub shadow_probability: f64,
    /// Fraction of intensity removed inside a shadow sector.
    pub shadow_attenuation: f64,
    /// Angular width range of a shadow sector in radians.
    pub shadow_width_range: (f64, f64),
    /// Upper bound on the fraction of rim pixels a shadow may cover.
    pub shadow_max_fraction: f64,
    pub blur_sigma: f64,
    pub s_xy_mm: f64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            width: 96,
            height: 64,
            a_range: (16.0, 23.0),
            ratio_range: (1.1, 1.5),
            center_jitter: 4.0,
            angle_range: (0.0, PI),
            margin: 4.0,
            background: 0.3,
            interior: 0.12,
            rim_intensity: 0.9,
            rim_thickness: 2.5,
            speckle: 0.3,
            shadow_probability: 0.5,
            shadow_attenuation: 0.7,
            shadow_width_range: (0.2, 1.0),
            shadow_max_fraction: 0.2,
            blur_sigma: 0.8,
            s_xy_mm: 1.6,
        }
    }
}

const MAX_SHADOW_DRAWS: usize = 16;

fn ordered(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

impl PhantomParams {
    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::InvalidParams(m));
        if self.width == 0 || self.height == 0 {
            return bad("image dimensions must be positive".into());
        }
        if !ordered(self.a_range) || self.a_range.0 <= 0.0 {
            return bad(format!("a range {:?}", self.a_range));
        }
        if !ordered(self.ratio_range) || self.ratio_range.0 < 1.0 || self.ratio_range.1 > 1.6 {
            return bad(format!("axis ratio range {:?} must lie in [1, 1.6]", self.ratio_range));
        }
        if !ordered(self.angle_range) || !ordered(self.shadow_width_range) || self.shadow_width_range.0 < 0.0 {
            return bad("angle and shadow width ranges must be ordered".into());
        }
        if !(self.margin >= 4.0) || !(self.center_jitter >= 0.0) {
            return bad("margin must be at least 4 px and jitter non-negative".into());
        }
        let reach = self.a_range.1 + self.center_jitter + self.margin;
        let half = (self.width.min(self.height) as f64 - 1.0) / 2.0;
        if reach > half {
            return bad(format!(
                "an ellipse with a = {} and jitter {} does not fit a {}x{} image with margin {}",
                self.a_range.1, self.center_jitter, self.width, self.height, self.margin
            ));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if ![self.background, self.interior, self.rim_intensity, self.shadow_probability, self.shadow_attenuation]
            .into_iter()
            .all(unit)
        {
            return bad("intensities and probabilities must lie in [0, 1]".into());
        }
        if !unit(self.shadow_max_fraction) {
            return bad("shadow max fraction must lie in [0, 1]".into());
        }
        if !(self.rim_thickness > 0.0) || !(self.speckle >= 0.0) || !(self.blur_sigma >= 0.0) {
            return bad("rim thickness must be positive, speckle and blur non-negative".into());
        }
        if !(self.s_xy_mm > 0.0) || !self.s_xy_mm.is_finite() {
            return bad(format!("pixel size {}", self.s_xy_mm));
        }
        Ok(())
    }
}

/// Approximate signed distance to the ellipse curve (negative inside).
fn curve_distance(e: &Ellipse, x: f64, y: f64) -> f64 {
    let (u, v) = e.to_local(x, y);
    let (a2, b2) = (e.a() * e.a(), e.b() * e.b());
    let f = u * u / a2 + v * v / b2 - 1.0;
    let grad = 2.0 * ((u / a2).powi(2) + (v / b2).powi(2)).sqrt();
    if grad == 0.0 {
        f64::NEG_INFINITY
    } else {
        f / grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Sector {
    start: f64,
    width: f64,
}

impl Sector {
    fn contains(&self, e: &Ellipse, x: f64, y: f64) -> bool {
        let theta = (y - e.cy()).atan2(x - e.cx()).rem_euclid(2.0 * PI);
        (theta - self.start).rem_euclid(2.0 * PI) < self.width
    }
}

fn gaussian_blur(data: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return data.to_vec();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    let clamp = |i: i64, n: usize| i.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = (-r..=r).map(|i| k[(i + r) as usize] * data[y * w + clamp(x as i64 + i, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r).map(|i| k[(i + r) as usize] * tmp[clamp(y as i64 + i, h) * w + x]).sum();
        }
    }
    out
}

/// One phantom image, its ground-truth mask and ellipse.
pub fn generate(seed: u64, params: &PhantomParams) -> Result<(GrayImage, Mask, Ellipse), PhantomError> {
    params.validate()?;
    let p = params;
    let (w, h) = (p.width, p.height);
    let mut rng = SplitMix64::new(seed);
    let a = rng.uniform(p.a_range.0, p.a_range.1);
    let ratio = rng.uniform(p.ratio_range.0, p.ratio_range.1);
    let cx = (w as f64 - 1.0) / 2.0 + rng.uniform(-p.center_jitter, p.center_jitter);
    let cy = (h as f64 - 1.0) / 2.0 + rng.uniform(-p.center_jitter, p.center_jitter);
    let alpha = rng.uniform(p.angle_range.0, p.angle_range.1);
    let e = Ellipse::new(cx, cy, a, a / ratio, alpha).map_err(|err| PhantomError::InvalidParams(err.to_string()))?;

    let half_t = p.rim_thickness / 2.0;
    let dist: Vec<f64> = (0..w * h).map(|i| curve_distance(&e, (i % w) as f64, (i / w) as f64)).collect();
    let rim: Vec<usize> = (0..w * h).filter(|&i| dist[i].abs() <= half_t).collect();

    let mut shadow = None;
    if rng.next_f64() < p.shadow_probability {
        for _ in 0..MAX_SHADOW_DRAWS {
            let s = Sector {
                start: rng.uniform(0.0, 2.0 * PI),
                width: rng.uniform(p.shadow_width_range.0, p.shadow_width_range.1),
            };
            let covered = rim.iter().filter(|&&i| s.contains(&e, (i % w) as f64, (i / w) as f64)).count();
            if covered as f64 <= p.shadow_max_fraction * rim.len() as f64 {
                shadow = Some(s);
                break;
            }
        }
    }

    let mut data = vec![0.0; w * h];
    for (i, v) in data.iter_mut().enumerate() {
        let d = dist[i];
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let mut clean = if d.abs() <= half_t {
            p.rim_intensity
        } else if d < 0.0 {
            p.interior
        } else {
            p.background
        };
        if d > -half_t && shadow.is_some_and(|s| s.contains(&e, x, y)) {
            clean *= 1.0 - p.shadow_attenuation;
        }
        *v = clean;
    }
    if p.speckle > 0.0 {
        for v in &mut data {
            *v = (*v * (1.0 + p.speckle * rng.uniform(-1.0, 1.0))).clamp(0.0, 1.0);
        }
    }
    let data: Vec<f64> = gaussian_blur(&data, w, h, p.blur_sigma).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let img = GrayImage::new(w, h, data, p.s_xy_mm)?;
    let mask = rasterize_ellipse(&e, w, h);
    Ok((img, mask, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Train => "train",
            Self::Validation => "validation",
            Self::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = PhantomError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            _ => Err(PhantomError::InvalidManifest(format!("unknown split {s:?}"))),
        }
    }
}

/// Two-level split: `test` of the whole set, then `validation` of the rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub test: f64,
    pub validation: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { test: 0.2, validation: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitFractions {
    /// Test takes `floor(n·test)`; the remaining pool is divided by
    /// largest remainder, which for two parts is rounding half up.
    pub fn sizes(&self, n: usize) -> Result<SplitSizes, PhantomError> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !unit(self.test) || !unit(self.validation) {
            return Err(PhantomError::InvalidParams(format!("split fractions {self:?} must lie in [0, 1)")));
        }
        let test = (n as f64 * self.test).floor() as usize;
        let pool = n - test;
        let validation = ((pool as f64 * self.validation) + 0.5).floor() as usize;
        Ok(SplitSizes { train: pool - validation, validation, test })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub split: Split,
    pub ellipse: Ellipse,
    pub s_xy_mm: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomSample {
    pub entry: ManifestEntry,
    pub image: GrayImage,
    pub mask: Mask,
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const MANIFEST_HEADER: &str = "file,split,cx,cy,a,b,alpha,s_xy_mm";

pub fn sample_name(index: usize) -> String {
    format!("sample_{index:05}")
}

/// `n` samples in index order: train first, then validation, then test.
pub fn generate_samples(
    seed: u64,
    n: usize,
    params: &PhantomParams,
    fractions: &SplitFractions,
) -> Result<Vec<PhantomSample>, PhantomError> {
    if n == 0 {
        return Err(PhantomError::InvalidParams("dataset size must be positive".into()));
    }
    params.validate()?;
    let sizes = fractions.sizes(n)?;
    (0..n)
        .map(|i| {
            let split = if i < sizes.train {
                Split::Train
            } else if i < sizes.train + sizes.validation {
                Split::Validation
            } else {
                Split::Test
            };
            let (image, mask, ellipse) = generate(derive_key(seed, i as u64), params)?;
            let entry = ManifestEntry { file: sample_name(i), split, ellipse, s_xy_mm: params.s_xy_mm };
            Ok(PhantomSample { entry, image, mask })
        })
        .collect()
}

pub fn manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for m in entries {
        let e = &m.ellipse;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            m.file,
            m.split.as_str(),
            e.cx(),
            e.cy(),
            e.a(),
            e.b(),
            e.alpha(),
            m.s_xy_mm
        );
    }
    s
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, PhantomError> {
    let bad = |m: String| PhantomError::InvalidManifest(m);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers().map_err(|e| bad(e.to_string()))?.iter().map(str::to_owned).collect();
    if header.join(",") != MANIFEST_HEADER {
        return Err(bad(format!("header {:?}", header.join(","))));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> Result<f64, PhantomError> {
            rec[i].parse().map_err(|_| bad(format!("row {}: bad number {:?}", line + 1, &rec[i])))
        };
        let ellipse = Ellipse::new(num(2)?, num(3)?, num(4)?, num(5)?, num(6)?)
            .map_err(|e| bad(format!("row {}: {e}", line + 1)))?;
        out.push(ManifestEntry { file: rec[0].to_owned(), split: rec[1].parse()?, ellipse, s_xy_mm: num(7)? });
    }
    Ok(out)
}

/// Writes `<dir>/<file>/{image.pgm, mask.pgm, image.json}` per sample and
/// `<dir>/manifest.csv`.
pub fn write_dataset(dir: &Path, samples: &[PhantomSample]) -> Result<(), PhantomError> {
    fs::create_dir_all(dir)?;
    for s in samples {
        let sub = dir.join(&s.entry.file);
        fs::create_dir_all(&sub)?;
        s.image.write_pgm(sub.join("image.pgm"))?;
        s.mask.write_pgm(sub.join("mask.pgm"))?;
        Sidecar { s_xy_mm: s.entry.s_xy_mm }.write(sub.join("image.json"))?;
    }
    let entries: Vec<ManifestEntry> = samples.iter().map(|s| s.entry.clone()).collect();
    fs::write(dir.join(MANIFEST_FILE), manifest_csv(&entries))?;
    Ok(())
}

pub fn generate_dataset(
    dir: &Path,
    seed: u64,
    n: usize,
    params: &PhantomParams,
    fractions: &SplitFractions,
) -> Result<Vec<ManifestEntry>, PhantomError> {
    let samples = generate_samples(seed, n, params, fractions)?;
    write_dataset(dir, &samples)?;
    Ok(samples.into_iter().map(|s| s.entry).collect())
}

/// A dataset directory as written by [`write_dataset`].
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self, PhantomError> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(Self { root: dir.to_path_buf(), entries: parse_manifest(&text)? })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn image_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.file).join("image.pgm")
    }

    pub fn mask_path(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.file).join("mask.pgm")
    }

    /// Image with its pixel size from the sidecar, and the mask.
    pub fn load(&self, entry: &ManifestEntry) -> Result<(GrayImage, Mask), PhantomError> {
        let dir = self.root.join(&entry.file);
        let sidecar = Sidecar::read(dir.join("image.json"))?;
        let img = GrayImage::read_pgm(dir.join("image.pgm"), sidecar.s_xy_mm)?;
        let mask = Mask::read_pgm(dir.join("mask.pgm"))?;
        Ok((img, mask))
    }
}
