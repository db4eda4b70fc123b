//! Binary masks: ellipse rasterization, connected components, outer
//! boundary tracing and Dice overlap.
//!
//! Pixel `(x, y)` has its center at integer coordinates `(x, y)`; contours
//! and fitted ellipses share that frame.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::Ellipse;
use crate::image::{decode_pnm, encode_pnm, write_file, ImageError};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("EmptyMask: mask has no foreground pixels")]
    EmptyMask,
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("InvalidMask: {0}")]
    InvalidMask(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

impl RasterError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EmptyMask => "EmptyMask",
            Self::DimensionMismatch(_) => "DimensionMismatch",
            Self::InvalidMask(_) => "InvalidMask",
            Self::Image(e) => e.name(),
        }
    }
}

/// Row-major binary label map: 1 = head, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        if data.len() != width * height {
            return Err(RasterError::DimensionMismatch(format!(
                "{} labels for a {width}x{height} mask",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(RasterError::InvalidMask("labels must be 0 or 1".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    /// Like [`Mask::get`] but `false` outside the grid.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    pub fn set(&mut self, x: usize, y: usize, on: bool) {
        self.data[y * self.width + x] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn flipped_lr(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width.max(1)) {
            data.extend(row.iter().rev());
        }
        Self { data, ..*self }
    }

    /// Binary PGM with 0 ↦ 0 and 1 ↦ 255.
    pub fn to_pgm_bytes(&self) -> Vec<u8> {
        let px: Vec<u8> = self.data.iter().map(|&v| v * 255).collect();
        encode_pnm(b"P5", self.width, self.height, &px)
    }

    /// Samples above half of maxval read as 1.
    pub fn from_pgm_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        let raw = decode_pnm(bytes, b"P5", 1)?;
        let half = raw.maxval / 2;
        let data = raw.samples.iter().map(|&v| (v > half) as u8).collect();
        Self::new(raw.width, raw.height, data)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        Ok(write_file(path.as_ref(), &self.to_pgm_bytes())?)
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let bytes = std::fs::read(path).map_err(ImageError::from)?;
        Self::from_pgm_bytes(&bytes)
    }
}

/// Pixel is set iff its center lies inside or on the ellipse.
pub fn rasterize_ellipse(e: &Ellipse, width: usize, height: usize) -> Mask {
    let mut m = Mask::zeros(width, height);
    let (hx, hy) = e.half_extents();
    let clamp = |v: f64, hi: usize| -> Option<usize> {
        if v < 0.0 {
            Some(0)
        } else if v >= hi as f64 {
            None
        } else {
            Some(v as usize)
        }
    };
    let (Some(x0), Some(y0)) = (clamp((e.cx() - hx).floor(), width), clamp((e.cy() - hy).floor(), height))
    else {
        return m;
    };
    let x1 = ((e.cx() + hx).ceil()).min(width as f64 - 1.0);
    let y1 = ((e.cy() + hy).ceil()).min(height as f64 - 1.0);
    if x1 < 0.0 || y1 < 0.0 {
        return m;
    }
    for y in y0..=y1 as usize {
        for x in x0..=x1 as usize {
            if e.implicit(x as f64, y as f64) <= 0.0 {
                m.set(x, y, true);
            }
        }
    }
    m
}

/// 8-connected labeling. Labels start at 1 in raster-scan order of each
/// component's first pixel; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub width: usize,
    pub height: usize,
    pub labels: Vec<u32>,
    /// `(label, pixel count)`, largest first; ties keep label order.
    pub sizes: Vec<(u32, usize)>,
}

impl Components {
    pub fn largest(&self) -> Option<u32> {
        self.sizes.first().map(|&(l, _)| l)
    }

    pub fn label_at(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Mask containing only the given component.
    pub fn component_mask(&self, label: u32) -> Mask {
        let data = self.labels.iter().map(|&l| (l == label && l != 0) as u8).collect();
        Mask { width: self.width, height: self.height, data }
    }
}

pub fn connected_components(m: &Mask) -> Components {
    let (w, h) = (m.width, m.height);
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut stack = Vec::new();
    let mut next = 1u32;
    for start in 0..w * h {
        if m.data[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = next;
        next += 1;
        labels[start] = label;
        stack.push(start);
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if m.data[j] == 1 && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push((label, count));
    }
    sizes.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Components { width: w, height: h, labels, sizes }
}

/// Closed boundary loop of pixel centers; consecutive points are 8-neighbors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contour {
    points: Vec<(i64, i64)>,
}

impl Contour {
    pub fn points(&self) -> &[(i64, i64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_f64(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|&(x, y)| (x as f64, y as f64)).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x},{y}");
        }
        s
    }
}

// Clockwise on screen (y down), starting west.
const DIRS: [(i64, i64); 8] = [(-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1)];

fn dir_index(dx: i64, dy: i64) -> usize {
    DIRS.iter().position(|&d| d == (dx, dy)).expect("offset is a Moore neighbor")
}

/// Outer boundary of the largest 8-connected component, traced by
/// Moore-neighbor following with Jacob's stopping criterion. Holes are
/// ignored.
pub fn extract_contour(m: &Mask) -> Result<Contour, RasterError> {
    let comps = connected_components(m);
    let label = comps.largest().ok_or(RasterError::EmptyMask)?;
    Ok(trace_component(&comps, label))
}

fn trace_component(comps: &Components, label: u32) -> Contour {
    let (w, h) = (comps.width as i64, comps.height as i64);
    let inside = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w && y < h && comps.labels[(y * w + x) as usize] == label
    };
    let first = comps.labels.iter().position(|&l| l == label).expect("label exists");
    let start = ((first % comps.width) as i64, (first / comps.width) as i64);
    // the scan-order first pixel always has background to its west
    let start_back = 0usize;

    let mut points = Vec::new();
    let (mut cur, mut back) = (start, start_back);
    let mut first_move = None;
    let limit = 8 * comps.labels.len() + 16;
    for _ in 0..limit {
        let Some(k) = (1..=8).map(|i| (back + i) % 8).find(|&k| {
            let (dx, dy) = DIRS[k];
            inside(cur.0 + dx, cur.1 + dy)
        }) else {
            // isolated pixel
            break;
        };
        // Jacob's criterion: leaving the start pixel the same way as the
        // first time means the loop is closed.
        if cur == start {
            if first_move == Some(k) {
                break;
            }
            first_move.get_or_insert(k);
        }
        points.push(cur);
        let prev = DIRS[(k + 7) % 8];
        let next = (cur.0 + DIRS[k].0, cur.1 + DIRS[k].1);
        let back_abs = (cur.0 + prev.0, cur.1 + prev.1);
        back = dir_index(back_abs.0 - next.0, back_abs.1 - next.1);
        cur = next;
    }
    if points.is_empty() {
        points.push(start);
    }
    Contour { points }
}

/// Midpoints of the pixel edges separating contour pixels from background,
/// i.e. samples of the outline of the pixel region itself. Pixel centers
/// sit on average half a pixel inside that outline. Points follow the
/// contour order; each pixel contributes its W, N, E, S edges in turn.
pub fn boundary_edge_points(m: &Mask, c: &Contour) -> Vec<(f64, f64)> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(2 * c.len());
    for &(x, y) in c.points() {
        if !seen.insert((x, y)) {
            continue;
        }
        for (dx, dy) in [(-1i64, 0i64), (0, -1), (1, 0), (0, 1)] {
            if !m.get_signed(x + dx, y + dy) {
                out.push((x as f64 + 0.5 * dx as f64, y as f64 + 0.5 * dy as f64));
            }
        }
    }
    out
}

/// `2|A ∩ B| / (|A| + |B|)`, with two empty masks scoring 1.
pub fn dice(m1: &Mask, m2: &Mask) -> Result<f64, RasterError> {
    if m1.width != m2.width || m1.height != m2.height {
        return Err(RasterError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            m1.width, m1.height, m2.width, m2.height
        )));
    }
    let mut inter = 0usize;
    let mut total = 0usize;
    for (&a, &b) in m1.data.iter().zip(&m2.data) {
        inter += (a & b) as usize;
        total += (a + b) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
