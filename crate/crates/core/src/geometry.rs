//! Ellipse geometry: conic/geometric conversion, direct least-squares
//! fitting, perimeter and head biometrics.
//!
//! Angles follow the parametric map
//!
//! ```text
//! x = cx + a cos t cos α − b sin t sin α
//! y = cy + a cos t sin α + b sin t cos α
//! ```
//!
//! so `alpha` is measured from the +x axis towards +y, normalized to `[0, π)`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("TooFewPoints: need at least 6 points, got {got}")]
    TooFewPoints { got: usize },
    #[error("DegenerateConfiguration: points do not determine an ellipse")]
    DegenerateConfiguration,
    #[error("NotAnEllipse: conic is not a real, non-degenerate ellipse")]
    NotAnEllipse,
    #[error("NonPositivePixelSize: pixel size must be > 0, got {0}")]
    NonPositivePixelSize(f64),
    #[error("InvalidEllipse: {0}")]
    InvalidEllipse(String),
}

impl GeometryError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TooFewPoints { .. } => "TooFewPoints",
            Self::DegenerateConfiguration => "DegenerateConfiguration",
            Self::NotAnEllipse => "NotAnEllipse",
            Self::NonPositivePixelSize(_) => "NonPositivePixelSize",
            Self::InvalidEllipse(_) => "InvalidEllipse",
        }
    }
}

/// Minimum number of points accepted by [`fit_ellipse`].
pub const MIN_FIT_POINTS: usize = 6;

/// Wraps an angle into `[0, π)`.
pub fn normalize_angle(alpha: f64) -> f64 {
    let r = alpha.rem_euclid(PI);
    // rem_euclid can return exactly PI for tiny negative inputs
    if r >= PI {
        0.0
    } else {
        r
    }
}

/// Geometric ellipse in pixel units. Invariant: `a >= b > 0`, `alpha ∈ [0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEllipse", into = "RawEllipse")]
pub struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEllipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    alpha: f64,
}

impl TryFrom<RawEllipse> for Ellipse {
    type Error = GeometryError;

    fn try_from(r: RawEllipse) -> Result<Self, Self::Error> {
        Ellipse::new(r.cx, r.cy, r.a, r.b, r.alpha)
    }
}

impl From<Ellipse> for RawEllipse {
    fn from(e: Ellipse) -> Self {
        RawEllipse { cx: e.cx, cy: e.cy, a: e.a, b: e.b, alpha: e.alpha }
    }
}

impl Ellipse {
    /// Builds an ellipse, swapping the axes (and rotating by π/2) when `b > a`.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, alpha: f64) -> Result<Self, GeometryError> {
        if ![cx, cy, a, b, alpha].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidEllipse("non-finite parameter".into()));
        }
        if a <= 0.0 || b <= 0.0 {
            return Err(GeometryError::InvalidEllipse(format!(
                "semi-axes must be positive, got a={a}, b={b}"
            )));
        }
        let (a, b, alpha) = if b > a { (b, a, alpha + PI / 2.0) } else { (a, b, alpha) };
        let alpha = if a == b { 0.0 } else { normalize_angle(alpha) };
        Ok(Self { cx, cy, a, b, alpha })
    }

    pub fn circle(cx: f64, cy: f64, r: f64) -> Result<Self, GeometryError> {
        Self::new(cx, cy, r, r, 0.0)
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    /// Semi-major axis.
    pub fn a(&self) -> f64 {
        self.a
    }
    /// Semi-minor axis.
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn center(&self) -> (f64, f64) {
        (self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        PI * self.a * self.b
    }

    /// Point at parametric angle `t`.
    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (sa, ca) = self.alpha.sin_cos();
        let (st, ct) = t.sin_cos();
        let u = self.a * ct;
        let v = self.b * st;
        (self.cx + u * ca - v * sa, self.cy + u * sa + v * ca)
    }

    /// Normalized implicit value `(u/a)² + (v/b)² − 1` in the ellipse frame;
    /// negative inside, zero on the curve.
    pub fn implicit(&self, x: f64, y: f64) -> f64 {
        let (u, v) = self.to_local(x, y);
        (u / self.a).powi(2) + (v / self.b).powi(2) - 1.0
    }

    /// Coordinates of `(x, y)` in the frame centered on the ellipse with the
    /// major axis along +u.
    pub fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (sa, ca) = self.alpha.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        (dx * ca + dy * sa, -dx * sa + dy * ca)
    }

    /// Half-extents of the axis-aligned bounding box.
    pub fn half_extents(&self) -> (f64, f64) {
        let (sa, ca) = self.alpha.sin_cos();
        let hx = ((self.a * ca).powi(2) + (self.b * sa).powi(2)).sqrt();
        let hy = ((self.a * sa).powi(2) + (self.b * ca).powi(2)).sqrt();
        (hx, hy)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { cx: self.cx + dx, cy: self.cy + dy, ..*self }
    }

    pub fn scaled(&self, k: f64) -> Result<Self, GeometryError> {
        Self::new(self.cx * k, self.cy * k, self.a * k, self.b * k, self.alpha)
    }

    /// Mirror about the vertical line `x = (width − 1) / 2`, the axis used
    /// when flipping a `width`-pixel image left to right.
    pub fn mirrored_x(&self, width: usize) -> Self {
        let cx = width as f64 - 1.0 - self.cx;
        let alpha = if self.a == self.b { 0.0 } else { normalize_angle(PI - self.alpha) };
        Self { cx, alpha, ..*self }
    }
}

/// Coefficients of `A x² + B xy + C y² + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl ConicCoefficients {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Self {
        Self { a, b, c, d, e, f }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }

    /// `B² − 4AC`; negative for ellipses.
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * k))
    }

    /// Rescaled to unit Euclidean norm over the six coefficients.
    pub fn unit_norm(&self) -> Self {
        let n = self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt();
        self.scaled(1.0 / n)
    }

    /// Rescaled so that `4AC − B² = 1`; `None` when the conic is not elliptic.
    pub fn ellipse_normalized(&self) -> Option<Self> {
        let q = -self.discriminant();
        (q > 0.0 && q.is_finite()).then(|| self.scaled(1.0 / q.sqrt()))
    }
}

pub fn geometric_to_conic(e: &Ellipse) -> ConicCoefficients {
    let (s, c) = e.alpha.sin_cos();
    let ia = 1.0 / (e.a * e.a);
    let ib = 1.0 / (e.b * e.b);
    let a = c * c * ia + s * s * ib;
    let b = 2.0 * c * s * (ia - ib);
    let cc = s * s * ia + c * c * ib;
    let d = -2.0 * a * e.cx - b * e.cy;
    let ee = -b * e.cx - 2.0 * cc * e.cy;
    let f = a * e.cx * e.cx + b * e.cx * e.cy + cc * e.cy * e.cy - 1.0;
    ConicCoefficients::new(a, b, cc, d, ee, f)
}

pub fn conic_to_geometric(c: &ConicCoefficients) -> Result<Ellipse, GeometryError> {
    if !c.to_array().iter().all(|v| v.is_finite()) {
        return Err(GeometryError::NotAnEllipse);
    }
    let det = -c.discriminant();
    if det <= 0.0 {
        return Err(GeometryError::NotAnEllipse);
    }
    let c = if c.a + c.c < 0.0 { c.scaled(-1.0) } else { *c };
    let x0 = (c.b * c.e - 2.0 * c.c * c.d) / det;
    let y0 = (c.b * c.d - 2.0 * c.a * c.e) / det;
    // value of the quadratic form at the center
    let f0 = c.f + 0.5 * (c.d * x0 + c.e * y0);
    if !(f0 < 0.0) {
        return Err(GeometryError::NotAnEllipse);
    }
    let mean = 0.5 * (c.a + c.c);
    let radius = (0.5 * (c.a - c.c)).hypot(0.5 * c.b);
    let lam_max = mean + radius;
    let lam_min = 0.25 * det / lam_max;
    let a = (-f0 / lam_min).sqrt();
    let b = (-f0 / lam_max).sqrt();
    let alpha = if radius == 0.0 { 0.0 } else { 0.5 * c.b.atan2(c.a - c.c) + PI / 2.0 };
    Ellipse::new(x0, y0, a, b, alpha).map_err(|_| GeometryError::NotAnEllipse)
}

/// `n` points at uniformly spaced parametric angles `2πk/n`.
pub fn sample_points(e: &Ellipse, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|k| e.point_at(2.0 * PI * k as f64 / n as f64))
        .collect()
}

/// Direct least-squares ellipse fit under the constraint `4AC − B² = 1`.
///
/// Points are centered and scaled to RMS radius √2 before building the
/// scatter matrix. The 6×6 generalized eigenproblem is reduced to a 3×3
/// ordinary one by eliminating the linear terms, and that is solved through
/// its characteristic cubic.
pub fn fit_ellipse(points: &[(f64, f64)]) -> Result<Ellipse, GeometryError> {
    let fit = fit_normalized(points)?;
    let e = conic_to_geometric(&fit.conic).map_err(|_| GeometryError::DegenerateConfiguration)?;
    let inv = 1.0 / fit.scale;
    Ellipse::new(
        e.cx * inv + fit.mean.0,
        e.cy * inv + fit.mean.1,
        e.a * inv,
        e.b * inv,
        e.alpha,
    )
    .map_err(|_| GeometryError::DegenerateConfiguration)
}

/// Same fit as [`fit_ellipse`], returned as conic coefficients in the input
/// frame, normalized so that `4AC − B² = 1`.
pub fn fit_conic(points: &[(f64, f64)]) -> Result<ConicCoefficients, GeometryError> {
    let fit = fit_normalized(points)?;
    let ConicCoefficients { a, b, c, d, e, f } = fit.conic;
    let s = fit.scale;
    let (mx, my) = fit.mean;
    let (a2, b2, c2) = (a * s * s, b * s * s, c * s * s);
    let (d2, e2) = (d * s, e * s);
    let out = ConicCoefficients::new(
        a2,
        b2,
        c2,
        -2.0 * a2 * mx - b2 * my + d2,
        -b2 * mx - 2.0 * c2 * my + e2,
        a2 * mx * mx + b2 * mx * my + c2 * my * my - d2 * mx - e2 * my + f,
    );
    out.ellipse_normalized().ok_or(GeometryError::DegenerateConfiguration)
}

struct NormalizedFit {
    conic: ConicCoefficients,
    mean: (f64, f64),
    scale: f64,
}

fn fit_normalized(points: &[(f64, f64)]) -> Result<NormalizedFit, GeometryError> {
    let n = points.len();
    if n < MIN_FIT_POINTS {
        return Err(GeometryError::TooFewPoints { got: n });
    }
    if !points.iter().all(|(x, y)| x.is_finite() && y.is_finite()) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let ms = points
        .iter()
        .map(|(x, y)| (x - mx).powi(2) + (y - my).powi(2))
        .sum::<f64>()
        / nf;
    if !(ms > 0.0) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let scale = (2.0 / ms).sqrt();

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(x, y) in points {
        let x = (x - mx) * scale;
        let y = (y - my) * scale;
        let q = Vector3::new(x * x, x * y, y * y);
        let l = Vector3::new(x, y, 1.0);
        s1 += q * q.transpose();
        s2 += q * l.transpose();
        s3 += l * l.transpose();
    }
    // S3 is n times the (x, y, 1) moment matrix; it is singular exactly when
    // the points are collinear. After conditioning its entries are O(n).
    if s3.determinant().abs() <= 1e-10 * nf.powi(3) {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let s3_inv = s3.try_inverse().ok_or(GeometryError::DegenerateConfiguration)?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // premultiply by the inverse of the 3×3 constraint block [[0,0,2],[0,-1,0],[2,0,0]]
    let reduced = Matrix3::from_rows(&[
        (m.row(2) * 0.5).into_owned(),
        (-m.row(1)).into_owned(),
        (m.row(0) * 0.5).into_owned(),
    ]);

    let quad = ellipse_eigenvector(&reduced).ok_or(GeometryError::DegenerateConfiguration)?;
    let lin = t * quad;
    let conic = ConicCoefficients::new(quad[0], quad[1], quad[2], lin[0], lin[1], lin[2]);
    let conic = conic.ellipse_normalized().ok_or(GeometryError::DegenerateConfiguration)?;
    Ok(NormalizedFit { conic, mean: (mx, my), scale })
}

/// Eigenvector of `m` satisfying `4 v0 v2 − v1² > 0`, taken at the smallest
/// such eigenvalue.
fn ellipse_eigenvector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let norm = m.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in char_poly_roots(m) {
        let Some(v) = null_vector(&(m - Matrix3::identity() * lambda)) else {
            continue;
        };
        let v = polish_eigenvector(m, lambda, v, norm);
        let constraint = 4.0 * v[0] * v[2] - v[1] * v[1];
        if constraint <= 0.0 {
            continue;
        }
        if best.as_ref().is_none_or(|(l, _)| lambda < *l) {
            best = Some((lambda, v));
        }
    }
    best.map(|(_, v)| v)
}

/// Real roots of the characteristic polynomial `λ³ − tr λ² + c1 λ − det`.
fn char_poly_roots(m: &Matrix3<f64>) -> Vec<f64> {
    let tr = m.trace();
    let c1 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)]
        - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let det = m.determinant();
    let mut roots = cubic_real_roots(-tr, c1, -det);
    let poly = |l: f64| ((l - tr) * l + c1) * l - det;
    let dpoly = |l: f64| (3.0 * l - 2.0 * tr) * l + c1;
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let d = dpoly(*r);
            if d == 0.0 {
                break;
            }
            let step = poly(*r) / d;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    roots
}

/// Real roots of the monic cubic `x³ + p2 x² + p1 x + p0`.
fn cubic_real_roots(p2: f64, p1: f64, p0: f64) -> Vec<f64> {
    let shift = p2 / 3.0;
    let p = p1 - p2 * p2 / 3.0;
    let q = 2.0 * p2 * p2 * p2 / 27.0 - p2 * p1 / 3.0 + p0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if p == 0.0 && q == 0.0 {
        return vec![-shift];
    }
    if disc > 0.0 {
        let sd = disc.sqrt();
        let u = (-q / 2.0 + sd).cbrt();
        let v = (-q / 2.0 - sd).cbrt();
        vec![u + v - shift]
    } else {
        // three real roots (possibly repeated)
        let r = (-p / 3.0).sqrt();
        let arg = if r == 0.0 { 0.0 } else { (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0) };
        let phi = arg.acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi + 2.0 * PI * k as f64) / 3.0).cos() - shift)
            .collect()
    }
}

/// Unit vector in the (near) null space of a rank-2 matrix: the largest
/// cross product of two of its rows.
fn null_vector(m: &Matrix3<f64>) -> Option<Vector3<f64>> {
    let r: Vec<Vector3<f64>> = (0..3).map(|i| m.row(i).transpose()).collect();
    let candidates = [r[0].cross(&r[1]), r[0].cross(&r[2]), r[1].cross(&r[2])];
    let best = candidates
        .iter()
        .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))?;
    let n = best.norm();
    (n > 0.0 && n.is_finite()).then(|| best / n)
}

/// One step of shifted inverse iteration.
fn polish_eigenvector(m: &Matrix3<f64>, lambda: f64, v: Vector3<f64>, norm: f64) -> Vector3<f64> {
    let shift = lambda + 1e-10 * norm;
    let Some(inv) = (m - Matrix3::identity() * shift).try_inverse() else {
        return v;
    };
    let y = inv * v;
    let n = y.norm();
    if n > 0.0 && n.is_finite() {
        y / n
    } else {
        v
    }
}

/// `h = (a − b)² / (a + b)²`.
pub fn eccentricity_h(e: &Ellipse) -> f64 {
    let r = (e.a - e.b) / (e.a + e.b);
    r * r
}

/// Ramanujan's second perimeter approximation, in pixels.
pub fn ramanujan_perimeter(e: &Ellipse) -> f64 {
    let h = eccentricity_h(e);
    PI * (e.a + e.b) * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()))
}

/// Which length of the minor axis is reported as BPD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BpdConvention {
    /// Full minor axis, `2 b`.
    #[default]
    Diameter,
    /// Minor semi-axis `b`.
    Radius,
}

impl std::str::FromStr for BpdConvention {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "diameter" => Ok(Self::Diameter),
            "radius" => Ok(Self::Radius),
            other => Err(format!("unknown BPD convention '{other}' (expected diameter|radius)")),
        }
    }
}

/// Head circumference and biparietal diameter in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biometrics {
    pub hc_mm: f64,
    pub bpd_mm: f64,
}

pub fn measure(e: &Ellipse, s_xy: f64) -> Result<Biometrics, GeometryError> {
    measure_with(e, s_xy, BpdConvention::Diameter)
}

pub fn measure_with(
    e: &Ellipse,
    s_xy: f64,
    convention: BpdConvention,
) -> Result<Biometrics, GeometryError> {
    if !(s_xy > 0.0) || !s_xy.is_finite() {
        return Err(GeometryError::NonPositivePixelSize(s_xy));
    }
    let minor = match convention {
        BpdConvention::Diameter => 2.0 * e.b,
        BpdConvention::Radius => e.b,
    };
    Ok(Biometrics { hc_mm: ramanujan_perimeter(e) * s_xy, bpd_mm: minor * s_xy })
}
