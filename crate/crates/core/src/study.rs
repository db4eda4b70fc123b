//! Observer-agreement statistics: intra-rater, inter-rater and
//! model-versus-rater differences, Dice agreement and Bland-Altman limits.
//!
//! Differences are signed `first − second`: annotation 1 − annotation 2
//! within a rater, expert 1 − expert 2 across raters, and model − expert.
//! All pools are accumulated in record order, then pair order, and every
//! mean is a left-to-right sum divided by the count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{measure_with, BpdConvention, Ellipse, GeometryError};
use crate::raster::{dice, rasterize_ellipse};

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("MissingRater: image {image} has no annotations by {rater}")]
    MissingRater { image: String, rater: String },
    #[error("InsufficientData: {0}")]
    InsufficientData(String),
    #[error("InvalidStudy: {0}")]
    InvalidStudy(String),
    #[error("Io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl StudyError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::MissingRater { .. } => "MissingRater",
            Self::InsufficientData(_) => "InsufficientData",
            Self::InvalidStudy(_) => "InvalidStudy",
            Self::Io(_) => "Io",
            Self::Geometry(e) => e.name(),
        }
    }
}

/// All annotations of one image, keyed by rater, in repeat order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub image_id: String,
    pub s_xy_mm: f64,
    pub raters: BTreeMap<String, Vec<Ellipse>>,
}

impl StudyRecord {
    pub fn new(image_id: impl Into<String>, s_xy_mm: f64) -> Self {
        Self { image_id: image_id.into(), s_xy_mm, raters: BTreeMap::new() }
    }

    pub fn with(mut self, rater: impl Into<String>, annotations: Vec<Ellipse>) -> Self {
        self.raters.insert(rater.into(), annotations);
        self
    }

    pub fn annotations(&self, rater: &str) -> Result<&[Ellipse], StudyError> {
        match self.raters.get(rater) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(StudyError::MissingRater { image: self.image_id.clone(), rater: rater.to_owned() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Comparison {
    Intra { rater: String },
    Inter { first: String, second: String },
    ModelExpert { model: String, experts: Vec<String> },
}

impl Comparison {
    pub fn intra(rater: &str) -> Self {
        Self::Intra { rater: rater.into() }
    }

    pub fn inter() -> Self {
        Self::Inter { first: "expert1".into(), second: "expert2".into() }
    }

    pub fn model_expert() -> Self {
        Self::ModelExpert { model: "model".into(), experts: vec!["expert1".into(), "expert2".into()] }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Intra { rater } => format!("intra:{rater}"),
            Self::Inter { first, second } => format!("inter:{first}-{second}"),
            Self::ModelExpert { model, experts } => format!("model_expert:{model}-{}", experts.join("+")),
        }
    }

    pub fn sign_convention(&self) -> String {
        match self {
            Self::Intra { rater } => format!("{rater} annotation 1 - {rater} annotation 2"),
            Self::Inter { first, second } => format!("{first} - {second}"),
            Self::ModelExpert { model, .. } => format!("{model} - expert"),
        }
    }
}

/// Every `(first[i], second[j])` pair in row-major order.
pub fn cross_pairs<T: Copy>(first: &[T], second: &[T]) -> Vec<(T, T)> {
    first.iter().flat_map(|&a| second.iter().map(move |&b| (a, b))).collect()
}

/// Signed `first − second` over all cross pairs.
pub fn signed_differences(first: &[f64], second: &[f64]) -> Vec<f64> {
    cross_pairs(first, second).into_iter().map(|(a, b)| a - b).collect()
}

/// Ellipse pairs a comparison mandates for one record.
pub fn comparison_pairs(record: &StudyRecord, kind: &Comparison) -> Result<Vec<(Ellipse, Ellipse)>, StudyError> {
    match kind {
        Comparison::Intra { rater } => {
            let anns = record.annotations(rater)?;
            if anns.len() < 2 {
                return Err(StudyError::InsufficientData(format!(
                    "image {}: {rater} has {} annotation(s), intra-rater needs 2",
                    record.image_id,
                    anns.len()
                )));
            }
            Ok(vec![(anns[0], anns[1])])
        }
        Comparison::Inter { first, second } => {
            Ok(cross_pairs(record.annotations(first)?, record.annotations(second)?))
        }
        Comparison::ModelExpert { model, experts } => {
            let m = record.annotations(model)?;
            let mut out = Vec::new();
            for e in experts {
                out.extend(cross_pairs(m, record.annotations(e)?));
            }
            Ok(out)
        }
    }
}

/// Dice of two filled ellipses rasterized on a shared grid covering both.
pub fn ellipse_dice(e1: &Ellipse, e2: &Ellipse) -> f64 {
    let bounds = |e: &Ellipse| {
        let (hx, hy) = e.half_extents();
        (e.cx() - hx, e.cy() - hy, e.cx() + hx, e.cy() + hy)
    };
    let (a, b) = (bounds(e1), bounds(e2));
    let x0 = a.0.min(b.0).floor() - 2.0;
    let y0 = a.1.min(b.1).floor() - 2.0;
    let w = (a.2.max(b.2) - x0).ceil() as usize + 3;
    let h = (a.3.max(b.3) - y0).ceil() as usize + 3;
    let m1 = rasterize_ellipse(&e1.translated(-x0, -y0), w, h);
    let m2 = rasterize_ellipse(&e2.translated(-x0, -y0), w, h);
    dice(&m1, &m2).expect("same grid")
}

/// Per-metric signed differences for one record, plus the pairwise Dice
/// values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDifferences {
    pub hc_mm: Vec<f64>,
    pub bpd_mm: Vec<f64>,
    pub dice: Vec<f64>,
}

pub fn pairwise_differences(
    record: &StudyRecord,
    kind: &Comparison,
    convention: BpdConvention,
) -> Result<PairwiseDifferences, StudyError> {
    let pairs = comparison_pairs(record, kind)?;
    let mut out = PairwiseDifferences { hc_mm: Vec::new(), bpd_mm: Vec::new(), dice: Vec::new() };
    for (e1, e2) in pairs {
        let m1 = measure_with(&e1, record.s_xy_mm, convention)?;
        let m2 = measure_with(&e2, record.s_xy_mm, convention)?;
        out.hc_mm.push(m1.hc_mm - m2.hc_mm);
        out.bpd_mm.push(m1.bpd_mm - m2.bpd_mm);
        out.dice.push(ellipse_dice(&e1, &e2));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdConvention {
    /// Divisor N.
    #[default]
    Population,
    /// Divisor N − 1.
    Sample,
}

impl std::str::FromStr for SdConvention {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "population" => Ok(Self::Population),
            "sample" => Ok(Self::Sample),
            _ => Err(format!("unknown SD convention {s:?} (population|sample)")),
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v) / values.len() as f64
}

pub fn standard_deviation(values: &[f64], convention: SdConvention) -> f64 {
    let m = mean(values);
    let ss = values.iter().fold(0.0, |acc, v| acc + (v - m) * (v - m));
    let div = match convention {
        SdConvention::Population => values.len(),
        SdConvention::Sample => values.len() - 1,
    };
    (ss / div as f64).sqrt()
}

fn check_count(n: usize, convention: SdConvention, what: &str) -> Result<(), StudyError> {
    let min = match convention {
        SdConvention::Population => 1,
        SdConvention::Sample => 2,
    };
    if n < min {
        return Err(StudyError::InsufficientData(format!("{what}: {n} value(s)")));
    }
    Ok(())
}

/// MAE and ME of a pool of signed differences, with the SD of |d| and of d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceStats {
    pub n: usize,
    pub mae: f64,
    pub mae_sd: f64,
    pub me: f64,
    pub me_sd: f64,
}

impl DifferenceStats {
    pub fn from_differences(d: &[f64], convention: SdConvention) -> Result<Self, StudyError> {
        check_count(d.len(), convention, "difference pool")?;
        let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
        Ok(Self {
            n: d.len(),
            mae: mean(&abs),
            mae_sd: standard_deviation(&abs, convention),
            me: mean(d),
            me_sd: standard_deviation(d, convention),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueStats {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

impl ValueStats {
    pub fn from_values(v: &[f64], convention: SdConvention) -> Result<Self, StudyError> {
        check_count(v.len(), convention, "value pool")?;
        Ok(Self { n: v.len(), mean: mean(v), sd: standard_deviation(v, convention) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub comparison: String,
    pub sign_convention: String,
    pub sd_convention: SdConvention,
    pub images: usize,
    pub hc_mm: DifferenceStats,
    pub bpd_mm: DifferenceStats,
    /// Per-image Dice, each the mean over that image's pairs.
    pub dice: ValueStats,
}

/// Pools per-image differences across `records` and summarizes them.
pub fn aggregate(
    records: &[StudyRecord],
    kind: &Comparison,
    convention: BpdConvention,
    sd: SdConvention,
) -> Result<AgreementReport, StudyError> {
    if records.len() < 2 {
        return Err(StudyError::InsufficientData(format!("{} record(s), need at least 2", records.len())));
    }
    let (mut hc, mut bpd, mut dices) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        let d = pairwise_differences(r, kind, convention)?;
        hc.extend(d.hc_mm);
        bpd.extend(d.bpd_mm);
        dices.push(mean(&d.dice));
    }
    Ok(AgreementReport {
        comparison: kind.label(),
        sign_convention: kind.sign_convention(),
        sd_convention: sd,
        images: records.len(),
        hc_mm: DifferenceStats::from_differences(&hc, sd)?,
        bpd_mm: DifferenceStats::from_differences(&bpd, sd)?,
        dice: ValueStats::from_values(&dices, sd)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlandAltman {
    /// `(mean, difference)` per pair.
    pub points: Vec<(f64, f64)>,
    pub bias: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub const LIMITS_Z: f64 = 1.96;

/// Points `((m1 + m2) / 2, m1 − m2)`, bias and `bias ± 1.96·SD` limits.
pub fn bland_altman(pairs: &[(f64, f64)], sd: SdConvention) -> Result<BlandAltman, StudyError> {
    if pairs.len() < 2 {
        return Err(StudyError::InsufficientData(format!("{} pair(s), need at least 2", pairs.len())));
    }
    let points: Vec<(f64, f64)> = pairs.iter().map(|&(a, b)| ((a + b) / 2.0, a - b)).collect();
    let diffs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let bias = mean(&diffs);
    let s = standard_deviation(&diffs, sd);
    Ok(BlandAltman { points, bias, sd: s, lower: bias - LIMITS_Z * s, upper: bias + LIMITS_Z * s })
}

impl BlandAltman {
    /// One comment line with bias and limits, a `mean,diff` header, then
    /// one row per pair.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# bias={} sd={} lower={} upper={} n={}\nmean,diff\n",
            self.bias,
            self.sd,
            self.lower,
            self.upper,
            self.points.len()
        );
        for (m, d) in &self.points {
            let _ = writeln!(s, "{m},{d}");
        }
        s
    }
}

/// Published mean (SD) agreement values for documentation and report
/// comparison. Columns: intra-expert 1, intra-expert 2, inter-expert,
/// model-expert, whole test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub intra_expert1: (f64, f64),
    pub intra_expert2: (f64, f64),
    pub inter_expert: (f64, f64),
    pub model_expert: (f64, f64),
    pub all_test: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceTable {
    pub hc_mae_mm: ReferenceRow,
    pub hc_me_mm: ReferenceRow,
    pub bpd_mae_mm: ReferenceRow,
    pub bpd_me_mm: ReferenceRow,
    pub dice: ReferenceRow,
}

pub const REFERENCE_TABLE: ReferenceTable = ReferenceTable {
    hc_mae_mm: ReferenceRow {
        intra_expert1: (1.55, 1.30),
        intra_expert2: (1.55, 1.14),
        inter_expert: (2.16, 1.16),
        model_expert: (1.99, 0.87),
        all_test: (1.80, 1.49),
    },
    hc_me_mm: ReferenceRow {
        intra_expert1: (0.18, 2.01),
        intra_expert2: (-0.09, 1.92),
        inter_expert: (1.56, 1.70),
        model_expert: (1.01, 1.62),
        all_test: (0.54, 2.28),
    },
    bpd_mae_mm: ReferenceRow {
        intra_expert1: (0.40, 0.32),
        intra_expert2: (0.60, 0.45),
        inter_expert: (0.59, 0.34),
        model_expert: (0.61, 0.33),
        all_test: (0.68, 0.62),
    },
    bpd_me_mm: ReferenceRow {
        intra_expert1: (-0.05, 0.51),
        intra_expert2: (-0.06, 0.75),
        inter_expert: (0.01, 0.60),
        model_expert: (0.29, 0.55),
        all_test: (0.13, 0.91),
    },
    dice: ReferenceRow {
        intra_expert1: (0.983, 0.006),
        intra_expert2: (0.984, 0.005),
        inter_expert: (0.980, 0.005),
        model_expert: (0.980, 0.005),
        all_test: (0.981, 0.007),
    },
};

pub fn reference_table() -> &'static ReferenceTable {
    &REFERENCE_TABLE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StudyRow {
    image_id: String,
    rater: String,
    repeat_index: usize,
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    alpha: f64,
    s_xy_mm: f64,
}

/// Parses `image_id,rater,repeat_index,cx,cy,a,b,alpha,s_xy_mm` rows.
/// Records keep first-appearance order of image ids; annotations are
/// ordered by repeat index, which must be unique per rater and image.
pub fn parse_study_csv(text: &str) -> Result<Vec<StudyRecord>, StudyError> {
    let bad = |m: String| StudyError::InvalidStudy(m);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, (f64, BTreeMap<String, BTreeMap<usize, Ellipse>>)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<StudyRow>().enumerate() {
        let row = row.map_err(|e| bad(format!("row {}: {e}", i + 1)))?;
        let e = Ellipse::new(row.cx, row.cy, row.a, row.b, row.alpha)?;
        let entry = rows.entry(row.image_id.clone()).or_insert_with(|| {
            order.push(row.image_id.clone());
            (row.s_xy_mm, BTreeMap::new())
        });
        if entry.0 != row.s_xy_mm {
            return Err(bad(format!("image {}: inconsistent s_xy_mm", row.image_id)));
        }
        if entry.1.entry(row.rater.clone()).or_default().insert(row.repeat_index, e).is_some() {
            return Err(bad(format!("image {}: duplicate repeat {} for {}", row.image_id, row.repeat_index, row.rater)));
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let (s, raters) = rows.remove(&id).expect("id recorded");
            StudyRecord {
                image_id: id,
                s_xy_mm: s,
                raters: raters.into_iter().map(|(r, anns)| (r, anns.into_values().collect())).collect(),
            }
        })
        .collect())
}

pub fn read_study_csv(path: &Path) -> Result<Vec<StudyRecord>, StudyError> {
    parse_study_csv(&std::fs::read_to_string(path)?)
}

pub fn study_csv(records: &[StudyRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        for (rater, anns) in &r.raters {
            for (k, e) in anns.iter().enumerate() {
                w.serialize(StudyRow {
                    image_id: r.image_id.clone(),
                    rater: rater.clone(),
                    repeat_index: k + 1,
                    cx: e.cx(),
                    cy: e.cy(),
                    a: e.a(),
                    b: e.b(),
                    alpha: e.alpha(),
                    s_xy_mm: r.s_xy_mm,
                })
                .expect("in-memory csv");
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8")
}
