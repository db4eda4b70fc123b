use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use caliper::annotation::{extract_ground_truth, Detector, KeyColor};
use caliper::geometry::measure_with;
use caliper::phantom::{generate, generate_dataset, Dataset, ManifestEntry, Split, SplitFractions, MANIFEST_FILE};
use caliper::pipeline::{fit_mask, measure_mask};
use caliper::raster::dice;
use caliper::rng::derive_key;
use caliper::segnet::{load_params, predict, save_params, train_with_progress, AdamConfig, Sample};
use caliper::study::{
    aggregate, bland_altman, comparison_pairs, read_study_csv, reference_table, BlandAltman, Comparison, SdConvention,
    StudyRecord, ValueStats,
};
use caliper::{ArchitectureConfig, BpdConvention, Ellipse, GrayImage, Mask, RgbImage, Sidecar, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::args::{
    BenchArgs, Command, EvaluateArgs, ExtractArgs, FitArgs, InferArgs, MeasureArgs, PhantomGenArgs, TrainArgs,
};
use crate::failure::{CmdResult, Failure};
use crate::manifest::RUN_MANIFEST_FILE;

/// What a finished command contributes to its run manifest.
pub struct Run {
    pub seed: Option<u64>,
    pub effective: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    /// Manifest location when `--manifest` is not given.
    pub default_manifest: Option<PathBuf>,
}

pub fn run(cmd: &Command) -> CmdResult<Run> {
    match cmd {
        Command::PhantomGen(a) => cmd_phantom_gen(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Measure(a) => cmd_measure(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Replay(_) => Err(Failure::usage("replay is handled before dispatch")),
    }
}

fn create_dir(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(|e| Failure::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CmdResult<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Failure::runtime("InvalidInput", format!("{}: {e}", path.display())))
}

fn stdout_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable"));
}

fn parse_split(s: &str) -> CmdResult<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Failure::usage(format!("unknown split {s:?} (train|validation|test|all)")))
}

fn select(ds: &Dataset, split: Option<Split>) -> Vec<&ManifestEntry> {
    ds.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)).collect()
}

pub fn cmd_phantom_gen(a: &PhantomGenArgs) -> CmdResult<Run> {
    let params = a.phantom.params();
    params.validate().map_err(Failure::usage)?;
    let fractions = SplitFractions { test: a.test_fraction, validation: a.validation_fraction };
    let n = a.n as usize;
    let sizes = fractions.sizes(n).map_err(Failure::usage)?;
    let t0 = Instant::now();
    generate_dataset(&a.out, a.seed, n, &params, &fractions)?;
    eprintln!(
        "phantom-gen: {n} samples ({} train, {} validation, {} test) in {} ({:.1} s)",
        sizes.train,
        sizes.validation,
        sizes.test,
        a.out.display(),
        t0.elapsed().as_secs_f64()
    );
    stdout_json(&json!({ "samples": n, "sizes": sizes, "out": a.out }));
    Ok(Run {
        seed: Some(a.seed),
        effective: json!({ "phantom": params, "split_fractions": fractions, "split_sizes": sizes }),
        outputs: vec![a.out.join(MANIFEST_FILE)],
        default_manifest: Some(a.out.join(RUN_MANIFEST_FILE)),
    })
}

pub fn cmd_extract(a: &ExtractArgs) -> CmdResult<Run> {
    // pixel size plays no part in extraction
    let img = RgbImage::read_ppm(&a.overlay, 1.0)?;
    let detector = Detector {
        chroma_threshold: a.chroma_threshold,
        key_color: a.key_color.map(|c| KeyColor { rgb: c.0, tolerance: a.color_tolerance }),
    };
    let (ellipse, mask) = extract_ground_truth(&img, &detector)?;
    create_dir(&a.out)?;
    let (ep, mp) = (a.out.join("ellipse.json"), a.out.join("mask.pgm"));
    write_json(&ep, &ellipse)?;
    mask.write_pgm(&mp)?;
    stdout_json(&ellipse);
    Ok(Run {
        seed: None,
        effective: json!({ "detector": detector }),
        outputs: vec![ep, mp],
        default_manifest: Some(a.out.join(RUN_MANIFEST_FILE)),
    })
}

pub fn cmd_fit(a: &FitArgs) -> CmdResult<Run> {
    let mask = Mask::read_pgm(&a.mask)?;
    let (ellipse, contour) = fit_mask(&mask)?;
    eprintln!("fit: {} contour pixels", contour.len());
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        write_json(out, &ellipse)?;
        outputs.push(out.clone());
    }
    stdout_json(&ellipse);
    Ok(Run {
        seed: None,
        effective: json!({}),
        outputs,
        default_manifest: a.out.as_ref().map(|o| o.with_extension("manifest.json")),
    })
}

pub fn cmd_measure(a: &MeasureArgs) -> CmdResult<Run> {
    let ellipse: Ellipse = read_json(&a.ellipse)?;
    let s_xy = match (a.s_xy, &a.sidecar) {
        (Some(s), _) => s,
        (None, Some(p)) => Sidecar::read(p)?.s_xy_mm,
        (None, None) => return Err(Failure::usage("pass --s-xy or --sidecar")),
    };
    let bio = measure_with(&ellipse, s_xy, a.bpd_convention)?;
    stdout_json(&bio);
    Ok(Run {
        seed: None,
        effective: json!({ "s_xy_mm": s_xy, "bpd_convention": a.bpd_convention }),
        outputs: Vec::new(),
        default_manifest: None,
    })
}

fn load_samples(ds: &Dataset, split: Split) -> CmdResult<Vec<Sample>> {
    ds.split(split)
        .map(|e| {
            let (image, mask) = ds.load(e)?;
            Ok(Sample { image, mask })
        })
        .collect()
}

pub fn train_settings(a: &TrainArgs) -> CmdResult<(ArchitectureConfig, TrainConfig)> {
    let arch = ArchitectureConfig {
        channels: a.channels.clone(),
        kernel_size: a.kernel_size,
        skip_connections: !a.no_skip,
        ..ArchitectureConfig::default()
    };
    arch.validate().map_err(Failure::usage)?;
    let cfg = TrainConfig {
        max_epochs: a.epochs,
        patience: a.patience,
        batch_size: a.batch_size,
        adam: AdamConfig { lr: a.lr, beta1: a.beta1, beta2: a.beta2, epsilon: a.epsilon },
        seed: a.seed,
        augment: !a.no_augment,
    };
    cfg.validate().map_err(Failure::usage)?;
    Ok((arch, cfg))
}

pub fn cmd_train(a: &TrainArgs) -> CmdResult<Run> {
    let (arch, cfg) = train_settings(a)?;
    let ds = Dataset::open(&a.data)?;
    let train_set = load_samples(&ds, Split::Train)?;
    let val_set = load_samples(&ds, Split::Validation)?;
    eprintln!(
        "train: {} train / {} validation samples, channels {:?}, lr {}, up to {} epochs",
        train_set.len(),
        val_set.len(),
        arch.channels,
        cfg.adam.lr,
        cfg.max_epochs
    );
    let t0 = Instant::now();
    let (params, log) = train_with_progress(&train_set, &val_set, &arch, &cfg, |r| {
        eprintln!(
            "epoch {:>3}  loss {:.5}  val dice {:.4}  ({:.0} s)",
            r.epoch,
            r.train_loss,
            r.val_dice,
            t0.elapsed().as_secs_f64()
        );
    })?;
    create_dir(&a.out)?;
    let (pp, lp) = (a.out.join("params.bin"), a.out.join("train_log.csv"));
    save_params(&params, &pp)?;
    fs::write(&lp, log.to_csv()).map_err(|e| Failure::io(&lp, e))?;
    stdout_json(&json!({
        "best_epoch": log.best_epoch,
        "best_val_dice": log.best_val_dice,
        "epochs_run": log.stopped_epoch(),
        "parameters": params.parameter_count(),
        "train_samples": train_set.len(),
        "validation_samples": val_set.len(),
    }));
    Ok(Run {
        seed: Some(cfg.seed),
        effective: json!({ "architecture": arch, "train": cfg }),
        outputs: vec![pp, lp],
        default_manifest: Some(a.out.join(RUN_MANIFEST_FILE)),
    })
}

/// One row of `predictions.csv`; geometry is empty when measuring failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub file: String,
    /// `ok`, or the name of the error that stopped the measurement.
    pub status: String,
    pub cx: Option<f64>,
    pub cy: Option<f64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub alpha: Option<f64>,
    pub s_xy_mm: f64,
    pub hc_mm: Option<f64>,
    pub bpd_mm: Option<f64>,
}

pub const PREDICTIONS_FILE: &str = "predictions.csv";

fn image_name(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match path.parent().and_then(|p| p.file_name()) {
        Some(parent) if stem == "image" => parent.to_string_lossy().into_owned(),
        _ => stem,
    }
}

fn pixel_size_for(path: &Path, flag: Option<f64>) -> CmdResult<f64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    for sidecar in [path.with_extension("json"), path.with_file_name("image.json")] {
        if sidecar.is_file() {
            return Ok(Sidecar::read(&sidecar)?.s_xy_mm);
        }
    }
    Err(Failure::usage(format!("no pixel size for {}: pass --s-xy or add an image.json sidecar", path.display())))
}

pub fn cmd_infer(a: &InferArgs) -> CmdResult<Run> {
    let params = load_params(&a.params)?;
    let mut inputs: Vec<(String, GrayImage)> = Vec::new();
    if let Some(dir) = &a.data {
        let ds = Dataset::open(dir)?;
        for e in select(&ds, parse_split(&a.split)?) {
            inputs.push((e.file.clone(), ds.load(e)?.0));
        }
    }
    for p in &a.image {
        inputs.push((image_name(p), GrayImage::read_pgm(p, pixel_size_for(p, a.s_xy)?)?));
    }
    let mut seen = BTreeSet::new();
    if let Some((dup, _)) = inputs.iter().find(|(n, _)| !seen.insert(n.as_str())) {
        return Err(Failure::usage(format!("two inputs share the output name {dup:?}")));
    }
    create_dir(&a.out)?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    let t0 = Instant::now();
    for (name, img) in &inputs {
        let pred = predict(&params, img)?;
        let dir = a.out.join(name);
        create_dir(&dir)?;
        let mp = dir.join("mask.pgm");
        pred.mask.write_pgm(&mp)?;
        outputs.push(mp);
        let row = match measure_mask(&pred.mask, img.s_xy(), a.bpd_convention) {
            Ok(m) => {
                let ep = dir.join("ellipse.json");
                write_json(&ep, &m.ellipse)?;
                outputs.push(ep);
                let e = m.ellipse;
                PredictionRow {
                    file: name.clone(),
                    status: "ok".into(),
                    cx: Some(e.cx()),
                    cy: Some(e.cy()),
                    a: Some(e.a()),
                    b: Some(e.b()),
                    alpha: Some(e.alpha()),
                    s_xy_mm: img.s_xy(),
                    hc_mm: Some(m.biometrics.hc_mm),
                    bpd_mm: Some(m.biometrics.bpd_mm),
                }
            }
            Err(e) => {
                eprintln!("infer: {name}: {e}");
                PredictionRow {
                    file: name.clone(),
                    status: e.name().into(),
                    cx: None,
                    cy: None,
                    a: None,
                    b: None,
                    alpha: None,
                    s_xy_mm: img.s_xy(),
                    hc_mm: None,
                    bpd_mm: None,
                }
            }
        };
        rows.push(row);
    }
    let csv_path = a.out.join(PREDICTIONS_FILE);
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| Failure::runtime("Io", format!("{}: {e}", csv_path.display())))?;
    for r in &rows {
        w.serialize(r).map_err(|e| Failure::runtime("Io", e))?;
    }
    w.flush().map_err(|e| Failure::io(&csv_path, e))?;
    outputs.push(csv_path);
    let failed: Vec<&str> = rows.iter().filter(|r| r.status != "ok").map(|r| r.file.as_str()).collect();
    eprintln!("infer: {} images in {:.1} s, {} failed", rows.len(), t0.elapsed().as_secs_f64(), failed.len());
    stdout_json(&json!({ "images": rows.len(), "measured": rows.len() - failed.len(), "failed": failed }));
    Ok(Run {
        seed: None,
        effective: json!({ "architecture": params.arch, "bpd_convention": a.bpd_convention }),
        outputs,
        default_manifest: Some(a.out.join(RUN_MANIFEST_FILE)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitsSummary {
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

impl From<&BlandAltman> for LimitsSummary {
    fn from(b: &BlandAltman) -> Self {
        Self { n: b.points.len(), bias: b.bias, sd: b.sd, lower: b.lower, upper: b.upper }
    }
}

/// Bland-Altman CSVs for HC and BPD over `(first, second)` measurement
/// pairs; returns the limit summaries.
fn write_bland_altman(
    out: &Path,
    hc: &[(f64, f64)],
    bpd: &[(f64, f64)],
    sd: SdConvention,
    outputs: &mut Vec<PathBuf>,
) -> CmdResult<serde_json::Value> {
    let mut summary = serde_json::Map::new();
    for (name, pairs) in [("hc_mm", hc), ("bpd_mm", bpd)] {
        let ba = bland_altman(pairs, sd)?;
        let path = out.join(format!("bland_altman_{}.csv", name.trim_end_matches("_mm")));
        fs::write(&path, ba.to_csv()).map_err(|e| Failure::io(&path, e))?;
        outputs.push(path);
        summary.insert(name.into(), serde_json::to_value(LimitsSummary::from(&ba)).expect("serializable"));
    }
    Ok(summary.into())
}

fn measurement_pairs(
    records: &[StudyRecord],
    kind: &Comparison,
    conv: BpdConvention,
) -> CmdResult<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    let (mut hc, mut bpd) = (Vec::new(), Vec::new());
    for r in records {
        for (e1, e2) in comparison_pairs(r, kind)? {
            let (m1, m2) = (measure_with(&e1, r.s_xy_mm, conv)?, measure_with(&e2, r.s_xy_mm, conv)?);
            hc.push((m1.hc_mm, m2.hc_mm));
            bpd.push((m1.bpd_mm, m2.bpd_mm));
        }
    }
    Ok((hc, bpd))
}

fn read_predictions(path: &Path) -> CmdResult<Vec<PredictionRow>> {
    let bad = |e: csv::Error| Failure::runtime("InvalidInput", format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(bad)?;
    rdr.deserialize().collect::<Result<_, _>>().map_err(bad)
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> CmdResult<Run> {
    create_dir(&a.out)?;
    let mut outputs = Vec::new();
    let report = match (&a.predictions, &a.data, &a.study) {
        (Some(pred), Some(data), None) => evaluate_predictions(a, pred, data, &mut outputs)?,
        (None, _, Some(study)) => evaluate_study(a, study, &mut outputs)?,
        _ => return Err(Failure::usage("pass --predictions with --data, or --study")),
    };
    let rp = a.out.join("report.json");
    write_json(&rp, &report)?;
    outputs.insert(0, rp);
    stdout_json(&report);
    Ok(Run {
        seed: None,
        effective: json!({ "sd_convention": a.sd, "bpd_convention": a.bpd_convention }),
        outputs,
        default_manifest: Some(a.out.join(RUN_MANIFEST_FILE)),
    })
}

fn evaluate_predictions(
    a: &EvaluateArgs,
    pred_dir: &Path,
    data: &Path,
    outputs: &mut Vec<PathBuf>,
) -> CmdResult<serde_json::Value> {
    let ds = Dataset::open(data)?;
    let truth: HashMap<&str, &ManifestEntry> = ds.entries.iter().map(|e| (e.file.as_str(), e)).collect();
    let rows = read_predictions(&pred_dir.join(PREDICTIONS_FILE))?;
    let (mut records, mut mask_dice, mut failed, mut truth_hc) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for row in &rows {
        let gt = truth
            .get(row.file.as_str())
            .ok_or_else(|| Failure::runtime("InvalidInput", format!("prediction for unknown image {:?}", row.file)))?;
        let geometry = (row.cx, row.cy, row.a, row.b, row.alpha);
        let (Some(cx), Some(cy), Some(ea), Some(eb), Some(al)) = geometry else {
            failed.push(json!({ "file": row.file, "status": row.status }));
            continue;
        };
        let predicted = Ellipse::new(cx, cy, ea, eb, al)?;
        records.push(StudyRecord::new(&row.file, gt.s_xy_mm).with("model", vec![predicted]).with("truth", vec![gt.ellipse]));
        let pm = Mask::read_pgm(pred_dir.join(&row.file).join("mask.pgm"))?;
        let gm = Mask::read_pgm(ds.mask_path(gt))?;
        mask_dice.push(dice(&pm, &gm)?);
        truth_hc.push(measure_with(&gt.ellipse, gt.s_xy_mm, a.bpd_convention)?.hc_mm);
    }
    let kind = Comparison::ModelExpert { model: "model".into(), experts: vec!["truth".into()] };
    let mut agreement = aggregate(&records, &kind, a.bpd_convention, a.sd)?;
    agreement.sign_convention = "model - ground truth".into();
    let mean_truth_hc = caliper::study::mean(&truth_hc);
    let (hc, bpd) = measurement_pairs(&records, &kind, a.bpd_convention)?;
    let limits = write_bland_altman(&a.out, &hc, &bpd, a.sd, outputs)?;
    eprintln!(
        "evaluate: {} images, HC MAE {:.3} mm ({:.2}% of mean HC), mask Dice {:.4}",
        agreement.images,
        agreement.hc_mm.mae,
        100.0 * agreement.hc_mm.mae / mean_truth_hc,
        caliper::study::mean(&mask_dice)
    );
    Ok(json!({
        "mode": "predictions",
        "agreement": agreement,
        "mask_dice": ValueStats::from_values(&mask_dice, a.sd)?,
        "reference_hc_mean_mm": mean_truth_hc,
        "hc_mae_fraction_of_mean": agreement.hc_mm.mae / mean_truth_hc,
        "failed": failed,
        "bland_altman": limits,
        "published_reference": reference_table(),
    }))
}

fn evaluate_study(a: &EvaluateArgs, path: &Path, outputs: &mut Vec<PathBuf>) -> CmdResult<serde_json::Value> {
    let records = read_study_csv(path)?;
    let has = |rater: &str, at_least: usize| records.iter().all(|r| r.raters.get(rater).is_some_and(|v| v.len() >= at_least));
    let mut kinds = Vec::new();
    for e in &a.experts {
        if has(e, 2) {
            kinds.push(Comparison::intra(e));
        }
    }
    if a.experts.len() >= 2 && has(&a.experts[0], 1) && has(&a.experts[1], 1) {
        kinds.push(Comparison::Inter { first: a.experts[0].clone(), second: a.experts[1].clone() });
    }
    if has(&a.model_rater, 1) && a.experts.iter().all(|e| has(e, 1)) {
        kinds.push(Comparison::ModelExpert { model: a.model_rater.clone(), experts: a.experts.clone() });
    }
    let Some(ba_kind) = kinds.last().cloned() else {
        return Err(caliper::StudyError::InsufficientData("no comparison has data for every record".into()).into());
    };
    let reports = kinds
        .iter()
        .map(|k| aggregate(&records, k, a.bpd_convention, a.sd))
        .collect::<Result<Vec<_>, _>>()?;
    for r in &reports {
        eprintln!("evaluate: {}  HC MAE {:.3} mm  ME {:.3} mm  Dice {:.4}", r.comparison, r.hc_mm.mae, r.hc_mm.me, r.dice.mean);
    }
    let (hc, bpd) = measurement_pairs(&records, &ba_kind, a.bpd_convention)?;
    let mut limits = write_bland_altman(&a.out, &hc, &bpd, a.sd, outputs)?;
    limits["comparison"] = ba_kind.label().into();
    Ok(json!({
        "mode": "study",
        "records": records.len(),
        "comparisons": reports,
        "bland_altman": limits,
        "published_reference": reference_table(),
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(ms: &[f64]) -> Self {
        let mut s = ms.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |p: f64| s[((p * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self { mean: caliper::study::mean(&s), p50: rank(0.5), p95: rank(0.95), min: s[0], max: s[s.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMeans {
    pub predict: f64,
    pub contour_fit: f64,
    pub measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub frames: usize,
    pub warmup_frames: usize,
    pub distinct_images: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub source: String,
    pub parameters: usize,
    /// Full-chain latency per frame in milliseconds.
    pub latency_ms: LatencyStats,
    /// `1000 / mean latency`.
    pub fps: f64,
    pub stage_mean_ms: StageMeans,
    pub failed_frames: usize,
    pub methodology: String,
    pub reference: String,
}

pub const BENCH_METHODOLOGY: &str = "Single thread. Each frame runs predict, contour extraction with ellipse fit, and \
HC/BPD measurement; wall-clock time per frame comes from std::time::Instant. The warm-up frames run the same chain \
first and are discarded. Percentiles use the nearest-rank rule over the timed frames; fps is 1000 / mean latency.";

pub const BENCH_REFERENCE: &str = "The published system reports 15 fps for a VGG-16 network on an NVIDIA Titan Xp. \
That figure is hardware-bound context for this desk-scale measurement, not a target.";

pub fn cmd_bench(a: &BenchArgs) -> CmdResult<Run> {
    let params = load_params(&a.params)?;
    let (images, source): (Vec<GrayImage>, String) = match &a.data {
        Some(dir) => {
            let ds = Dataset::open(dir)?;
            let imgs = select(&ds, parse_split(&a.split)?)
                .into_iter()
                .map(|e| Ok(ds.load(e)?.0))
                .collect::<CmdResult<Vec<_>>>()?;
            (imgs, format!("{} split {}", dir.display(), a.split))
        }
        None => {
            let p = a.phantom.params();
            p.validate().map_err(Failure::usage)?;
            let imgs = (0..a.pool)
                .map(|i| Ok(generate(derive_key(a.seed, i), &p)?.0))
                .collect::<CmdResult<Vec<_>>>()?;
            (imgs, format!("synthetic phantoms, seed {}", a.seed))
        }
    };
    let Some(first) = images.first() else {
        return Err(caliper::SegnetError::EmptyDataset.into());
    };
    let (width, height) = (first.width(), first.height());
    let (warmup, frames) = (a.warmup as usize, a.frames as usize);
    let (mut total, mut stages) = (Vec::with_capacity(frames), [0.0f64; 3]);
    let mut failed = 0usize;
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    for i in 0..warmup + frames {
        let img = &images[i % images.len()];
        let t0 = Instant::now();
        let pred = predict(&params, img)?;
        let predict_ms = ms(t0);
        let t1 = Instant::now();
        let fitted = fit_mask(&pred.mask);
        let fit_ms = ms(t1);
        let t2 = Instant::now();
        let measured = fitted.map(|(e, _)| measure_with(&e, img.s_xy(), a.bpd_convention));
        let measure_ms = ms(t2);
        let frame_ms = ms(t0);
        std::hint::black_box(&measured);
        if i < warmup {
            continue;
        }
        if !matches!(measured, Ok(Ok(_))) {
            failed += 1;
        }
        total.push(frame_ms);
        stages[0] += predict_ms;
        stages[1] += fit_ms;
        stages[2] += measure_ms;
    }
    let latency = LatencyStats::from_samples(&total);
    let n = frames as f64;
    let report = BenchReport {
        frames,
        warmup_frames: warmup,
        distinct_images: images.len(),
        image_width: width,
        image_height: height,
        source,
        parameters: params.parameter_count(),
        fps: 1e3 / latency.mean,
        latency_ms: latency,
        stage_mean_ms: StageMeans { predict: stages[0] / n, contour_fit: stages[1] / n, measure: stages[2] / n },
        failed_frames: failed,
        methodology: BENCH_METHODOLOGY.into(),
        reference: BENCH_REFERENCE.into(),
    };
    eprintln!(
        "bench: {frames} frames at {width}x{height} after {warmup} warm-up: mean {:.2} ms, p95 {:.2} ms, {:.1} fps",
        latency.mean, latency.p95, report.fps
    );
    eprintln!("bench: {BENCH_METHODOLOGY}");
    eprintln!("bench: {BENCH_REFERENCE}");
    let mut outputs = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        outputs.push(out.clone());
    }
    stdout_json(&report);
    Ok(Run {
        seed: a.data.is_none().then_some(a.seed),
        effective: json!({ "phantom": a.data.is_none().then(|| a.phantom.params()), "bpd_convention": a.bpd_convention }),
        outputs,
        default_manifest: a.out.as_ref().map(|o| o.with_extension("manifest.json")),
    })
}
