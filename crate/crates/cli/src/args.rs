use std::path::PathBuf;
use std::str::FromStr;

use caliper::phantom::SplitFractions;
use caliper::study::SdConvention;
use caliper::{BpdConvention, PhantomParams};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "caliper",
    version,
    about = "Fetal head biometry: phantoms, segmentation, ellipse fitting and agreement statistics",
    after_help = "JSON results go to stdout, progress to stderr. Exit status: 0 ok, 1 runtime failure, 2 invalid arguments."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic phantom dataset with a split manifest.
    PhantomGen(PhantomGenArgs),
    /// Recover the annotated ellipse and its filled mask from an overlay image.
    Extract(ExtractArgs),
    /// Fit an ellipse to the outline of a binary mask.
    Fit(FitArgs),
    /// Compute HC and BPD from an ellipse and the pixel size.
    Measure(MeasureArgs),
    /// Train the segmentation network on a phantom dataset.
    Train(TrainArgs),
    /// Segment images and measure the head in each.
    Infer(InferArgs),
    /// Agreement statistics for predictions or for an observer study.
    Evaluate(EvaluateArgs),
    /// Time the full predict, contour, fit and measure chain.
    Bench(BenchArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PhantomGen(_) => "phantom-gen",
            Self::Extract(_) => "extract",
            Self::Fit(_) => "fit",
            Self::Measure(_) => "measure",
            Self::Train(_) => "train",
            Self::Infer(_) => "infer",
            Self::Evaluate(_) => "evaluate",
            Self::Bench(_) => "bench",
            Self::Replay(_) => "replay",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Self::PhantomGen(a) => &a.common,
            Self::Extract(a) => &a.common,
            Self::Fit(a) => &a.common,
            Self::Measure(a) => &a.common,
            Self::Train(a) => &a.common,
            Self::Infer(a) => &a.common,
            Self::Evaluate(a) => &a.common,
            Self::Bench(a) => &a.common,
            Self::Replay(a) => &a.common,
        }
    }

    pub fn common_mut(&mut self) -> &mut Common {
        match self {
            Self::PhantomGen(a) => &mut a.common,
            Self::Extract(a) => &mut a.common,
            Self::Fit(a) => &mut a.common,
            Self::Measure(a) => &mut a.common,
            Self::Train(a) => &mut a.common,
            Self::Infer(a) => &mut a.common,
            Self::Evaluate(a) => &mut a.common,
            Self::Bench(a) => &mut a.common,
            Self::Replay(a) => &mut a.common,
        }
    }

    /// Redirects the command's primary output.
    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Self::PhantomGen(a) => a.out = out,
            Self::Extract(a) => a.out = out,
            Self::Fit(a) => a.out = Some(out),
            Self::Train(a) => a.out = out,
            Self::Infer(a) => a.out = out,
            Self::Evaluate(a) => a.out = out,
            Self::Bench(a) => a.out = Some(out),
            Self::Measure(_) | Self::Replay(_) => {}
        }
    }
}

/// Options every subcommand accepts. Not recorded in manifests: the
/// recorded arguments already include everything the config supplied.
#[derive(Debug, Clone, PartialEq, Default, Args, Serialize, Deserialize)]
pub struct Common {
    /// Config file: a JSON object or `key=value` lines with flag names as
    /// keys. Flags on the command line win.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Run-manifest path (defaults to `run-manifest.json` in the output
    /// directory when there is one).
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

/// Interval given as `lo,hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range(pub f64, pub f64);

impl FromStr for Range {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (lo, hi) = s.split_once(',').ok_or_else(|| format!("expected lo,hi, got {s:?}"))?;
        let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Self(p(lo)?, p(hi)?))
    }
}

/// RGB triple given as `r,g,b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rgb(pub [u8; 3]);

impl FromStr for Rgb {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(format!("expected r,g,b, got {s:?}"));
        }
        let mut rgb = [0u8; 3];
        for (c, p) in rgb.iter_mut().zip(parts) {
            *c = p.trim().parse().map_err(|e| format!("{p:?}: {e}"))?;
        }
        Ok(Self(rgb))
    }
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is not in [0, 1)"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

/// Overrides for the phantom generator; unset fields keep the defaults.
#[derive(Debug, Clone, PartialEq, Default, Args, Serialize, Deserialize)]
pub struct PhantomFlags {
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    /// Semi-major axis range in pixels.
    #[arg(long, value_name = "LO,HI")]
    pub a_range: Option<Range>,
    /// Axis ratio a/b range.
    #[arg(long, value_name = "LO,HI")]
    pub ratio_range: Option<Range>,
    #[arg(long)]
    pub center_jitter: Option<f64>,
    #[arg(long, value_name = "LO,HI")]
    pub angle_range: Option<Range>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub background: Option<f64>,
    #[arg(long)]
    pub interior: Option<f64>,
    #[arg(long)]
    pub rim_intensity: Option<f64>,
    #[arg(long)]
    pub rim_thickness: Option<f64>,
    #[arg(long)]
    pub speckle: Option<f64>,
    #[arg(long)]
    pub shadow_probability: Option<f64>,
    #[arg(long)]
    pub shadow_attenuation: Option<f64>,
    #[arg(long, value_name = "LO,HI")]
    pub shadow_width_range: Option<Range>,
    #[arg(long)]
    pub shadow_max_fraction: Option<f64>,
    #[arg(long)]
    pub blur_sigma: Option<f64>,
    /// Pixel size in mm.
    #[arg(long = "s-xy", value_parser = positive)]
    pub s_xy: Option<f64>,
}

impl PhantomFlags {
    pub fn params(&self) -> PhantomParams {
        let mut p = PhantomParams::default();
        let pair = |r: Range| (r.0, r.1);
        macro_rules! set {
            ($($field:ident => $target:ident),*) => { $( if let Some(v) = self.$field { p.$target = v; } )* };
        }
        set!(width => width, height => height, center_jitter => center_jitter, margin => margin,
             background => background, interior => interior, rim_intensity => rim_intensity,
             rim_thickness => rim_thickness, speckle => speckle, shadow_probability => shadow_probability,
             shadow_attenuation => shadow_attenuation, shadow_max_fraction => shadow_max_fraction,
             blur_sigma => blur_sigma, s_xy => s_xy_mm);
        if let Some(r) = self.a_range {
            p.a_range = pair(r);
        }
        if let Some(r) = self.ratio_range {
            p.ratio_range = pair(r);
        }
        if let Some(r) = self.angle_range {
            p.angle_range = pair(r);
        }
        if let Some(r) = self.shadow_width_range {
            p.shadow_width_range = pair(r);
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PhantomGenArgs {
    /// Number of samples.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    #[arg(long, env = "CALIPER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Share of the whole set held out for testing (floored).
    #[arg(long, default_value_t = SplitFractions::default().test, value_parser = fraction)]
    pub test_fraction: f64,
    /// Share of the remaining pool used for validation (rounded).
    #[arg(long, default_value_t = SplitFractions::default().validation, value_parser = fraction)]
    pub validation_fraction: f64,
    #[command(flatten)]
    pub phantom: PhantomFlags,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ExtractArgs {
    /// Overlay image (binary PPM).
    #[arg(long)]
    pub overlay: PathBuf,
    /// Output directory for `ellipse.json` and `mask.pgm`.
    #[arg(long)]
    pub out: PathBuf,
    /// Chroma (max − min channel) above which a pixel counts as annotation.
    #[arg(long, default_value_t = caliper::annotation::DEFAULT_CHROMA_THRESHOLD)]
    pub chroma_threshold: u8,
    /// Match this exact overlay color instead of using chroma.
    #[arg(long, value_name = "R,G,B")]
    pub key_color: Option<Rgb>,
    /// Per-channel tolerance for `--key-color`.
    #[arg(long, default_value_t = 0, requires = "key_color")]
    pub color_tolerance: u8,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    /// Binary mask (PGM, nonzero = head).
    #[arg(long)]
    pub mask: PathBuf,
    /// Also write the ellipse JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("pixel").required(true).args(["s_xy", "sidecar"])))]
pub struct MeasureArgs {
    /// Ellipse JSON with `cx, cy, a, b, alpha` in pixels.
    #[arg(long)]
    pub ellipse: PathBuf,
    /// Pixel size in mm.
    #[arg(long = "s-xy", value_parser = positive)]
    pub s_xy: Option<f64>,
    /// Read the pixel size from an `image.json` sidecar.
    #[arg(long)]
    pub sidecar: Option<PathBuf>,
    #[arg(long, default_value = "diameter")]
    pub bpd_convention: BpdConvention,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset directory written by `phantom-gen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for `params.bin` and `train_log.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 5)]
    pub batch_size: usize,
    /// Adam step size (1e-5 reproduces the pretrained-network setting).
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    pub beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub epsilon: f64,
    #[arg(long, env = "CALIPER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Disable random left-right flips.
    #[arg(long)]
    pub no_augment: bool,
    /// Encoder channels per stage.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub kernel_size: usize,
    /// Decoder without encoder skip connections.
    #[arg(long)]
    pub no_skip: bool,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("input").required(true).args(["data", "image"])))]
pub struct InferArgs {
    /// Trained parameters file.
    #[arg(long)]
    pub params: PathBuf,
    /// Dataset directory; images of `--split` are processed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// train, validation, test or all.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Individual PGM images (repeatable).
    #[arg(long)]
    pub image: Vec<PathBuf>,
    /// Pixel size for `--image` inputs without an `image.json` sidecar.
    #[arg(long = "s-xy", value_parser = positive)]
    pub s_xy: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "diameter")]
    pub bpd_convention: BpdConvention,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
#[command(group(ArgGroup::new("source").required(true).args(["predictions", "study"])))]
pub struct EvaluateArgs {
    /// Output directory of `infer`.
    #[arg(long, requires = "data")]
    pub predictions: Option<PathBuf>,
    /// Ground-truth dataset for `--predictions`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Observer-study CSV.
    #[arg(long, conflicts_with = "predictions")]
    pub study: Option<PathBuf>,
    /// Output directory for `report.json` and Bland-Altman CSVs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "population")]
    pub sd: SdConvention,
    #[arg(long, default_value = "diameter")]
    pub bpd_convention: BpdConvention,
    /// Rater name of the model in a study CSV.
    #[arg(long, default_value = "model")]
    pub model_rater: String,
    /// Expert rater names in a study CSV.
    #[arg(long, value_delimiter = ',', default_value = "expert1,expert2")]
    pub experts: Vec<String>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Trained parameters file.
    #[arg(long)]
    pub params: PathBuf,
    /// Dataset directory to draw frames from; synthetic phantoms otherwise.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Split of `--data` to use (train, validation, test or all).
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Timed frames.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub frames: u64,
    /// Untimed frames run first.
    #[arg(long, default_value_t = 10)]
    pub warmup: u64,
    /// Seed for synthetic frames.
    #[arg(long, env = "CALIPER_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Distinct synthetic frames, cycled.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub pool: u64,
    #[command(flatten)]
    pub phantom: PhantomFlags,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "diameter")]
    pub bpd_convention: BpdConvention,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Run manifest written by an earlier invocation.
    pub run_manifest: PathBuf,
    /// Write outputs here instead of the recorded location.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
}
