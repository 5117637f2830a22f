//! Command-line front end: `tonemap`, `eval`, `benchmark`, `decompose`, `train`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cantmo::{self, load_weights, ArchConfig, CanWeights, Manifest, Timing};
use crate::hdrimg::{
    self, calibrate_plane, encode_ldr, reattach_color, save_pfm, CalibrationRange, DisplayRange,
    HdrImage,
};
use crate::nlpd::{NlpdParams, NlpdReference};
use crate::plane::Plane;
use crate::pyramid::{self, dump, PyramidParams};
use crate::reftmo::{self, OptConfig};
use crate::trainer::{self, AugmentConfig, SmaxSampling, TrainConfig};

/// Schema version of every JSON report written by the CLI.
pub const REPORT_VERSION: u32 = 1;

pub const THREADS_ENV: &str = "NLPD_TMO_THREADS";

#[derive(Debug, Parser)]
#[command(name = "nlpd-tmo", version, about = "Perceptually optimized HDR tone mapping")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tone-map one HDR image to an 8-bit PNG.
    Tonemap(TonemapArgs),
    /// NLPD of a method's output against the calibrated input, per image and mean.
    Eval(EvalArgs),
    /// Median wall time of tone mapping per method.
    Benchmark(BenchmarkArgs),
    /// Dump the Laplacian and normalized pyramids of an image.
    Decompose(DecomposeArgs),
    /// Train both networks on a directory of HDR images.
    Train(TrainArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Linear,
    Log,
    Sigmoid,
    NlpdOpt,
    Can,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Log => "log",
            Method::Sigmoid => "sigmoid",
            Method::NlpdOpt => "nlpd-opt",
            Method::Can => "can",
        }
    }
}

/// Calibration and pyramid settings shared by the image commands.
#[derive(Clone, Debug, Args, Serialize)]
pub struct Preprocess {
    /// Guessed maximum scene luminance in cd/m².
    #[arg(long, default_value_t = 5000.0)]
    pub smax: f64,
    /// Guessed minimum scene luminance in cd/m².
    #[arg(long, default_value_t = 0.05)]
    pub smin: f64,
    /// Pyramid levels.
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    /// Resize so the short side has this many pixels (0 keeps the input size).
    #[arg(long, default_value_t = 512)]
    pub resize_short: usize,
}

#[derive(Clone, Debug, Args, Serialize)]
pub struct OptArgs {
    /// NLPD-Opt iteration cap.
    #[arg(long, default_value_t = 500)]
    pub opt_iters: usize,
    /// NLPD-Opt per-step change as a fraction of the display span.
    #[arg(long, default_value_t = 0.02)]
    pub opt_step: f64,
}

#[derive(Debug, Args)]
pub struct TonemapArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// PNG output path.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Can)]
    pub method: Method,
    /// Trained weights (required for `can`).
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Also write the display luminance (cd/m²) as a single-channel PFM.
    #[arg(long)]
    pub pfm: Option<PathBuf>,
    /// Write the NLPD-Opt trace as CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Colour saturation exponent for RGB inputs.
    #[arg(long, default_value_t = 0.6)]
    pub saturation: f64,
    #[command(flatten)]
    pub pre: Preprocess,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// An HDR file or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Can)]
    pub method: Method,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Score this display-luminance image instead of running a method
    /// (single-file input only).
    #[arg(long, conflicts_with = "method")]
    pub against: Option<PathBuf>,
    /// Calibrate the `--against` image like the input instead of using it as-is.
    #[arg(long, requires = "against")]
    pub calibrate_against: bool,
    /// JSON report path (default: stdout).
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub pre: Preprocess,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Method::Can, Method::NlpdOpt])]
    pub methods: Vec<Method>,
    /// Repetitions per method.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    /// Trained weights; without them `can` is timed with a seeded initialization.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub pre: Preprocess,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for the planes and `manifest.json`.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the input values as absolute luminance instead of calibrating.
    #[arg(long)]
    pub raw: bool,
    #[command(flatten)]
    pub pre: Preprocess,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SamplingArg {
    LogUniform,
    Uniform,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of PFM/RGBE training images.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fill `--data` with this many synthetic scenes before training.
    #[arg(long)]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 256)]
    pub crop: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1000)]
    pub decay_every: usize,
    #[arg(long, default_value_t = 10.0)]
    pub decay_factor: f64,
    #[arg(long, default_value_t = 5)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of the images used for training.
    #[arg(long, default_value_t = 0.9)]
    pub split: f64,
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
    #[arg(long, value_enum, default_value_t = SamplingArg::LogUniform)]
    pub smax_sampling: SamplingArg,
    /// Continue from the checkpoint in `--out`.
    #[arg(long)]
    pub resume: bool,
}

/// Loads, resizes and calibrates an image. Returns the resized image and its
/// calibrated luminance.
pub fn prepare(path: &Path, pre: &Preprocess) -> anyhow::Result<(HdrImage, Plane)> {
    let img = hdrimg::load_image_auto(path)?.resize_short_side(pre.resize_short)?;
    let range = CalibrationRange::new(pre.smin, pre.smax)?;
    let cal = calibrate_plane(&img.luminance_plane(), &range)?;
    Ok((img, cal))
}

/// Result of running one tone-mapping method on calibrated luminance.
pub struct Mapped {
    pub image: Plane,
    pub timing: Option<Timing>,
    pub trace: Option<Vec<f64>>,
}

fn opt_config(pre: &Preprocess, opt: &OptArgs) -> OptConfig {
    OptConfig {
        max_iters: opt.opt_iters,
        step: opt.opt_step,
        nlpd: NlpdParams::with_levels(pre.levels),
        ..Default::default()
    }
}

pub fn run_method(
    method: Method,
    lum: &Plane,
    weights: Option<&CanWeights>,
    pre: &Preprocess,
    opt: &OptArgs,
) -> anyhow::Result<Mapped> {
    let display = DisplayRange::default();
    let plain = |image| Mapped {
        image,
        timing: None,
        trace: None,
    };
    Ok(match method {
        Method::Linear => plain(reftmo::tmo_linear(lum, &display)?),
        Method::Log => plain(reftmo::tmo_log(lum, &display)?),
        Method::Sigmoid => plain(reftmo::tmo_sigmoid(lum, &display)?),
        Method::NlpdOpt => {
            let r = reftmo::nlpd_opt(lum, &display, &opt_config(pre, opt))?;
            Mapped {
                image: r.image,
                timing: None,
                trace: Some(r.trace),
            }
        }
        Method::Can => {
            let w = weights.ok_or_else(|| anyhow!("method `can` needs --weights"))?;
            let out = cantmo::tonemap(lum, w, &PyramidParams::with_levels(pre.levels), &display)?;
            Mapped {
                image: out.image,
                timing: Some(out.timing),
                trace: None,
            }
        }
    })
}

fn load_weights_for(method: Method, path: Option<&Path>) -> anyhow::Result<Option<CanWeights>> {
    match (method, path) {
        (Method::Can, None) => bail!("method `can` needs --weights"),
        (_, Some(p)) => Ok(Some(
            load_weights(p).with_context(|| format!("loading weights {}", p.display()))?,
        )),
        (_, None) => Ok(None),
    }
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

pub fn cmd_tonemap(a: &TonemapArgs) -> anyhow::Result<()> {
    if !(a.saturation > 0.0) {
        bail!("--saturation must be positive");
    }
    let weights = load_weights_for(a.method, a.weights.as_deref())?;
    let (img, lum) = prepare(&a.input, &a.pre)?;
    let mapped = run_method(a.method, &lum, weights.as_ref(), &a.pre, &a.opt)?;
    let display = DisplayRange::default();
    let out = if img.channels() == 3 {
        reattach_color(&img, &img.luminance_plane(), &mapped.image, a.saturation)?
    } else {
        HdrImage::from_plane(&mapped.image, true)?
    };
    encode_ldr(&out, &display, &a.output)?;
    if let Some(p) = &a.pfm {
        save_pfm(&HdrImage::from_plane(&mapped.image, true)?, p)?;
    }
    if let Some(p) = &a.trace {
        let trace = mapped
            .trace
            .as_ref()
            .ok_or_else(|| anyhow!("--trace is only produced by nlpd-opt"))?;
        reftmo::write_trace_csv(trace, p)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageScore {
    pub path: String,
    pub width: usize,
    pub height: usize,
    pub distance: f64,
    pub per_level: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub method: String,
    pub levels: usize,
    pub smin: f64,
    pub smax: f64,
    pub resize_short: usize,
    pub params: NlpdParams,
    pub images: Vec<ImageScore>,
    pub mean: f64,
}

impl EvalReport {
    pub fn new(method: &str, pre: &Preprocess, images: Vec<ImageScore>) -> Self {
        let mean = images.iter().map(|s| s.distance).sum::<f64>() / images.len().max(1) as f64;
        EvalReport {
            version: REPORT_VERSION,
            method: method.to_string(),
            levels: pre.levels,
            smin: pre.smin,
            smax: pre.smax,
            resize_short: pre.resize_short,
            params: NlpdParams::with_levels(pre.levels),
            images,
            mean,
        }
    }
}

/// HDR files in a directory (sorted), or the path itself.
pub fn list_inputs(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for e in std::fs::read_dir(path).with_context(|| format!("reading {}", path.display()))? {
        let p = e?.path();
        if p.is_file() && hdrimg::ImageFormat::from_path(&p).is_ok() {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no HDR images in {}", path.display());
    }
    Ok(files)
}

fn score(path: &Path, reference: &Plane, test: &Plane, params: &NlpdParams) -> anyhow::Result<ImageScore> {
    let rep = NlpdReference::new(reference, params)?.eval(test)?;
    Ok(ImageScore {
        path: path.display().to_string(),
        width: reference.width(),
        height: reference.height(),
        distance: rep.distance,
        per_level: rep.per_level,
    })
}

pub fn eval_report(a: &EvalArgs) -> anyhow::Result<EvalReport> {
    let params = NlpdParams::with_levels(a.pre.levels);
    if let Some(against) = &a.against {
        if a.input.is_dir() {
            bail!("--against needs a single input image");
        }
        let (_, lum) = prepare(&a.input, &a.pre)?;
        let test = if a.calibrate_against {
            prepare(against, &a.pre)?.1
        } else {
            hdrimg::load_image_auto(against)?.luminance_plane()
        };
        if test.dims() != lum.dims() {
            bail!(
                "--against image is {:?} but the prepared input is {:?}",
                test.dims(),
                lum.dims()
            );
        }
        let s = score(&a.input, &lum, &test, &params)?;
        return Ok(EvalReport::new("against", &a.pre, vec![s]));
    }
    let weights = load_weights_for(a.method, a.weights.as_deref())?;
    let files = list_inputs(&a.input)?;
    let scores = files
        .par_iter()
        .map(|p| {
            let (_, lum) = prepare(p, &a.pre)?;
            let mapped = run_method(a.method, &lum, weights.as_ref(), &a.pre, &a.opt)?;
            score(p, &lum, &mapped.image, &params)
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok(EvalReport::new(a.method.name(), &a.pre, scores))
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    write_json(&eval_report(a)?, a.output.as_deref())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodTiming {
    pub method: String,
    pub median_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub times_s: Vec<f64>,
    /// Median per-stage times (network methods only).
    pub stages: Option<Timing>,
    /// NLPD-Opt accepted steps in the last repetition.
    pub iterations: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub version: u32,
    pub input: String,
    pub width: usize,
    pub height: usize,
    pub reps: usize,
    pub threads: usize,
    pub trained_weights: bool,
    pub param_count: usize,
    pub model: Manifest,
    pub methods: Vec<MethodTiming>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn benchmark_report(a: &BenchmarkArgs) -> anyhow::Result<BenchmarkReport> {
    if a.reps == 0 {
        bail!("--reps must be at least 1");
    }
    let weights = match &a.weights {
        Some(p) => load_weights(p)?,
        None => CanWeights::init(ArchConfig::default(), a.seed)?,
    };
    let (_, lum) = prepare(&a.input, &a.pre)?;
    let mut methods = Vec::new();
    for &m in &a.methods {
        let mut times = Vec::with_capacity(a.reps);
        let mut stages = Vec::new();
        let mut iterations = None;
        for _ in 0..a.reps {
            let t0 = Instant::now();
            let mapped = run_method(m, &lum, Some(&weights), &a.pre, &a.opt)?;
            times.push(t0.elapsed().as_secs_f64());
            stages.extend(mapped.timing);
            iterations = mapped.trace.map(|t| t.len() - 1);
        }
        let stage_median = (!stages.is_empty()).then(|| Timing {
            decompose_s: median(&stages.iter().map(|t| t.decompose_s).collect::<Vec<_>>()),
            forward_s: median(&stages.iter().map(|t| t.forward_s).collect::<Vec<_>>()),
            collapse_s: median(&stages.iter().map(|t| t.collapse_s).collect::<Vec<_>>()),
        });
        log::info!("{}: median {:.4} s", m.name(), median(&times));
        methods.push(MethodTiming {
            method: m.name().to_string(),
            median_s: median(&times),
            min_s: times.iter().copied().fold(f64::INFINITY, f64::min),
            max_s: times.iter().copied().fold(0.0, f64::max),
            times_s: times,
            stages: stage_median,
            iterations,
        });
    }
    Ok(BenchmarkReport {
        version: REPORT_VERSION,
        input: a.input.display().to_string(),
        width: lum.width(),
        height: lum.height(),
        reps: a.reps,
        threads: rayon::current_num_threads(),
        trained_weights: a.weights.is_some(),
        param_count: cantmo::param_count(&weights),
        model: Manifest::describe(&weights),
        methods,
    })
}

pub fn cmd_benchmark(a: &BenchmarkArgs) -> anyhow::Result<()> {
    write_json(&benchmark_report(a)?, a.output.as_deref())
}

pub fn cmd_decompose(a: &DecomposeArgs) -> anyhow::Result<()> {
    let lum = if a.raw {
        hdrimg::load_image_auto(&a.input)?
            .resize_short_side(a.pre.resize_short)?
            .luminance_plane()
    } else {
        prepare(&a.input, &a.pre)?.1
    };
    let params = PyramidParams::with_levels(a.pre.levels);
    params.validate()?;
    let x1 = pyramid::front_end(&lum, params.gamma)?;
    let lap = pyramid::build_laplacian(&x1, params.levels, &params.lowpass_taps)?;
    let norm = pyramid::normalize(&lap, &params);
    dump::write_dump(&a.out, &lap, &norm, &params)?;
    Ok(())
}

#[derive(Serialize)]
struct SplitRecord {
    train: Vec<PathBuf>,
    test: Vec<PathBuf>,
}

pub fn train_config(a: &TrainArgs) -> TrainConfig {
    TrainConfig {
        batch_size: a.batch_size,
        lr0: a.lr,
        decay_every: a.decay_every,
        decay_factor: a.decay_factor,
        epochs: a.epochs,
        augment: AugmentConfig {
            crop: a.crop,
            sampling: match a.smax_sampling {
                SamplingArg::LogUniform => SmaxSampling::LogUniform,
                SamplingArg::Uniform => SmaxSampling::Uniform,
            },
            ..Default::default()
        },
        levels: a.levels,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        ..Default::default()
    }
}

pub fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    if let Some(n) = a.synthetic {
        trainer::write_synthetic_set(&a.data, n, 256, 192, a.seed)?;
    }
    let cfg = train_config(a);
    cfg.validate()?;
    let ds = trainer::make_dataset(&a.data, a.split, a.seed)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_json(
        &SplitRecord {
            train: ds.train.clone(),
            test: ds.test.clone(),
        },
        Some(&a.out.join("split.json")),
    )?;
    let images = trainer::load_luminance(&ds.train)?;
    let resume = if a.resume {
        Some(trainer::load_checkpoint(&a.out).context("loading checkpoint for --resume")?)
    } else {
        None
    };
    let state = trainer::train(&images, &cfg, resume, Some(&a.out))?;
    log::info!(
        "trained {} epochs; final loss {:.6}",
        state.epoch,
        state.log.last().map_or(f64::NAN, |e| e.mean_loss)
    );
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("thread count must be positive");
        }
        // Fails only if a pool already exists, e.g. when called twice in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Tonemap(a) => cmd_tonemap(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::Decompose(a) => cmd_decompose(a),
        Command::Train(a) => cmd_train(a),
    }
}

/// Parses `std::env::args`, runs the command and maps errors to exit code 1.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
