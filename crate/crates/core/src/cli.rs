//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for runtime or data errors, 2 for usage errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;

use crate::basis::BasisKind;
use crate::data::{Mask, ObservationSet};
use crate::error::{Error, Result};
use crate::fixtures;
use crate::io::{self, PointCloud, RunManifest, StagedOutput, Strategy, TrainConfig};
use crate::metrics::{self, MetricReport, Region};
use crate::model::{spectrum2d, spectrum_magnitude, ModelSpec};
use crate::rng::{substream, Stream};
use crate::tasks::{self, GridMetrics};
use crate::tensor::DenseTensor;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "neuapprox", version, about = "Block-term neural basis tensor completion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Complete a tensor, traffic table or point cloud.
    Complete(CompleteArgs),
    /// Run the same completion with every basis family.
    AblateBasis(CompleteArgs),
    /// Completion over a grid of structural hyperparameters.
    Sweep(SweepArgs),
    /// Export block-term fields and their 2-D spectra from a checkpoint.
    Spectrum(SpectrumArgs),
    /// Adapt a pretrained checkpoint to new data.
    Adapt(AdaptArgs),
    /// Metrics between two tensors.
    Eval(EvalArgs),
}

/// Flags mirroring the config file keys; each overrides the file.
#[derive(Args, Debug, Default, Clone)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub terms: Option<usize>,
    /// Comma-separated core ranks (one value is applied to every mode).
    #[arg(long)]
    pub core_shape: Option<String>,
    /// Comma-separated basis kinds: neural, polynomial, fourier, gaussian.
    #[arg(long)]
    pub basis: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub omega_first: Option<f64>,
    #[arg(long)]
    pub omega_hidden: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub early_stopping: Option<bool>,
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub lora_rank: Option<usize>,
    /// Mode whose slices go missing (default: last mode).
    #[arg(long)]
    pub slice_mode: Option<usize>,
    /// Fraction of entries observed by a random mask (train fraction for point clouds).
    #[arg(long)]
    pub sampling_rate: Option<f64>,
    /// Fraction of whole slices removed.
    #[arg(long, alias = "missing-rate")]
    pub slice_missing_rate: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainConfig::load(p)?,
            None => TrainConfig::default(),
        };
        let pairs: [(&str, Option<String>); 17] = [
            ("terms", self.terms.map(|v| v.to_string())),
            ("core_shape", self.core_shape.clone()),
            ("basis", self.basis.clone()),
            ("depth", self.depth.map(|v| v.to_string())),
            ("width", self.width.map(|v| v.to_string())),
            ("omega_first", self.omega_first.map(|v| v.to_string())),
            ("omega_hidden", self.omega_hidden.map(|v| v.to_string())),
            ("learning_rate", self.learning_rate.map(|v| v.to_string())),
            ("weight_decay", self.weight_decay.map(|v| v.to_string())),
            ("iterations", self.iterations.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("early_stopping", self.early_stopping.map(|v| v.to_string())),
            ("strategy", self.strategy.clone()),
            ("lora_rank", self.lora_rank.map(|v| v.to_string())),
            ("slice_mode", self.slice_mode.map(|v| v.to_string())),
            ("sampling_rate", self.sampling_rate.map(|v| v.to_string())),
            ("missing_rate", self.slice_missing_rate.map(|v| v.to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Where the data comes from. Exactly one source must be given.
#[derive(Args, Debug, Default, Clone)]
pub struct DataArgs {
    /// Tensor container file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Traffic CSV (wide or long form).
    #[arg(long)]
    pub traffic: Option<PathBuf>,
    /// Traffic layout `sensors,days,intervals` (required for wide form).
    #[arg(long)]
    pub layout: Option<String>,
    /// Point cloud text file with rows `x y z r g b`.
    #[arg(long)]
    pub pointcloud: Option<PathBuf>,
    /// Built-in synthetic data: `texture` or `random-model`.
    #[arg(long)]
    pub synthetic: Option<String>,
    /// Shape of the synthetic tensor, comma-separated.
    #[arg(long)]
    pub shape: Option<String>,
    /// Seed for the synthetic data (independent of the training seed).
    #[arg(long, default_value_t = 0)]
    pub fixture_seed: u64,
    /// Ground-truth tensor for metrics (defaults to the data itself).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Observation mask file (0/1 tensor container).
    #[arg(long)]
    pub mask: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompleteArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Output directory (must not exist or be empty).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Comma-separated values of T.
    #[arg(long = "grid-terms")]
    pub grid_terms: Option<String>,
    /// Semicolon-separated core shapes, e.g. `8,8,4;16,16,4`.
    #[arg(long = "grid-core-shapes")]
    pub grid_core_shapes: Option<String>,
    #[arg(long = "grid-depths")]
    pub grid_depths: Option<String>,
    #[arg(long = "grid-widths")]
    pub grid_widths: Option<String>,
    #[arg(long = "grid-weight-decays")]
    pub grid_weight_decays: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SpectrumArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// One-based term index; all terms when omitted.
    #[arg(long)]
    pub term: Option<usize>,
    /// Comma-separated band indices along the slice mode (default: all).
    #[arg(long)]
    pub bands: Option<String>,
    /// Mode indexing the bands (default: last mode).
    #[arg(long)]
    pub slice_mode: Option<usize>,
    /// Grid shape (default: the grid the model was trained on).
    #[arg(long)]
    pub shape: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AdaptArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Run all three strategies instead of the configured one.
    #[arg(long)]
    pub all_strategies: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    /// Observation mask; metrics marked `missing` use its complement.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// `image` (PSNR/SSIM/NRMSE) or `traffic` (RMSE/MAPE).
    #[arg(long, default_value = "image")]
    pub kind: String,
    /// Peak value for PSNR/SSIM (default: truth maximum).
    #[arg(long)]
    pub peak: Option<f64>,
}

/// A usage problem detected after argument parsing.
#[derive(Debug)]
struct Usage(String);

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Messages go to stdout/stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Complete(a) => cmd_complete(&a),
        Command::AblateBasis(a) => cmd_ablate_basis(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::Spectrum(a) => cmd_spectrum(&a),
        Command::Adapt(a) => cmd_adapt(&a),
        Command::Eval(a) => cmd_eval(&a),
    };
    match outcome {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> std::result::Result<Vec<T>, Usage> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| Usage(format!("bad {what} entry `{s}`"))))
        .collect()
}

// ---------------------------------------------------------------------------
// data loading

/// Grid data ready for completion.
struct GridInput {
    /// Values given to the model (missing cells hold anything).
    values: DenseTensor,
    /// Cells with known values in the input (all true for complete tensors).
    known: Mask,
    /// Reference for metrics.
    truth: DenseTensor,
    kind: GridMetrics,
    digests: Vec<(String, String)>,
}

enum Input {
    Grid(GridInput),
    Points(PointCloud, String),
}

fn load_input(d: &DataArgs) -> CliResult<Input> {
    let sources = [d.data.is_some(), d.traffic.is_some(), d.pointcloud.is_some(), d.synthetic.is_some()];
    if sources.iter().filter(|&&b| b).count() != 1 {
        return Err(Usage("give exactly one of --data, --traffic, --pointcloud, --synthetic".into()).into());
    }
    let mut digests = Vec::new();
    let mut grid = if let Some(p) = &d.data {
        digests.push(("data".to_string(), io::file_digest(p)?));
        let t = io::load_tensor(p)?;
        GridInput {
            known: Mask::full(t.shape(), true),
            truth: t.clone(),
            values: t,
            kind: GridMetrics::Image,
            digests: Vec::new(),
        }
    } else if let Some(p) = &d.traffic {
        digests.push(("traffic".to_string(), io::file_digest(p)?));
        let layout = match &d.layout {
            Some(l) => {
                let v: Vec<usize> = parse_list(l, "layout")?;
                if v.len() != 3 {
                    return Err(Usage("--layout needs sensors,days,intervals".into()).into());
                }
                Some((v[0], v[1], v[2]))
            }
            None => None,
        };
        let t = io::load_traffic_csv(p, layout)?;
        GridInput {
            truth: t.values.clone(),
            values: t.values,
            known: t.mask,
            kind: GridMetrics::Traffic,
            digests: Vec::new(),
        }
    } else if let Some(p) = &d.pointcloud {
        digests.push(("pointcloud".to_string(), io::file_digest(p)?));
        return Ok(Input::Points(PointCloud::load(p)?, digests.remove(0).1));
    } else {
        let name = d.synthetic.as_deref().unwrap_or_default();
        if !SYNTHETIC_NAMES.contains(&name) {
            return Err(Usage(format!("unknown synthetic dataset `{name}` (texture, random-model)")).into());
        }
        let t = synthetic(name, d.shape.as_deref(), d.fixture_seed)?;
        digests.push((format!("synthetic:{name}"), format!("fixture_seed={}", d.fixture_seed)));
        GridInput {
            known: Mask::full(t.shape(), true),
            truth: t.clone(),
            values: t,
            kind: GridMetrics::Image,
            digests: Vec::new(),
        }
    };
    if let Some(p) = &d.truth {
        digests.push(("truth".to_string(), io::file_digest(p)?));
        let t = io::load_tensor(p)?;
        if t.shape() != grid.values.shape() {
            return Err(Error::invalid("truth shape differs from the data").into());
        }
        grid.truth = t;
    }
    grid.digests = digests;
    Ok(Input::Grid(grid))
}

pub const SYNTHETIC_NAMES: [&str; 2] = ["texture", "random-model"];

/// Built-in synthetic tensors.
pub fn synthetic(name: &str, shape: Option<&str>, seed: u64) -> Result<DenseTensor> {
    let shape: Option<Vec<usize>> = shape
        .map(|s| parse_list(s, "shape").map_err(|u| Error::invalid(u.0)))
        .transpose()?;
    match name {
        "texture" => {
            let s = shape.unwrap_or_else(|| vec![64, 64, 8]);
            if s.len() != 3 || s.contains(&0) {
                return Err(Error::invalid("texture fixture needs a 3-mode shape"));
            }
            Ok(fixtures::smooth_plus_texture(&[s[0], s[1], s[2]], seed))
        }
        "random-model" => {
            let s = shape.unwrap_or_else(|| vec![32, 32, 8]);
            let spec = ModelSpec::neural(2, vec![3; s.len()], 3, 32);
            Ok(fixtures::random_model_tensor(&spec, &s, seed)?.1)
        }
        other => Err(Error::invalid(format!("unknown synthetic dataset `{other}`"))),
    }
}

/// Training mask from exactly one of `--mask`, `sampling_rate`, `missing_rate`.
fn build_mask(d: &DataArgs, cfg: &TrainConfig, shape: &[usize]) -> CliResult<(Mask, String)> {
    let given = [d.mask.is_some(), cfg.sampling_rate.is_some(), cfg.missing_rate.is_some()];
    if given.iter().filter(|&&b| b).count() != 1 {
        return Err(Usage(
            "give exactly one of --mask, --sampling-rate, --slice-missing-rate".into(),
        )
        .into());
    }
    let mask = if let Some(p) = &d.mask {
        let m = io::load_mask(p)?;
        if m.shape() != shape {
            return Err(Error::invalid("mask shape differs from the data").into());
        }
        m
    } else if let Some(r) = cfg.sampling_rate {
        tasks::make_random_mask(shape, r, cfg.seed)?
    } else {
        let r = cfg.missing_rate.expect("checked above");
        let mode = cfg.slice_mode.unwrap_or(shape.len() - 1);
        tasks::make_slice_mask(shape, r, mode, cfg.seed)?
    };
    let digest = mask_digest(&mask);
    Ok((mask, digest))
}

pub fn mask_digest(m: &Mask) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(io::encode_tensor(&m.to_tensor())))[..16].to_string()
}

/// Traffic values are divided by their largest observed magnitude for
/// training and scaled back afterwards.
fn run_grid(g: &GridInput, mask: &Mask, cfg: &TrainConfig) -> Result<tasks::CompletionResult> {
    let train_mask = g.known.and(mask)?;
    let eval_region = g.known.and(&mask.complement())?;
    let scale = match g.kind {
        GridMetrics::Traffic => g
            .values
            .data()
            .iter()
            .zip(train_mask.bits())
            .filter(|(_, &b)| b)
            .map(|(v, _)| v.abs())
            .fold(0.0, f64::max),
        GridMetrics::Image => 1.0,
    };
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let y = g.values.scaled(1.0 / scale);
    let mut res = tasks::inpaint(&y, &train_mask, cfg, None, g.kind)?;
    let rec = res.recovered.take().expect("grid result").scaled(scale);
    // observed entries are copied back bit-exactly after unscaling
    let rec = tasks::compose(&g.values, &rec, &train_mask);
    res.metrics = match g.kind {
        GridMetrics::Image => MetricReport::image(&g.truth, &rec, &eval_region, metrics::default_peak(&g.truth))?,
        GridMetrics::Traffic => MetricReport::traffic(&g.truth, &rec, &eval_region)?,
    };
    res.recovered = Some(rec);
    Ok(res)
}

fn point_split(pc: &PointCloud, rate: f64, seed: u64) -> Result<(PointCloud, PointCloud)> {
    let n = pc.rows.len();
    let k = (rate * n as f64).round() as usize;
    if k == 0 || k >= n {
        return Err(Error::invalid(format!(
            "train fraction {rate} selects {k} of {n} points"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, Stream::Split));
    let mut train: Vec<usize> = idx[..k].to_vec();
    let mut test: Vec<usize> = idx[k..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((
        PointCloud { rows: train.iter().map(|&i| pc.rows[i]).collect() },
        PointCloud { rows: test.iter().map(|&i| pc.rows[i]).collect() },
    ))
}

fn write_manifest(stage: &mut StagedOutput, command: &str, cfg: &TrainConfig, inputs: &[(String, String)]) -> Result<()> {
    let mut m = RunManifest::new(command, cfg);
    for (k, v) in inputs {
        m.inputs.insert(k.clone(), v.clone());
    }
    m.outputs = stage.written().to_vec();
    m.outputs.push("manifest.json".into());
    m.finished_unix = io::unix_now();
    stage.write("manifest.json", m.to_json())
}

// ---------------------------------------------------------------------------
// commands

fn cmd_complete(a: &CompleteArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let input = load_input(&a.data)?;
    let mut stage = StagedOutput::new(&a.out)?;
    let hash = cfg.hash();
    let mut summary = String::new();
    match input {
        Input::Grid(g) => {
            let (mask, mdigest) = build_mask(&a.data, &cfg, g.values.shape())?;
            let res = run_grid(&g, &mask, &cfg)?;
            let rec = res.recovered.as_ref().expect("grid result");
            io::save_tensor(rec, &stage.path("recovered.tensor"))?;
            io::save_mask(&mask, &stage.path("mask.tensor"))?;
            let mut model = res.model.clone();
            model.bind_grid(g.values.shape())?;
            io::save_checkpoint(&model, &cfg, res.loss_trace.len(), &stage.path("model.ckpt"))?;
            stage.write(
                "metrics.txt",
                io::metric_records(&res.metrics, &hash, &[("mask_digest", mdigest)]),
            )?;
            stage.write("loss_trace.txt", io::loss_trace_text(&res.loss_trace))?;
            stage.write("timing.txt", format!("wall_time_s={}\n", res.wall_time.as_secs_f64()))?;
            stage.write("config.txt", cfg.to_kv())?;
            summary.push_str(&io::metric_records(&res.metrics, &hash, &[]));
            write_manifest(&mut stage, "complete", &cfg, &g.digests)?;
        }
        Input::Points(pc, digest) => {
            if a.data.mask.is_some() || cfg.missing_rate.is_some() {
                return Err(Usage("point clouds take only --sampling-rate (train fraction)".into()).into());
            }
            let rate = cfg.sampling_rate.unwrap_or(0.05);
            let (train_pc, test_pc) = point_split(&pc, rate, cfg.seed)?;
            let bounds = train_pc.bounds();
            let bytes = pc.colors_are_bytes();
            let (tc, tv, degenerate) = train_pc.observations(&bounds, bytes);
            for k in degenerate {
                eprintln!("warning: spatial dimension {k} is constant in the training split; mapped to 0");
            }
            let (qc, qv, _) = test_pc.observations(&bounds, bytes);
            let train_set = ObservationSet::points(tc, tv)?;
            let res = tasks::fit_pointcloud(&train_set, &qc, &cfg, Some(&qv))?;
            let preds = res.predictions.as_ref().expect("point result");
            let mut csv = String::from("x,y,z,channel,truth,prediction\n");
            for ((c, t), p) in qc.iter().zip(&qv).zip(preds) {
                let _ = writeln!(csv, "{},{},{},{},{t},{p}", c[0], c[1], c[2], c[3]);
            }
            stage.write("predictions.csv", csv)?;
            io::save_checkpoint(&res.model, &cfg, res.loss_trace.len(), &stage.path("model.ckpt"))?;
            stage.write("metrics.txt", io::metric_records(&res.metrics, &hash, &[]))?;
            stage.write("loss_trace.txt", io::loss_trace_text(&res.loss_trace))?;
            stage.write("timing.txt", format!("wall_time_s={}\n", res.wall_time.as_secs_f64()))?;
            stage.write("config.txt", cfg.to_kv())?;
            summary.push_str(&io::metric_records(&res.metrics, &hash, &[]));
            write_manifest(&mut stage, "complete", &cfg, &[("pointcloud".into(), digest)])?;
        }
    }
    let out = stage.commit()?;
    let _ = writeln!(summary, "outputs written to {}", out.display());
    Ok(summary)
}

fn grid_only(input: Input, what: &str) -> CliResult<GridInput> {
    match input {
        Input::Grid(g) => Ok(g),
        Input::Points(..) => Err(Usage(format!("{what} needs grid data")).into()),
    }
}

fn cmd_ablate_basis(a: &CompleteArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let g = grid_only(load_input(&a.data)?, "ablate-basis")?;
    let (mask, mdigest) = build_mask(&a.data, &cfg, g.values.shape())?;
    let mut stage = StagedOutput::new(&a.out)?;
    let hash = cfg.hash();
    let mut table = String::from("basis,psnr,ssim,nrmse,params,config_hash,mask_digest\n");
    let mut records = String::new();
    let mut timing = String::new();
    for kind in BasisKind::ALL {
        let mut c = cfg.clone();
        c.basis = vec![kind];
        let res = run_grid(&g, &mask, &c)?;
        let params = c.model_spec(g.values.ndim())?.param_count();
        let m = &res.metrics;
        let _ = writeln!(
            table,
            "{kind},{},{},{},{params},{hash},{mdigest}",
            fmt_opt(m.get("psnr")),
            fmt_opt(m.get("ssim")),
            fmt_opt(m.get("nrmse"))
        );
        records.push_str(&io::metric_records(
            m,
            &hash,
            &[("basis", kind.to_string()), ("mask_digest", mdigest.clone())],
        ));
        let _ = writeln!(timing, "basis={kind} wall_time_s={}", res.wall_time.as_secs_f64());
    }
    stage.write("ablation.csv", &table)?;
    stage.write("metrics.txt", records)?;
    stage.write("timing.txt", timing)?;
    stage.write("config.txt", cfg.to_kv())?;
    write_manifest(&mut stage, "ablate-basis", &cfg, &g.digests)?;
    stage.commit()?;
    Ok(table)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "nan".into())
}

/// One grid point of a sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub terms: usize,
    pub core_shape: Vec<usize>,
    pub depth: usize,
    pub width: usize,
    pub weight_decay: f64,
    pub params: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub config_hash: String,
}

/// Expands the sweep grid; each axis defaults to the base config's value.
fn sweep_grid(a: &SweepArgs, base: &TrainConfig) -> CliResult<Vec<TrainConfig>> {
    let terms: Vec<usize> = match &a.grid_terms {
        Some(s) => parse_list(s, "terms")?,
        None => vec![base.terms],
    };
    let cores: Vec<Vec<usize>> = match &a.grid_core_shapes {
        Some(s) => s
            .split(';')
            .filter(|p| !p.trim().is_empty())
            .map(|p| parse_list(p, "core shape"))
            .collect::<std::result::Result<_, _>>()?,
        None => vec![base.core_shape.clone()],
    };
    let depths: Vec<usize> = match &a.grid_depths {
        Some(s) => parse_list(s, "depth")?,
        None => vec![base.depth],
    };
    let widths: Vec<usize> = match &a.grid_widths {
        Some(s) => parse_list(s, "width")?,
        None => vec![base.width],
    };
    let wds: Vec<f64> = match &a.grid_weight_decays {
        Some(s) => parse_list(s, "weight decay")?,
        None => vec![base.weight_decay],
    };
    let mut out = Vec::new();
    for &t in &terms {
        for c in &cores {
            for &d in &depths {
                for &w in &widths {
                    for &wd in &wds {
                        let mut cfg = base.clone();
                        cfg.terms = t;
                        cfg.core_shape = c.clone();
                        cfg.depth = d;
                        cfg.width = w;
                        cfg.weight_decay = wd;
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Usage("sweep grid is empty".into()).into());
    }
    Ok(out)
}

/// Sorted by PSNR (descending), ties broken by config hash.
pub fn sort_sweep(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| b.psnr.total_cmp(&a.psnr).then_with(|| a.config_hash.cmp(&b.config_hash)));
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<String> {
    let base = a.cfg.resolve()?;
    let g = grid_only(load_input(&a.data)?, "sweep")?;
    let (mask, mdigest) = build_mask(&a.data, &base, g.values.shape())?;
    let grid = sweep_grid(a, &base)?;
    let mut stage = StagedOutput::new(&a.out)?;
    let mut rows = Vec::with_capacity(grid.len());
    let mut records = String::new();
    for cfg in &grid {
        let res = run_grid(&g, &mask, cfg)?;
        let spec = cfg.model_spec(g.values.ndim())?;
        let m = &res.metrics;
        rows.push(SweepRow {
            terms: cfg.terms,
            core_shape: spec.core_shape.clone(),
            depth: cfg.depth,
            width: cfg.width,
            weight_decay: cfg.weight_decay,
            params: spec.param_count(),
            psnr: m.get("psnr").unwrap_or(f64::NAN),
            ssim: m.get("ssim").unwrap_or(f64::NAN),
            nrmse: m.get("nrmse").unwrap_or(f64::NAN),
            config_hash: cfg.hash(),
        });
        records.push_str(&io::metric_records(m, &cfg.hash(), &[("mask_digest", mdigest.clone())]));
    }
    sort_sweep(&mut rows);
    let mut table = String::from("terms,core_shape,depth,width,weight_decay,params,psnr,ssim,nrmse,config_hash\n");
    for r in &rows {
        let core: Vec<String> = r.core_shape.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            table,
            "{},{},{},{},{},{},{},{},{},{}",
            r.terms,
            core.join("x"),
            r.depth,
            r.width,
            r.weight_decay,
            r.params,
            r.psnr,
            r.ssim,
            r.nrmse,
            r.config_hash
        );
    }
    stage.write("sweep.csv", &table)?;
    stage.write("metrics.txt", records)?;
    stage.write("config.txt", base.to_kv())?;
    write_manifest(&mut stage, "sweep", &base, &g.digests)?;
    stage.commit()?;
    Ok(table)
}

/// Extracts the 2-D slice at `index` along `mode` of a 3-mode tensor, or
/// returns a matrix unchanged.
pub fn band_slice(t: &DenseTensor, mode: usize, index: usize) -> Result<DenseTensor> {
    match t.ndim() {
        2 => Ok(t.clone()),
        3 => {
            if mode >= 3 || index >= t.shape()[mode] {
                return Err(Error::invalid(format!(
                    "band {index} along mode {mode} is outside shape {:?}",
                    t.shape()
                )));
            }
            let keep: Vec<usize> = (0..3).filter(|&m| m != mode).collect();
            let (r, c) = (t.shape()[keep[0]], t.shape()[keep[1]]);
            let mut idx = [0usize; 3];
            idx[mode] = index;
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    idx[keep[0]] = i;
                    idx[keep[1]] = j;
                    data.push(t.get(&idx));
                }
            }
            DenseTensor::matrix(r, c, data)
        }
        n => Err(Error::invalid(format!("spectra need 2 or 3 modes, model has {n}"))),
    }
}

fn matrix_csv(m: &DenseTensor) -> String {
    let mut s = String::new();
    for r in 0..m.rows() {
        let row: Vec<String> = (0..m.cols()).map(|c| m.at(r, c).to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn cmd_spectrum(a: &SpectrumArgs) -> CliResult<String> {
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let model = &ck.model;
    let shape: Vec<usize> = match (&a.shape, model.grid_shape()) {
        (Some(s), _) => parse_list(s, "shape")?,
        (None, Some(g)) => g.to_vec(),
        (None, None) => return Err(Usage("checkpoint has no grid shape; pass --shape".into()).into()),
    };
    let mode = a.slice_mode.unwrap_or(shape.len().saturating_sub(1));
    let terms: Vec<usize> = match a.term {
        Some(0) => return Err(Error::invalid("term index is one-based").into()),
        Some(j) if j > model.term_count() => {
            return Err(Error::invalid(format!(
                "term {j} out of range for {} terms",
                model.term_count()
            ))
            .into())
        }
        Some(j) => vec![j],
        None => (1..=model.term_count()).collect(),
    };
    let bands: Vec<usize> = match (&a.bands, shape.len()) {
        (_, 2) => vec![0],
        (Some(b), _) => parse_list(b, "band")?,
        (None, _) => (0..shape.get(mode).copied().unwrap_or(1)).collect(),
    };
    let mut stage = StagedOutput::new(&a.out)?;
    let full = model.eval_grid(&shape)?;
    io::save_tensor(&full, &stage.path("full_field.tensor"))?;
    let mut summary = String::from("field,band,energy,spectral_energy\n");
    let mut fields: Vec<(String, DenseTensor)> = vec![("full".into(), full)];
    for &j in &terms {
        let f = model.block_term_field(j - 1, &shape)?;
        io::save_tensor(&f, &stage.path(&format!("term_{j}_field.tensor")))?;
        fields.push((format!("term_{j}"), f));
    }
    for (name, f) in &fields {
        for &b in &bands {
            let slice = band_slice(f, mode, b)?;
            let mag = spectrum_magnitude(&slice)?;
            let logged = spectrum2d(&slice)?;
            io::save_tensor(&mag, &stage.path(&format!("{name}_band_{b}_magnitude.tensor")))?;
            stage.write(&format!("{name}_band_{b}_spectrum.csv"), matrix_csv(&logged))?;
            stage.write(&format!("{name}_band_{b}_slice.csv"), matrix_csv(&slice))?;
            let energy: f64 = slice.data().iter().map(|v| v * v).sum();
            let spectral: f64 = mag.data().iter().map(|v| v * v).sum::<f64>() / slice.len() as f64;
            let _ = writeln!(summary, "{name},{b},{energy},{spectral}");
        }
    }
    stage.write("energy.csv", &summary)?;
    let mut cfg = ck.config.clone();
    cfg.slice_mode = Some(mode);
    write_manifest(
        &mut stage,
        "spectrum",
        &cfg,
        &[("checkpoint".into(), io::file_digest(&a.checkpoint)?)],
    )?;
    stage.commit()?;
    Ok(summary)
}

fn cmd_adapt(a: &AdaptArgs) -> CliResult<String> {
    let cfg = a.cfg.resolve()?;
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let g = grid_only(load_input(&a.data)?, "adapt")?;
    if g.values.ndim() != ck.model.mode_count() {
        return Err(Error::Incompatible(format!(
            "checkpoint has {} modes, data has {}",
            ck.model.mode_count(),
            g.values.ndim()
        ))
        .into());
    }
    let (mask, mdigest) = build_mask(&a.data, &cfg, g.values.shape())?;
    let train_mask = g.known.and(&mask)?;
    let strategies: Vec<Strategy> = if a.all_strategies {
        Strategy::ALL.to_vec()
    } else {
        vec![cfg.strategy]
    };
    let mut stage = StagedOutput::new(&a.out)?;
    let hash = cfg.hash();
    let mut records = String::new();
    let mut timing = String::new();
    for s in strategies {
        let r = tasks::adapt(&ck.model, &g.values, &train_mask, s, &cfg, Some(&g.truth))?;
        records.push_str(&io::metric_records(
            &r.result.metrics,
            &hash,
            &[("strategy", s.name().into()), ("mask_digest", mdigest.clone())],
        ));
        let _ = writeln!(
            timing,
            "strategy={} wall_time_s={} iterations={} base_checksum_before={} base_checksum_after={}",
            s.name(),
            r.result.wall_time.as_secs_f64(),
            r.result.loss_trace.len(),
            r.checksum_before,
            r.checksum_after
        );
        io::save_tensor(
            r.result.recovered.as_ref().expect("grid result"),
            &stage.path(&format!("recovered_{}.tensor", s.name())),
        )?;
    }
    stage.write("metrics.txt", &records)?;
    stage.write("timing.txt", &timing)?;
    stage.write("config.txt", cfg.to_kv())?;
    let mut inputs = g.digests.clone();
    inputs.push(("checkpoint".into(), io::file_digest(&a.checkpoint)?));
    write_manifest(&mut stage, "adapt", &cfg, &inputs)?;
    stage.commit()?;
    Ok(records + &timing)
}

fn cmd_eval(a: &EvalArgs) -> CliResult<String> {
    let truth = io::load_tensor(&a.truth)?;
    let est = io::load_tensor(&a.estimate)?;
    if truth.shape() != est.shape() {
        return Err(Error::invalid("truth and estimate shapes differ").into());
    }
    let missing = match &a.mask {
        Some(p) => io::load_mask(p)?.complement(),
        None => Mask::full(truth.shape(), true),
    };
    if missing.shape() != truth.shape() {
        return Err(Error::invalid("mask shape differs from the data").into());
    }
    let peak = a.peak.unwrap_or_else(|| metrics::default_peak(&truth));
    let report = match a.kind.as_str() {
        "image" => {
            let mut r = MetricReport::image(&truth, &est, &missing, peak)?;
            if a.mask.is_none() {
                r.values.remove("nrmse_missing");
            }
            r
        }
        "traffic" => {
            let mut r = MetricReport::traffic(&truth, &est, &missing)?;
            if a.mask.is_none() {
                for v in r.values.values_mut() {
                    v.1 = Region::All;
                }
            }
            r
        }
        other => return Err(Usage(format!("unknown metric kind `{other}` (image, traffic)")).into()),
    };
    Ok(io::metric_records(&report, "none", &[]))
}

/// Path helper for examples and tests: `dir/name`.
pub fn join(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["neuapprox"]), EXIT_USAGE);
        assert_eq!(run(["neuapprox", "bogus"]), EXIT_USAGE);
        assert_eq!(run(["neuapprox", "complete", "--synthetic", "texture"]), EXIT_USAGE);
    }

    #[test]
    fn band_slice_picks_plane() {
        let t = DenseTensor::from_fn(&[2, 3, 4], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64);
        let s = band_slice(&t, 2, 3).unwrap();
        assert_eq!(s.shape(), &[2, 3]);
        assert_eq!(s.at(1, 2), 123.0);
        assert!(band_slice(&t, 2, 4).is_err());
    }

    #[test]
    fn sweep_sort_is_deterministic() {
        let row = |psnr: f64, h: &str| SweepRow {
            terms: 1,
            core_shape: vec![1],
            depth: 2,
            width: 1,
            weight_decay: 0.0,
            params: 1,
            psnr,
            ssim: 0.0,
            nrmse: 0.0,
            config_hash: h.into(),
        };
        let mut rows = vec![row(1.0, "b"), row(3.0, "c"), row(1.0, "a")];
        sort_sweep(&mut rows);
        let order: Vec<&str> = rows.iter().map(|r| r.config_hash.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
    }
}
