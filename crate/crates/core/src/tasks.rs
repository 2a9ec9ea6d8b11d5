//! End-to-end pipelines: grid inpainting, traffic slice completion,
//! point-cloud color regression and pretrained-model adaptation.

use std::time::{Duration, Instant};

use rand::seq::index::sample;

use crate::data::{Mask, ObservationSet};
use crate::error::{Error, Result};
use crate::io::{Strategy, TrainConfig};
use crate::metrics::{self, MetricReport, Region};
use crate::model::{BlockTermModel, TrainScope};
use crate::optim::{train, TrainReport};
use crate::rng::{substream, Stream};
use crate::tensor::DenseTensor;

/// Mask with exactly `round(rate * N)` observed entries, chosen uniformly
/// without replacement from the mask substream of `seed`.
pub fn make_random_mask(shape: &[usize], rate: f64, seed: u64) -> Result<Mask> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::invalid(format!("sampling rate {rate} must lie in (0, 1)")));
    }
    let n: usize = shape.iter().product();
    let k = (rate * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(Error::invalid(format!(
            "sampling rate {rate} observes {k} of {n} entries"
        )));
    }
    let mut rng = substream(seed, Stream::Mask);
    let mut bits = vec![false; n];
    for i in sample(&mut rng, n, k) {
        bits[i] = true;
    }
    Mask::new(shape.to_vec(), bits)
}

/// Mask with `round(rate * D_mode)` whole slices along `slice_mode` missing.
pub fn make_slice_mask(shape: &[usize], missing_rate: f64, slice_mode: usize, seed: u64) -> Result<Mask> {
    if slice_mode >= shape.len() {
        return Err(Error::invalid(format!(
            "slice mode {slice_mode} out of range for {} modes",
            shape.len()
        )));
    }
    if !(missing_rate > 0.0 && missing_rate < 1.0) {
        return Err(Error::invalid(format!("missing rate {missing_rate} must lie in (0, 1)")));
    }
    let d = shape[slice_mode];
    let k = (missing_rate * d as f64).round() as usize;
    if k == 0 || k == d {
        return Err(Error::invalid(format!(
            "missing rate {missing_rate} removes {k} of {d} slices"
        )));
    }
    let mut rng = substream(seed, Stream::Mask);
    let mut dropped = vec![false; d];
    for i in sample(&mut rng, d, k) {
        dropped[i] = true;
    }
    let n: usize = shape.iter().product();
    let inner: usize = shape[slice_mode + 1..].iter().product();
    let bits = (0..n).map(|f| !dropped[(f / inner) % d]).collect();
    Mask::new(shape.to_vec(), bits)
}

/// Output of a completion or adaptation run.
#[derive(Clone, Debug)]
pub struct CompletionResult {
    /// Full grid with observed entries copied from the input (grid tasks).
    pub recovered: Option<DenseTensor>,
    /// Predictions at the query coordinates (point tasks).
    pub predictions: Option<Vec<f64>>,
    pub metrics: MetricReport,
    pub loss_trace: Vec<f64>,
    pub wall_time: Duration,
    pub stopped_early: bool,
    pub model: BlockTermModel,
}

fn check_ranks(cfg: &TrainConfig, shape: &[usize]) -> Result<()> {
    let spec = cfg.model_spec(shape.len())?;
    for (i, (&r, &d)) in spec.core_shape.iter().zip(shape).enumerate() {
        if r > d {
            return Err(Error::invalid(format!(
                "core rank {r} exceeds size {d} of mode {i}"
            )));
        }
    }
    Ok(())
}

/// Observed entries from `y`, the rest from `x`.
pub fn compose(y: &DenseTensor, x: &DenseTensor, mask: &Mask) -> DenseTensor {
    let data = y
        .data()
        .iter()
        .zip(x.data())
        .zip(mask.bits())
        .map(|((&a, &b), &m)| if m { a } else { b })
        .collect();
    DenseTensor::new(y.shape().to_vec(), data).expect("shapes agree")
}

/// How metrics are computed for a grid completion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridMetrics {
    /// PSNR, SSIM and NRMSE.
    Image,
    /// RMSE and MAPE on the missing entries.
    Traffic,
}

/// Trains a model on the observed entries of `y` and fills in the rest.
///
/// `truth` enables metric computation; it may equal `y` when the missing
/// entries of `y` still hold their true values.
pub fn inpaint(
    y: &DenseTensor,
    mask: &Mask,
    cfg: &TrainConfig,
    truth: Option<&DenseTensor>,
    kind: GridMetrics,
) -> Result<CompletionResult> {
    if y.shape() != mask.shape() {
        return Err(Error::invalid("data and mask shapes differ"));
    }
    if mask.observed() == 0 || mask.missing() == 0 {
        return Err(Error::invalid(
            "mask must contain both observed and missing entries",
        ));
    }
    check_ranks(cfg, y.shape())?;
    let start = Instant::now();
    let spec = cfg.model_spec(y.ndim())?;
    let mut model = BlockTermModel::init(&spec, cfg.seed)?;
    model.bind_grid(y.shape())?;
    let obs = ObservationSet::grid(y.clone(), mask.clone())?;
    let report = train(&mut model, &obs, &cfg.train_options(), TrainScope::Full, None)?;
    let x = model.eval_grid(y.shape())?;
    let recovered = compose(y, &x, mask);
    let metrics = match truth {
        Some(t) => grid_metrics(t, &recovered, &mask.complement(), kind)?,
        None => MetricReport::default(),
    };
    Ok(finish(model, Some(recovered), None, metrics, report, start))
}

fn grid_metrics(truth: &DenseTensor, recovered: &DenseTensor, missing: &Mask, kind: GridMetrics) -> Result<MetricReport> {
    match kind {
        GridMetrics::Image => MetricReport::image(truth, recovered, missing, metrics::default_peak(truth)),
        GridMetrics::Traffic => MetricReport::traffic(truth, recovered, missing),
    }
}

fn finish(
    model: BlockTermModel,
    recovered: Option<DenseTensor>,
    predictions: Option<Vec<f64>>,
    metrics: MetricReport,
    report: TrainReport,
    start: Instant,
) -> CompletionResult {
    CompletionResult {
        recovered,
        predictions,
        metrics,
        loss_trace: report.loss_trace,
        wall_time: start.elapsed(),
        stopped_early: report.stopped_early,
        model,
    }
}

/// Fits observed point samples and predicts values at `query` coordinates.
/// Predictions are raw model outputs, also at training coordinates.
pub fn fit_pointcloud(
    train_set: &ObservationSet,
    query: &[Vec<f64>],
    cfg: &TrainConfig,
    truth: Option<&[f64]>,
) -> Result<CompletionResult> {
    if !matches!(train_set, ObservationSet::Points { .. }) {
        return Err(Error::invalid("point-cloud fitting needs point observations"));
    }
    let start = Instant::now();
    let modes = train_set.mode_count();
    let spec = cfg.model_spec(modes)?;
    let mut model = BlockTermModel::init(&spec, cfg.seed)?;
    let report = train(&mut model, train_set, &cfg.train_options(), TrainScope::Full, None)?;
    let predictions = model.eval_points(query)?;
    let mut metrics = MetricReport::default();
    if let Some(t) = truth {
        if t.len() != predictions.len() {
            return Err(Error::invalid("truth and query lengths differ"));
        }
        let (nrmse, r2) = metrics::pointcloud_nrmse_r2(t, &predictions)?;
        metrics.insert("nrmse", nrmse, Region::Heldout);
        metrics.insert("r2", r2, Region::Heldout);
    }
    Ok(finish(model, None, Some(predictions), metrics, report, start))
}

/// Adaptation outcome with the neural checksums around training.
#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub strategy: Strategy,
    pub result: CompletionResult,
    /// Checksum of the pretrained model's base weights.
    pub checksum_before: String,
    /// Checksum of the adapted model's base weights.
    pub checksum_after: String,
}

/// Adapts a pretrained model to new grid observations.
///
/// `frozen` trains only the cores, `lora` trains the cores plus rank
/// `cfg.lora_rank` adapters, `scratch` trains a fresh model with the same
/// structure. Training length and learning rate come from `cfg`.
pub fn adapt(
    pretrained: &BlockTermModel,
    y: &DenseTensor,
    mask: &Mask,
    strategy: Strategy,
    cfg: &TrainConfig,
    truth: Option<&DenseTensor>,
) -> Result<AdaptResult> {
    if y.ndim() != pretrained.mode_count() {
        return Err(Error::invalid(format!(
            "pretrained model has {} modes but the data has {}",
            pretrained.mode_count(),
            y.ndim()
        )));
    }
    if mask.observed() == 0 {
        return Err(Error::invalid("no observed entries to adapt on"));
    }
    let start = Instant::now();
    let checksum_before = pretrained.neural_checksum();
    let (mut model, scope) = match strategy {
        Strategy::Frozen => (pretrained.clone(), TrainScope::CoresOnly),
        Strategy::Lora => (pretrained.attach_lora(cfg.lora_rank, cfg.seed)?, TrainScope::Full),
        Strategy::Scratch => {
            let mut spec = pretrained.spec();
            spec.arch.omega_first = cfg.omega_first;
            spec.arch.omega_hidden = cfg.omega_hidden;
            (BlockTermModel::init(&spec, cfg.seed)?, TrainScope::Full)
        }
    };
    let obs = ObservationSet::grid(y.clone(), mask.clone())?;
    let report = train(&mut model, &obs, &cfg.train_options(), scope, None)?;
    let x = model.eval_grid(y.shape())?;
    let recovered = compose(y, &x, mask);
    let metrics = match truth {
        Some(t) if mask.missing() > 0 => grid_metrics(t, &recovered, &mask.complement(), GridMetrics::Image)?,
        Some(t) => {
            let mut r = MetricReport::default();
            r.insert("psnr", metrics::psnr(t, &x, metrics::default_peak(t))?, Region::All);
            r
        }
        None => MetricReport::default(),
    };
    let checksum_after = model.neural_checksum();
    Ok(AdaptResult {
        strategy,
        result: finish(model, Some(recovered), None, metrics, report, start),
        checksum_before,
        checksum_after,
    })
}
