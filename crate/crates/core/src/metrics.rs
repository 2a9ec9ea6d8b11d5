//! Image, traffic and point-cloud quality metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Mask;
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Value reported by [`psnr`] when the inputs are identical.
pub const PSNR_CAP: f64 = 100.0;

fn same_shape(x: &DenseTensor, y: &DenseTensor) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::invalid(format!(
            "shapes differ: {:?} vs {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all entries, capped at [`PSNR_CAP`].
pub fn psnr(truth: &DenseTensor, estimate: &DenseTensor, peak: f64) -> Result<f64> {
    same_shape(truth, estimate)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be positive"));
    }
    let mse = truth
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / truth.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP))
}

/// Single-window SSIM of two equal-length slices.
pub fn ssim_global(x: &[f64], y: &[f64], peak: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// SSIM with image-wide statistics. Matrices use one window; 3-mode tensors are
/// split into frontal bands along the last mode and the per-band values are
/// averaged.
pub fn ssim(truth: &DenseTensor, estimate: &DenseTensor, peak: f64) -> Result<f64> {
    same_shape(truth, estimate)?;
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be positive"));
    }
    if truth.ndim() != 3 {
        return Ok(ssim_global(truth.data(), estimate.data(), peak));
    }
    let bands = truth.shape()[2];
    let plane = truth.shape()[0] * truth.shape()[1];
    let mut xb = vec![0.0; plane];
    let mut yb = vec![0.0; plane];
    let mut total = 0.0;
    for b in 0..bands {
        for p in 0..plane {
            xb[p] = truth.data()[p * bands + b];
            yb[p] = estimate.data()[p * bands + b];
        }
        total += ssim_global(&xb, &yb, peak);
    }
    Ok(total / bands as f64)
}

/// `||truth - estimate|| / ||truth||`.
pub fn nrmse(truth: &DenseTensor, estimate: &DenseTensor) -> Result<f64> {
    same_shape(truth, estimate)?;
    nrmse_slices(truth.data(), estimate.data())
}

/// [`nrmse`] restricted to the entries where `region` is true.
pub fn nrmse_on(truth: &DenseTensor, estimate: &DenseTensor, region: &Mask) -> Result<f64> {
    same_shape(truth, estimate)?;
    if region.shape() != truth.shape() {
        return Err(Error::invalid("region mask shape differs from the data"));
    }
    let (mut t, mut e) = (Vec::new(), Vec::new());
    for ((&a, &b), &m) in truth.data().iter().zip(estimate.data()).zip(region.bits()) {
        if m {
            t.push(a);
            e.push(b);
        }
    }
    nrmse_slices(&t, &e)
}

fn nrmse_slices(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    let den: f64 = truth.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::invalid("truth has zero norm"));
    }
    let num: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / den).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrafficScores {
    pub rmse: f64,
    /// Mean absolute percentage error (x100); `None` when every actual is zero.
    pub mape_percent: Option<f64>,
    /// Same quantity without the x100 factor.
    pub mape_ratio: Option<f64>,
    /// Missing entries left out of the MAPE average because the actual is 0.
    pub mape_excluded: usize,
}

/// RMSE and MAPE over the entries where `region` is true (the missing set).
pub fn traffic_rmse_mape(truth: &DenseTensor, estimate: &DenseTensor, region: &Mask) -> Result<TrafficScores> {
    same_shape(truth, estimate)?;
    if region.shape() != truth.shape() {
        return Err(Error::invalid("region mask shape differs from the data"));
    }
    let (mut n, mut sq, mut ape, mut counted, mut excluded) = (0usize, 0.0, 0.0, 0usize, 0usize);
    for ((&a, &b), &m) in truth.data().iter().zip(estimate.data()).zip(region.bits()) {
        if !m {
            continue;
        }
        n += 1;
        sq += (a - b) * (a - b);
        if a == 0.0 {
            excluded += 1;
        } else {
            ape += ((a - b) / a).abs();
            counted += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("evaluation region is empty"));
    }
    let ratio = (counted > 0).then(|| ape / counted as f64);
    Ok(TrafficScores {
        rmse: (sq / n as f64).sqrt(),
        mape_percent: ratio.map(|r| r * 100.0),
        mape_ratio: ratio,
        mape_excluded: excluded,
    })
}

/// Range-normalized RMSE and the coefficient of determination.
pub fn pointcloud_nrmse_r2(truth: &[f64], estimate: &[f64]) -> Result<(f64, f64)> {
    if truth.len() != estimate.len() || truth.len() < 2 {
        return Err(Error::invalid("need two equal-length lists of at least 2 values"));
    }
    let n = truth.len() as f64;
    let lo = truth.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = truth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return Err(Error::invalid("truth values are constant"));
    }
    let mean = truth.iter().sum::<f64>() / n;
    let sse: f64 = truth.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    let sst: f64 = truth.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(((sse / n).sqrt() / (hi - lo), 1.0 - sse / sst))
}

/// Which entries a report was computed over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    All,
    Missing,
    Heldout,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::All => "all",
            Region::Missing => "missing",
            Region::Heldout => "heldout",
        }
    }
}

/// Named metric values with the region they were measured on.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, (f64, Region)>,
}

impl MetricReport {
    pub fn insert(&mut self, name: &str, value: f64, region: Region) {
        self.values.insert(name.to_string(), (value, region));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).map(|v| v.0)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// PSNR, SSIM and NRMSE over the full recovered tensor plus NRMSE on the
    /// missing entries.
    pub fn image(truth: &DenseTensor, recovered: &DenseTensor, missing: &Mask, peak: f64) -> Result<Self> {
        let mut r = MetricReport::default();
        r.insert("psnr", psnr(truth, recovered, peak)?, Region::All);
        r.insert("ssim", ssim(truth, recovered, peak)?, Region::All);
        r.insert("nrmse", nrmse(truth, recovered)?, Region::All);
        if missing.observed() > 0 {
            if let Ok(v) = nrmse_on(truth, recovered, missing) {
                r.insert("nrmse_missing", v, Region::Missing);
            }
        }
        Ok(r)
    }

    pub fn traffic(truth: &DenseTensor, recovered: &DenseTensor, missing: &Mask) -> Result<Self> {
        let s = traffic_rmse_mape(truth, recovered, missing)?;
        let mut r = MetricReport::default();
        r.insert("rmse", s.rmse, Region::Missing);
        if let (Some(p), Some(q)) = (s.mape_percent, s.mape_ratio) {
            r.insert("mape", p, Region::Missing);
            r.insert("mape_ratio", q, Region::Missing);
        }
        r.insert("mape_excluded", s.mape_excluded as f64, Region::Missing);
        Ok(r)
    }
}

/// Peak value used for PSNR/SSIM: the data maximum, or 1 when the data are
/// nonpositive.
pub fn default_peak(truth: &DenseTensor) -> f64 {
    let m = truth.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m > 0.0 {
        m
    } else {
        1.0
    }
}
