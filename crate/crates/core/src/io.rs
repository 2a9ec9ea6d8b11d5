//! File formats: tensor containers, masks, traffic CSV, point clouds,
//! checkpoints, run configs, result records and manifests.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::BasisKind;
use crate::data::{Mask, ObservationSet};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::mlp::{BasisArch, DEFAULT_OMEGA_FIRST, DEFAULT_OMEGA_HIDDEN};
use crate::model::{BlockTermModel, ModelSpec};
use crate::optim::{AdamConfig, TrainOptions};
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"NATENSOR";
pub const TENSOR_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &str = "NEUAPPROX-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// How a pretrained model is adapted to new data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Bases frozen, only cores train.
    Frozen,
    /// Cores plus low-rank adapters on every basis layer train.
    Lora,
    /// A fresh model of the same structure trains from random init.
    Scratch,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Frozen, Strategy::Lora, Strategy::Scratch];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Frozen => "frozen",
            Strategy::Lora => "lora",
            Strategy::Scratch => "scratch",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "frozen" | "pretrain" | "pretraining" => Ok(Strategy::Frozen),
            "lora" | "finetune" | "fine-tune" => Ok(Strategy::Lora),
            "scratch" => Ok(Strategy::Scratch),
            other => Err(Error::invalid(format!("unknown adaptation strategy `{other}`"))),
        }
    }
}

/// Every knob of a run. Serialized as flat `key = value` text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub terms: usize,
    /// One entry per mode, or a single entry applied to every mode.
    pub core_shape: Vec<usize>,
    /// One entry per mode, or a single entry applied to every mode.
    pub basis: Vec<BasisKind>,
    pub depth: usize,
    pub width: usize,
    pub omega_first: f64,
    pub omega_hidden: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub seed: u64,
    pub early_stopping: bool,
    pub strategy: Strategy,
    pub lora_rank: usize,
    /// Slice mode for slice-missing masks; `None` means the last mode.
    pub slice_mode: Option<usize>,
    pub sampling_rate: Option<f64>,
    pub missing_rate: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            terms: 2,
            core_shape: vec![4],
            basis: vec![BasisKind::Neural],
            depth: 3,
            width: 32,
            omega_first: DEFAULT_OMEGA_FIRST,
            omega_hidden: DEFAULT_OMEGA_HIDDEN,
            learning_rate: 1e-4,
            weight_decay: 0.0,
            iterations: 5000,
            seed: 0,
            early_stopping: false,
            strategy: Strategy::Lora,
            lora_rank: 10,
            slice_mode: None,
            sampling_rate: None,
            missing_rate: None,
        }
    }
}

pub const CONFIG_KEYS: [&str; 17] = [
    "terms",
    "core_shape",
    "basis",
    "depth",
    "width",
    "omega_first",
    "omega_hidden",
    "learning_rate",
    "weight_decay",
    "iterations",
    "seed",
    "early_stopping",
    "strategy",
    "lora_rank",
    "slice_mode",
    "sampling_rate",
    "missing_rate",
];

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_else(|| "none".into())
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.terms == 0 {
            return Err(Error::invalid("terms must be at least 1"));
        }
        if self.core_shape.is_empty() || self.core_shape.contains(&0) {
            return Err(Error::invalid("every core rank must be at least 1"));
        }
        if self.basis.is_empty() {
            return Err(Error::invalid("at least one basis kind is required"));
        }
        if self.depth < 2 {
            return Err(Error::invalid("depth must be at least 2"));
        }
        if self.width == 0 {
            return Err(Error::invalid("width must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be nonnegative"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.lora_rank == 0 {
            return Err(Error::invalid("lora_rank must be at least 1"));
        }
        for (name, r) in [("sampling_rate", self.sampling_rate), ("missing_rate", self.missing_rate)] {
            if let Some(r) = r {
                if !(r > 0.0 && r < 1.0) {
                    return Err(Error::invalid(format!("{name} must lie in (0, 1)")));
                }
            }
        }
        Ok(())
    }

    fn broadcast<T: Copy>(v: &[T], n: usize, what: &str) -> Result<Vec<T>> {
        match v.len() {
            1 => Ok(vec![v[0]; n]),
            k if k == n => Ok(v.to_vec()),
            k => Err(Error::invalid(format!("{what} has {k} entries for {n} modes"))),
        }
    }

    /// Model structure for data with `modes` modes.
    pub fn model_spec(&self, modes: usize) -> Result<ModelSpec> {
        self.validate()?;
        Ok(ModelSpec {
            terms: self.terms,
            core_shape: Self::broadcast(&self.core_shape, modes, "core_shape")?,
            kinds: Self::broadcast(&self.basis, modes, "basis")?,
            arch: BasisArch {
                depth: self.depth,
                width: self.width,
                omega_first: self.omega_first,
                omega_hidden: self.omega_hidden,
            },
        })
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            iterations: self.iterations,
            early_stopping: self.early_stopping,
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "terms" => self.terms.to_string(),
            "core_shape" => join(&self.core_shape),
            "basis" => join(&self.basis),
            "depth" => self.depth.to_string(),
            "width" => self.width.to_string(),
            "omega_first" => self.omega_first.to_string(),
            "omega_hidden" => self.omega_hidden.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "iterations" => self.iterations.to_string(),
            "seed" => self.seed.to_string(),
            "early_stopping" => self.early_stopping.to_string(),
            "strategy" => self.strategy.name().to_string(),
            "lora_rank" => self.lora_rank.to_string(),
            "slice_mode" => opt(&self.slice_mode),
            "sampling_rate" => opt(&self.sampling_rate),
            "missing_rate" => opt(&self.missing_rate),
            _ => return None,
        })
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = |e: &dyn std::fmt::Display| Error::invalid(format!("bad value `{v}` for {key}: {e}"));
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>().map_err(|e| e.to_string())
        }
        fn none_or<T: FromStr>(v: &str) -> std::result::Result<Option<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            if v.eq_ignore_ascii_case("none") || v.is_empty() {
                Ok(None)
            } else {
                num(v).map(Some)
            }
        }
        match key {
            "terms" => self.terms = num(v).map_err(|e| bad(&e))?,
            "core_shape" => {
                self.core_shape = v
                    .split(',')
                    .map(|s| num(s.trim()))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e))?
            }
            "basis" => {
                self.basis = v
                    .split(',')
                    .map(BasisKind::from_str)
                    .collect::<Result<_>>()
                    .map_err(|e| bad(&e))?
            }
            "depth" => self.depth = num(v).map_err(|e| bad(&e))?,
            "width" => self.width = num(v).map_err(|e| bad(&e))?,
            "omega_first" => self.omega_first = num(v).map_err(|e| bad(&e))?,
            "omega_hidden" => self.omega_hidden = num(v).map_err(|e| bad(&e))?,
            "learning_rate" => self.learning_rate = num(v).map_err(|e| bad(&e))?,
            "weight_decay" => self.weight_decay = num(v).map_err(|e| bad(&e))?,
            "iterations" => self.iterations = num(v).map_err(|e| bad(&e))?,
            "seed" => self.seed = num(v).map_err(|e| bad(&e))?,
            "early_stopping" => self.early_stopping = num(v).map_err(|e| bad(&e))?,
            "strategy" => self.strategy = v.parse().map_err(|e| bad(&e))?,
            "lora_rank" => self.lora_rank = num(v).map_err(|e| bad(&e))?,
            "slice_mode" => self.slice_mode = none_or(v).map_err(|e| bad(&e))?,
            "sampling_rate" => self.sampling_rate = none_or(v).map_err(|e| bad(&e))?,
            "missing_rate" => self.missing_rate = none_or(v).map_err(|e| bad(&e))?,
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Canonical `key = value` text, one line per field in [`CONFIG_KEYS`] order.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for k in CONFIG_KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn from_kv(text: &str, source: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("{source}:{}", i + 1), "expected `key = value`"))?;
            cfg.set(k.trim(), v)
                .map_err(|e| Error::parse(format!("{source}:{}", i + 1), e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_kv(&text, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_kv()).map_err(|e| Error::io(path, e))
    }

    /// First 16 hex digits of the SHA-256 of [`TrainConfig::to_kv`].
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.to_kv().as_bytes());
        hex::encode(d)[..16].to_string()
    }
}

// ---------------------------------------------------------------------------
// tensor container

/// Serializes a tensor: magic, `u32` version, `u32` mode count, `u64` sizes,
/// then the row-major `f64` payload, all little-endian.
pub fn encode_tensor(t: &DenseTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * t.ndim() + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                format!("{} at byte {}", self.source, self.pos),
                format!("file truncated while reading {field}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensor(bytes: &[u8], source: &str) -> Result<DenseTensor> {
    let mut r = Reader { bytes, pos: 0, source };
    if r.take(8, "magic")? != TENSOR_MAGIC {
        return Err(Error::parse(source, "bad magic: not a tensor container"));
    }
    let version = r.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::parse(source, format!("unsupported version {version}")));
    }
    let modes = r.u32("mode count")? as usize;
    if modes == 0 {
        return Err(Error::parse(source, "mode count is zero"));
    }
    let mut shape = Vec::with_capacity(modes.min(64));
    let mut total: u64 = 1;
    for i in 0..modes {
        let d = r.u64(&format!("shape[{i}]"))?;
        if d == 0 {
            return Err(Error::parse(source, format!("shape[{i}] is zero")));
        }
        total = total
            .checked_mul(d)
            .ok_or_else(|| Error::parse(source, "shape overflows"))?;
        shape.push(d as usize);
    }
    let remaining = (bytes.len() - r.pos) as u64;
    if total.checked_mul(8) != Some(remaining) {
        return Err(Error::parse(
            source,
            format!("shape {shape:?} needs {total} values but payload holds {} bytes", remaining),
        ));
    }
    let data = r.bytes[r.pos..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    DenseTensor::new(shape, data).map_err(|e| Error::parse(source, e.to_string()))
}

pub fn save_tensor(t: &DenseTensor, path: &Path) -> Result<()> {
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, &path.display().to_string())
}

pub fn save_mask(m: &Mask, path: &Path) -> Result<()> {
    save_tensor(&m.to_tensor(), path)
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    let t = load_tensor(path)?;
    Mask::from_tensor(&t).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

// ---------------------------------------------------------------------------
// traffic CSV

/// Traffic tensor `(sensor, day, interval)` with its observed-cell mask.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficData {
    pub values: DenseTensor,
    pub mask: Mask,
}

fn parse_cell(cell: &str, location: impl FnOnce() -> String) -> Result<Option<f64>> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("nan") || c.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    match c.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(Error::parse(location(), format!("non-numeric cell `{c}`"))),
    }
}

/// Reads traffic data from CSV text.
///
/// Long form has the header `sensor,day,interval,value` with zero-based
/// indices; missing rows or blank values are unobserved. Wide form has one row
/// per sensor and `days * intervals` columns (day-major), with an optional
/// header row. `layout` gives `(sensors, days, intervals)`; it is required for
/// wide form and inferred from the largest indices in long form.
pub fn parse_traffic_csv(text: &str, layout: Option<(usize, usize, usize)>, source: &str) -> Result<TrafficData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(format!("{source}:{}", i + 1), e.to_string()))?;
        rows.push(rec.iter().map(str::to_string).collect::<Vec<_>>());
    }
    let rows: Vec<(usize, Vec<String>)> = rows
        .into_iter()
        .enumerate()
        .filter(|(_, r)| !(r.len() == 1 && r[0].is_empty()))
        .map(|(i, r)| (i + 1, r))
        .collect();
    if rows.is_empty() {
        return Err(Error::parse(source, "empty traffic file"));
    }
    let header: Vec<String> = rows[0].1.iter().map(|s| s.to_ascii_lowercase()).collect();
    if header == ["sensor", "day", "interval", "value"] {
        parse_long(&rows[1..], layout, source)
    } else {
        let skip = usize::from(rows[0].1.first().is_some_and(|c| c.parse::<f64>().is_err() && !c.is_empty()));
        parse_wide(&rows[skip..], layout, source)
    }
}

fn parse_long(rows: &[(usize, Vec<String>)], layout: Option<(usize, usize, usize)>, source: &str) -> Result<TrafficData> {
    let mut entries = Vec::with_capacity(rows.len());
    for (line, r) in rows {
        if r.len() != 4 {
            return Err(Error::parse(
                format!("{source}:{line}"),
                format!("expected 4 columns, found {}", r.len()),
            ));
        }
        let mut idx = [0usize; 3];
        for (k, (cell, name)) in r.iter().zip(["sensor", "day", "interval"]).enumerate() {
            idx[k] = cell.parse().map_err(|_| {
                Error::parse(format!("{source}:{line}:{}", k + 1), format!("bad {name} index `{cell}`"))
            })?;
        }
        let v = parse_cell(&r[3], || format!("{source}:{line}:4"))?;
        entries.push((*line, idx, v));
    }
    let shape = match layout {
        Some((s, d, t)) => [s, d, t],
        None => {
            if entries.is_empty() {
                return Err(Error::parse(source, "no data rows"));
            }
            let mut m = [0; 3];
            for (_, idx, _) in &entries {
                for k in 0..3 {
                    m[k] = m[k].max(idx[k] + 1);
                }
            }
            m
        }
    };
    if shape.contains(&0) {
        return Err(Error::invalid("traffic layout sizes must be positive"));
    }
    let mut values = DenseTensor::zeros(&shape);
    let mut bits = vec![false; values.len()];
    for (line, idx, v) in entries {
        if (0..3).any(|k| idx[k] >= shape[k]) {
            return Err(Error::parse(
                format!("{source}:{line}"),
                format!("index {idx:?} outside layout {shape:?}"),
            ));
        }
        let off = values.offset(&idx);
        if let Some(v) = v {
            values.data_mut()[off] = v;
            bits[off] = true;
        }
    }
    Ok(TrafficData {
        values,
        mask: Mask::new(shape.to_vec(), bits)?,
    })
}

fn parse_wide(rows: &[(usize, Vec<String>)], layout: Option<(usize, usize, usize)>, source: &str) -> Result<TrafficData> {
    let (s, d, t) = layout.ok_or_else(|| Error::invalid("wide-form traffic CSV needs a (sensors, days, intervals) layout"))?;
    if s == 0 || d == 0 || t == 0 {
        return Err(Error::invalid("traffic layout sizes must be positive"));
    }
    if rows.len() != s {
        return Err(Error::parse(source, format!("expected {s} sensor rows, found {}", rows.len())));
    }
    let mut data = Vec::with_capacity(s * d * t);
    let mut bits = Vec::with_capacity(s * d * t);
    for (line, r) in rows {
        if r.len() != d * t {
            return Err(Error::parse(
                format!("{source}:{line}"),
                format!("ragged row: expected {} columns, found {}", d * t, r.len()),
            ));
        }
        for (c, cell) in r.iter().enumerate() {
            let v = parse_cell(cell, || format!("{source}:{line}:{}", c + 1))?;
            data.push(v.unwrap_or(0.0));
            bits.push(v.is_some());
        }
    }
    Ok(TrafficData {
        values: DenseTensor::new(vec![s, d, t], data)?,
        mask: Mask::new(vec![s, d, t], bits)?,
    })
}

pub fn load_traffic_csv(path: &Path, layout: Option<(usize, usize, usize)>) -> Result<TrafficData> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_traffic_csv(&text, layout, &path.display().to_string())
}

/// Wide-form CSV text of a traffic tensor; unobserved cells are left blank.
pub fn traffic_to_wide_csv(data: &TrafficData) -> String {
    let shape = data.values.shape();
    let cols = shape[1] * shape[2];
    let mut s = String::new();
    for (row, bits) in data.values.data().chunks(cols).zip(data.mask.bits().chunks(cols)) {
        let cells: Vec<String> = row
            .iter()
            .zip(bits)
            .map(|(v, &b)| if b { v.to_string() } else { String::new() })
            .collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Long-form CSV text of a traffic tensor; unobserved cells are omitted.
pub fn traffic_to_long_csv(data: &TrafficData) -> String {
    let shape = data.values.shape();
    let mut s = String::from("sensor,day,interval,value\n");
    for i in 0..shape[0] {
        for j in 0..shape[1] {
            for k in 0..shape[2] {
                let off = data.values.offset(&[i, j, k]);
                if data.mask.bits()[off] {
                    let _ = writeln!(s, "{i},{j},{k},{}", data.values.data()[off]);
                }
            }
        }
    }
    s
}

// ---------------------------------------------------------------------------
// point clouds

/// Raw `(x, y, z, r, g, b)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub rows: Vec<[f64; 6]>,
}

/// Per-dimension spatial extremes used for min-max normalization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// Channel coordinates for the red, green and blue observations of a point.
pub const CHANNEL_COORDS: [f64; 3] = [0.0, 0.5, 1.0];

impl PointCloud {
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let l = line.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let cells: Vec<&str> = l
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            if cells.len() != 6 {
                return Err(Error::parse(
                    format!("{source}:{}", i + 1),
                    format!("expected 6 values, found {}", cells.len()),
                ));
            }
            let mut row = [0.0; 6];
            for (k, c) in cells.iter().enumerate() {
                row[k] = c
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(format!("{source}:{}:{}", i + 1, k + 1), format!("bad number `{c}`")))?;
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::parse(source, "point cloud has no rows"));
        }
        Ok(PointCloud { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn bounds(&self) -> Bounds {
        let mut b = Bounds {
            lo: [f64::INFINITY; 3],
            hi: [f64::NEG_INFINITY; 3],
        };
        for r in &self.rows {
            for k in 0..3 {
                b.lo[k] = b.lo[k].min(r[k]);
                b.hi[k] = b.hi[k].max(r[k]);
            }
        }
        b
    }

    /// True when any color component exceeds 1 (colors stored as 0..255).
    pub fn colors_are_bytes(&self) -> bool {
        self.rows.iter().any(|r| r[3..].iter().any(|&c| c > 1.0))
    }

    /// Normalized observations: spatial coordinates mapped by `bounds`
    /// (degenerate dimensions map to 0), colors divided by 255 when
    /// `byte_colors`, three observations per row. Also returns the indices of
    /// degenerate dimensions.
    pub fn observations(&self, bounds: &Bounds, byte_colors: bool) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
        let degenerate: Vec<usize> = (0..3).filter(|&k| bounds.hi[k] <= bounds.lo[k]).collect();
        let scale = if byte_colors { 255.0 } else { 1.0 };
        let mut coords = Vec::with_capacity(self.rows.len() * 3);
        let mut values = Vec::with_capacity(self.rows.len() * 3);
        for r in &self.rows {
            let mut p = [0.0; 3];
            for k in 0..3 {
                p[k] = if degenerate.contains(&k) {
                    0.0
                } else {
                    (r[k] - bounds.lo[k]) / (bounds.hi[k] - bounds.lo[k])
                };
            }
            for (c, &ch) in CHANNEL_COORDS.iter().enumerate() {
                coords.push(vec![p[0], p[1], p[2], ch]);
                values.push(r[3 + c] / scale);
            }
        }
        (coords, values, degenerate)
    }
}

/// Reads a point cloud and normalizes it by its own extremes.
pub fn load_pointcloud(path: &Path) -> Result<ObservationSet> {
    let pc = PointCloud::load(path)?;
    let (coords, values, _) = pc.observations(&pc.bounds(), pc.colors_are_bytes());
    ObservationSet::points(coords, values)
}

// ---------------------------------------------------------------------------
// checkpoints

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub model: BlockTermModel,
    pub seed: u64,
    pub iterations: usize,
}

/// Checkpoint text: a header line `MAGIC VERSION SHA256(body)` followed by the
/// JSON body. Floats round-trip exactly.
pub fn encode_checkpoint(model: &BlockTermModel, cfg: &TrainConfig, iterations: usize) -> Result<String> {
    let ck = Checkpoint {
        version: CHECKPOINT_VERSION,
        config: cfg.clone(),
        model: model.clone(),
        seed: cfg.seed,
        iterations,
    };
    let body = serde_json::to_string(&ck).map_err(|e| Error::invalid(format!("cannot serialize checkpoint: {e}")))?;
    let digest = hex::encode(Sha256::digest(body.as_bytes()));
    Ok(format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION} {digest}\n{body}"))
}

pub fn decode_checkpoint(text: &str, source: &str) -> Result<Checkpoint> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::parse(source, "missing checkpoint header"))?;
    let parts: Vec<&str> = header.split(' ').collect();
    if parts.len() != 3 || parts[0] != CHECKPOINT_MAGIC {
        return Err(Error::parse(source, "bad checkpoint header"));
    }
    let version: u32 = parts[1]
        .parse()
        .map_err(|_| Error::parse(source, format!("bad version field `{}`", parts[1])))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Incompatible(format!(
            "{source} has version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    if hex::encode(Sha256::digest(body.as_bytes())) != parts[2] {
        return Err(Error::parse(source, "checksum mismatch: parameter block is corrupted"));
    }
    let ck: Checkpoint = serde_json::from_str(body).map_err(|e| Error::parse(source, e.to_string()))?;
    if ck.version != version {
        return Err(Error::parse(source, "header and body versions disagree"));
    }
    ck.model
        .validate()
        .map_err(|e| Error::parse(source, format!("invalid model: {e}")))?;
    Ok(ck)
}

pub fn save_checkpoint(model: &BlockTermModel, cfg: &TrainConfig, iterations: usize, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model, cfg, iterations)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&text, &path.display().to_string())
}

// ---------------------------------------------------------------------------
// result records and manifests

/// One line per metric: `metric=NAME value=V region=R config_hash=H`, plus
/// any extra `key=value` labels. Timing is kept out of these records so they
/// stay byte-identical across reruns.
pub fn metric_records(report: &MetricReport, config_hash: &str, labels: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (name, (value, region)) in &report.values {
        let _ = write!(s, "metric={name} value={value} region={} config_hash={config_hash}", region.name());
        for (k, v) in labels {
            let _ = write!(s, " {k}={v}");
        }
        s.push('\n');
    }
    s
}

/// Parses records written by [`metric_records`] back into key/value maps.
pub fn parse_records(text: &str) -> Result<Vec<BTreeMap<String, String>>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_whitespace()
                .map(|kv| {
                    kv.split_once('=')
                        .map(|(k, v)| (k.to_string(), v.to_string()))
                        .ok_or_else(|| Error::parse(format!("record {}", i + 1), format!("bad field `{kv}`")))
                })
                .collect()
        })
        .collect()
}

pub fn loss_trace_text(trace: &[f64]) -> String {
    let mut s = String::new();
    for (k, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{} {v}", k + 1);
    }
    s
}

/// Hex SHA-256 of a file's bytes.
pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &TrainConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            config: CONFIG_KEYS
                .iter()
                .map(|k| (k.to_string(), cfg.get(k).expect("known key")))
                .collect(),
            config_hash: cfg.hash(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            seed: cfg.seed,
            started_unix: unix_now(),
            finished_unix: 0,
        }
    }

    /// Config reconstructed from the manifest.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse(source, e.to_string()))
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Output directory that only appears at `target` once [`StagedOutput::commit`]
/// succeeds. Files are written to a temporary sibling directory first.
pub struct StagedOutput {
    tmp: tempfile::TempDir,
    target: PathBuf,
    written: Vec<String>,
}

impl StagedOutput {
    pub fn new(target: &Path) -> Result<Self> {
        if target.exists() && fs::read_dir(target).map(|mut d| d.next().is_some()).unwrap_or(true) {
            return Err(Error::invalid(format!(
                "output directory {} already exists and is not empty",
                target.display()
            )));
        }
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).map_err(|e| Error::io(&parent, e))?;
        let tmp = tempfile::Builder::new()
            .prefix(".neuapprox-staging-")
            .tempdir_in(&parent)
            .map_err(|e| Error::io(&parent, e))?;
        Ok(StagedOutput {
            tmp,
            target: target.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Path inside the staging directory for a new output file.
    pub fn path(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        self.tmp.path().join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| Error::io(&p, e))
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Moves the staged directory into place.
    pub fn commit(self) -> Result<PathBuf> {
        if self.target.exists() {
            fs::remove_dir(&self.target).map_err(|e| Error::io(&self.target, e))?;
        }
        let tmp = self.tmp.keep();
        fs::rename(&tmp, &self.target).map_err(|e| Error::io(&self.target, e))?;
        Ok(self.target)
    }
}
