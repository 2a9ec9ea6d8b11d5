//! The block-term model.
//!
//! `f(x) = sum_j C_j x_1 f_1^j(x_1) x_2 ... x_n f_n^j(x_n)`: every term
//! contracts its coefficient (core) tensor with one univariate basis per mode.
//! On a meshgrid the per-mode bases become factor matrices and a term is a
//! Tucker contraction; with all ranks equal to one the model is a CP sum.

use std::cmp::Ordering;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BasisFamily, BasisKind};
use crate::data::ObservationSet;
use crate::error::{Error, Result};
use crate::mlp::{hash_f64s, BasisArch, NeuralBasis};
use crate::rng::{substream, Stream};
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    core: DenseTensor,
    bases: Vec<BasisFamily>,
}

impl BlockTerm {
    pub fn new(core: DenseTensor, bases: Vec<BasisFamily>) -> Result<Self> {
        let term = BlockTerm { core, bases };
        term.validate()?;
        Ok(term)
    }

    fn validate(&self) -> Result<()> {
        if self.core.ndim() != self.bases.len() {
            return Err(Error::invalid(format!(
                "core has {} modes but {} bases were given",
                self.core.ndim(),
                self.bases.len()
            )));
        }
        for (i, (b, &r)) in self.bases.iter().zip(self.core.shape()).enumerate() {
            if b.rank() != r {
                return Err(Error::invalid(format!(
                    "basis {i} has rank {} but the core expects {r}",
                    b.rank()
                )));
            }
            if let BasisFamily::Neural(n) = b {
                n.validate()?;
            }
        }
        if !self.core.is_finite() {
            return Err(Error::invalid("core tensor has non-finite entries"));
        }
        Ok(())
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut DenseTensor {
        &mut self.core
    }

    pub fn bases(&self) -> &[BasisFamily] {
        &self.bases
    }

    pub fn bases_mut(&mut self) -> &mut [BasisFamily] {
        &mut self.bases
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    pub fn num_params(&self) -> usize {
        self.core.len() + self.bases.iter().map(BasisFamily::num_params).sum::<usize>()
    }

    /// Value of this term alone at one coordinate.
    pub fn eval_point(&self, x: &[f64]) -> f64 {
        let vecs: Vec<Vec<f64>> = self.bases.iter().zip(x).map(|(b, &xi)| b.evaluate(xi)).collect();
        let refs: Vec<&[f64]> = vecs.iter().map(Vec::as_slice).collect();
        contract_all(&self.core, &refs)
    }

    fn field_from_factors(&self, factors: &[DenseTensor]) -> DenseTensor {
        let mut t = self.core.clone();
        for (mode, f) in factors.iter().enumerate() {
            t = t.mode_product(f, mode).expect("factor shape matches core");
        }
        t
    }
}

/// Which parameters a gradient evaluation or training run touches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainScope {
    /// Cores plus the trainable part of every neural basis (its adapters when
    /// attached, otherwise all base weights and biases).
    Full,
    /// Cores only; bases stay fixed.
    CoresOnly,
}

/// Flattened gradients congruent with [`BlockTermModel::trainable_slices_mut`]
/// for the same scope.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub slots: Vec<Vec<f64>>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.slots.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.slots.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct LossAndGradients {
    pub loss: f64,
    pub grads: GradientBundle,
}

/// Everything needed to build a fresh model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub terms: usize,
    /// Shared core shape `(R_1, .., R_n)`.
    pub core_shape: Vec<usize>,
    /// One basis family per mode.
    pub kinds: Vec<BasisKind>,
    pub arch: BasisArch,
}

impl ModelSpec {
    pub fn neural(terms: usize, core_shape: Vec<usize>, depth: usize, width: usize) -> Self {
        let n = core_shape.len();
        ModelSpec {
            terms,
            core_shape,
            kinds: vec![BasisKind::Neural; n],
            arch: BasisArch::new(depth, width),
        }
    }

    /// Analytic parameter count: `sum_j (prod R_i + neural params)`.
    pub fn param_count(&self) -> usize {
        let core: usize = self.core_shape.iter().product();
        let bases: usize = self
            .kinds
            .iter()
            .zip(&self.core_shape)
            .filter(|(k, _)| **k == BasisKind::Neural)
            .map(|(_, &r)| self.arch.param_count(r))
            .sum();
        self.terms * (core + bases)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockTermModel {
    terms: Vec<BlockTerm>,
    grid_shape: Option<Vec<usize>>,
}

impl BlockTermModel {
    pub fn new(terms: Vec<BlockTerm>) -> Result<Self> {
        let m = BlockTermModel {
            terms,
            grid_shape: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .terms
            .first()
            .ok_or_else(|| Error::invalid("a model needs at least one block term"))?;
        let n = first.bases.len();
        for (j, t) in self.terms.iter().enumerate() {
            t.validate()
                .map_err(|e| Error::invalid(format!("term {j}: {e}")))?;
            if t.bases.len() != n {
                return Err(Error::invalid(format!(
                    "term {j} has {} modes, expected {n}",
                    t.bases.len()
                )));
            }
        }
        if let Some(g) = &self.grid_shape {
            if g.len() != n || g.contains(&0) {
                return Err(Error::invalid(format!("bound grid shape {g:?} is invalid")));
            }
        }
        Ok(())
    }

    /// Random model: cores uniform in `±1/sqrt(prod R)`, neural bases from the
    /// sine-network initialization. Cores and bases draw from separate seed
    /// substreams.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        if spec.terms == 0 {
            return Err(Error::invalid("number of block terms must be at least 1"));
        }
        if spec.core_shape.is_empty() || spec.core_shape.contains(&0) {
            return Err(Error::invalid(format!(
                "core shape {:?} must have positive sizes",
                spec.core_shape
            )));
        }
        if spec.kinds.len() != spec.core_shape.len() {
            return Err(Error::invalid(format!(
                "{} basis kinds for {} modes",
                spec.kinds.len(),
                spec.core_shape.len()
            )));
        }
        let mut init_rng = substream(seed, Stream::Init);
        let mut core_rng = substream(seed, Stream::Core);
        let size: usize = spec.core_shape.iter().product();
        let half = 1.0 / (size as f64).sqrt();
        let mut terms = Vec::with_capacity(spec.terms);
        for _ in 0..spec.terms {
            let core_data: Vec<f64> = (0..size).map(|_| core_rng.gen_range(-half..=half)).collect();
            let core = DenseTensor::new(spec.core_shape.clone(), core_data)?;
            let bases = spec
                .kinds
                .iter()
                .zip(&spec.core_shape)
                .map(|(&kind, &r)| match kind {
                    BasisKind::Neural => Ok(BasisFamily::Neural(NeuralBasis::init(
                        &spec.arch,
                        r,
                        &mut init_rng,
                    )?)),
                    BasisKind::Polynomial => BasisFamily::polynomial(r),
                    BasisKind::Fourier => BasisFamily::fourier(r),
                    BasisKind::Gaussian => BasisFamily::gaussian(r),
                })
                .collect::<Result<Vec<_>>>()?;
            terms.push(BlockTerm::new(core, bases)?);
        }
        BlockTermModel::new(terms)
    }

    pub fn terms(&self) -> &[BlockTerm] {
        &self.terms
    }

    pub fn terms_mut(&mut self) -> &mut [BlockTerm] {
        &mut self.terms
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn mode_count(&self) -> usize {
        self.terms[0].bases.len()
    }

    pub fn grid_shape(&self) -> Option<&[usize]> {
        self.grid_shape.as_deref()
    }

    pub fn bind_grid(&mut self, shape: &[usize]) -> Result<()> {
        check_grid(self.mode_count(), shape)?;
        self.grid_shape = Some(shape.to_vec());
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.terms.iter().map(BlockTerm::num_params).sum()
    }

    pub fn has_neural_bases(&self) -> bool {
        self.neural_bases().next().is_some()
    }

    pub fn neural_bases(&self) -> impl Iterator<Item = &NeuralBasis> {
        self.terms
            .iter()
            .flat_map(|t| t.bases.iter())
            .filter_map(BasisFamily::as_neural)
    }

    /// True when every neural basis carries LoRA adapters.
    pub fn all_adapted(&self) -> bool {
        self.has_neural_bases() && self.neural_bases().all(NeuralBasis::has_adapters)
    }

    /// Spec that would build a fresh model of the same structure. The neural
    /// architecture comes from the first neural basis.
    pub fn spec(&self) -> ModelSpec {
        let first = &self.terms[0];
        let arch = self
            .neural_bases()
            .next()
            .map(|n| BasisArch {
                depth: n.depth(),
                width: n.layers()[0].out_width(),
                omega_first: n.omega_first(),
                omega_hidden: n.omega_hidden(),
            })
            .unwrap_or_else(|| BasisArch::new(2, 1));
        ModelSpec {
            terms: self.terms.len(),
            core_shape: first.ranks().to_vec(),
            kinds: first.bases.iter().map(BasisFamily::kind).collect(),
            arch,
        }
    }

    /// SHA-256 over every neural base weight and bias (adapters excluded).
    pub fn neural_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for b in self.neural_bases() {
            for layer in b.layers() {
                hash_f64s(&mut hasher, layer.weight.data());
                hash_f64s(&mut hasher, &layer.bias);
            }
        }
        hex::encode(hasher.finalize())
    }

    /// Attaches LoRA adapters of the given rank to every neural basis.
    pub fn attach_lora(&self, rank: usize, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, Stream::Lora);
        let mut out = self.clone();
        for t in &mut out.terms {
            for b in &mut t.bases {
                if let BasisFamily::Neural(n) = b {
                    *n = n.attach_lora(rank, &mut rng)?;
                }
            }
        }
        Ok(out)
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.mode_count() {
            return Err(Error::invalid(format!(
                "coordinate has {} entries, model has {} modes",
                x.len(),
                self.mode_count()
            )));
        }
        Ok(())
    }

    pub fn eval_point(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x)?;
        let parts: Vec<f64> = self.terms.iter().map(|t| t.eval_point(x)).collect();
        Ok(canonical_scalar_sum(parts))
    }

    /// Batched point evaluation; entry `m` equals `eval_point(&xs[m])`.
    pub fn eval_points(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        for x in xs {
            self.check_arity(x)?;
        }
        let columns = coordinate_columns(xs, self.mode_count());
        let per_term: Vec<Vec<f64>> = self
            .terms
            .iter()
            .map(|t| {
                let factors = point_factors(t, &columns);
                point_values(t, &factors)
            })
            .collect();
        Ok((0..xs.len())
            .map(|m| canonical_scalar_sum(per_term.iter().map(|v| v[m]).collect()))
            .collect())
    }

    fn grid_factors(term: &BlockTerm, shape: &[usize]) -> Vec<DenseTensor> {
        term.bases
            .iter()
            .zip(shape)
            .map(|(b, &d)| b.evaluate_batch(&grid_coordinates(d)))
            .collect()
    }

    /// Full reconstruction on a meshgrid of the given shape.
    pub fn eval_grid(&self, grid_shape: &[usize]) -> Result<DenseTensor> {
        check_grid(self.mode_count(), grid_shape)?;
        let fields: Vec<DenseTensor> = self
            .terms
            .iter()
            .map(|t| t.field_from_factors(&Self::grid_factors(t, grid_shape)))
            .collect();
        Ok(canonical_tensor_sum(fields))
    }

    /// Reconstruction of term `j` (zero-based) alone.
    pub fn block_term_field(&self, j: usize, grid_shape: &[usize]) -> Result<DenseTensor> {
        check_grid(self.mode_count(), grid_shape)?;
        let term = self.terms.get(j).ok_or_else(|| {
            Error::invalid(format!(
                "term index {j} out of range for {} terms",
                self.terms.len()
            ))
        })?;
        Ok(term.field_from_factors(&Self::grid_factors(term, grid_shape)))
    }

    /// Squared-error loss over the observed entries and its gradient with
    /// respect to every parameter in `scope`.
    pub fn loss_and_gradients(
        &self,
        obs: &ObservationSet,
        scope: TrainScope,
    ) -> Result<LossAndGradients> {
        if obs.mode_count() != self.mode_count() {
            return Err(Error::invalid(format!(
                "observations have {} modes, model has {}",
                obs.mode_count(),
                self.mode_count()
            )));
        }
        match obs {
            ObservationSet::Grid { values, mask } => {
                if values.shape() != mask.shape() {
                    return Err(Error::invalid("values and mask shapes differ"));
                }
                self.grid_loss(values, mask.bits(), scope)
            }
            ObservationSet::Points {
                coordinates,
                values,
            } => self.points_loss(coordinates, values, scope),
        }
    }

    fn grid_loss(&self, y: &DenseTensor, mask: &[bool], scope: TrainScope) -> Result<LossAndGradients> {
        let shape = y.shape();
        let coords: Vec<Vec<f64>> = shape.iter().map(|&d| grid_coordinates(d)).collect();
        let want_bases = scope == TrainScope::Full;

        // Forward: factor matrices (with caches for neural bases) and fields.
        let mut caches = Vec::with_capacity(self.terms.len());
        let mut factors = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut tc = Vec::with_capacity(t.bases.len());
            let mut tf = Vec::with_capacity(t.bases.len());
            for (b, xs) in t.bases.iter().zip(&coords) {
                match b {
                    BasisFamily::Neural(n) if want_bases => {
                        let c = n.forward_cached(xs);
                        tf.push(c.output_tensor(n.output_rank()));
                        tc.push(Some(c));
                    }
                    _ => {
                        tf.push(b.evaluate_batch(xs));
                        tc.push(None);
                    }
                }
            }
            caches.push(tc);
            factors.push(tf);
        }
        let fields: Vec<DenseTensor> = self
            .terms
            .iter()
            .zip(&factors)
            .map(|(t, f)| t.field_from_factors(f))
            .collect();
        let x = canonical_tensor_sum(fields);

        // Residual on the observed entries; the loss gradient is 2 * residual.
        let mut loss = 0.0;
        let mut g = DenseTensor::zeros(shape);
        for (((gv, &xv), &yv), &m) in g.data_mut().iter_mut().zip(x.data()).zip(y.data()).zip(mask) {
            if m {
                let e = xv - yv;
                loss += e * e;
                *gv = 2.0 * e;
            }
        }

        let mut slots = Vec::new();
        for ((t, tf), tc) in self.terms.iter().zip(&factors).zip(&caches) {
            let n = tf.len();
            let needs_factor_grad: Vec<bool> = tc.iter().map(Option::is_some).collect();
            // Z_i = G x_{k != i} F_k^T, computed for mode 0 always (core gradient)
            // and for every mode whose basis is trained.
            let mut dfactors: Vec<Option<DenseTensor>> = vec![None; n];
            let mut core_grad = None;
            for i in 0..n {
                if i != 0 && !needs_factor_grad[i] {
                    continue;
                }
                let z = contract_except_t(&g, tf, i);
                if i == 0 {
                    core_grad = Some(z.mode_product_t(&tf[0], 0)?);
                }
                if needs_factor_grad[i] {
                    dfactors[i] = Some(z.mode_gram(&t.core, i)?);
                }
            }
            slots.push(core_grad.expect("core gradient").into_data());
            for (b, (cache, df)) in t.bases.iter().zip(tc.iter().zip(dfactors)) {
                if let (BasisFamily::Neural(nb), Some(cache), Some(df)) = (b, cache, df) {
                    slots.extend(nb.backward_cached(cache, &df)?.into_trainable());
                }
            }
        }
        Ok(LossAndGradients {
            loss,
            grads: GradientBundle { slots },
        })
    }

    fn points_loss(
        &self,
        coords: &[Vec<f64>],
        y: &[f64],
        scope: TrainScope,
    ) -> Result<LossAndGradients> {
        if coords.len() != y.len() {
            return Err(Error::invalid("coordinate and value counts differ"));
        }
        let n = self.mode_count();
        let columns = coordinate_columns(coords, n);
        let want_bases = scope == TrainScope::Full;
        let mut caches = Vec::with_capacity(self.terms.len());
        let mut factors = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut tc = Vec::with_capacity(n);
            let mut tf = Vec::with_capacity(n);
            for (b, xs) in t.bases.iter().zip(&columns) {
                match b {
                    BasisFamily::Neural(nb) if want_bases => {
                        let c = nb.forward_cached(xs);
                        tf.push(c.output_tensor(nb.output_rank()));
                        tc.push(Some(c));
                    }
                    _ => {
                        tf.push(b.evaluate_batch(xs));
                        tc.push(None);
                    }
                }
            }
            caches.push(tc);
            factors.push(tf);
        }
        let per_term: Vec<Vec<f64>> = self
            .terms
            .iter()
            .zip(&factors)
            .map(|(t, f)| point_values(t, f))
            .collect();
        let mut loss = 0.0;
        let resid: Vec<f64> = (0..y.len())
            .map(|m| {
                let pred = canonical_scalar_sum(per_term.iter().map(|v| v[m]).collect());
                let e = pred - y[m];
                loss += e * e;
                2.0 * e
            })
            .collect();

        let mut slots = Vec::new();
        for ((t, tf), tc) in self.terms.iter().zip(&factors).zip(&caches) {
            let ranks = t.core.shape();
            let mut dcore = DenseTensor::zeros(ranks);
            let mut dfactors: Vec<Option<DenseTensor>> = tc
                .iter()
                .zip(ranks)
                .map(|(c, &r)| c.as_ref().map(|_| DenseTensor::zeros(&[y.len(), r])))
                .collect();
            for (m, &gm) in resid.iter().enumerate() {
                if gm == 0.0 {
                    continue;
                }
                let rows: Vec<&[f64]> = tf
                    .iter()
                    .zip(ranks)
                    .map(|(f, &r)| &f.data()[m * r..(m + 1) * r])
                    .collect();
                outer_accumulate(&mut dcore, &rows, gm);
                for (i, df) in dfactors.iter_mut().enumerate() {
                    if let Some(df) = df {
                        let partial = contract_except_vec(&t.core, &rows, i);
                        let r = ranks[i];
                        for (d, p) in df.data_mut()[m * r..(m + 1) * r].iter_mut().zip(partial) {
                            *d = gm * p;
                        }
                    }
                }
            }
            slots.push(dcore.into_data());
            for (b, (cache, df)) in t.bases.iter().zip(tc.iter().zip(dfactors)) {
                if let (BasisFamily::Neural(nb), Some(cache), Some(df)) = (b, cache, df) {
                    slots.extend(nb.backward_cached(cache, &df)?.into_trainable());
                }
            }
        }
        Ok(LossAndGradients {
            loss,
            grads: GradientBundle { slots },
        })
    }

    /// Mutable parameter views in the order used by [`GradientBundle`]:
    /// per term, the core followed by each trained basis' parameters.
    pub fn trainable_slices_mut(&mut self, scope: TrainScope) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for t in &mut self.terms {
            out.push(t.core.data_mut());
            if scope == TrainScope::Full {
                for b in &mut t.bases {
                    if let BasisFamily::Neural(n) = b {
                        out.extend(n.trainable_slices_mut());
                    }
                }
            }
        }
        out
    }
}

/// True when every rank of every term equals one (CP special case).
pub fn reduce_check_cp(m: &BlockTermModel) -> bool {
    m.terms.iter().all(|t| t.ranks().iter().all(|&r| r == 1))
}

/// True when the model has a single block term (Tucker special case).
pub fn reduce_check_tucker(m: &BlockTermModel) -> bool {
    m.terms.len() == 1
}

/// Normalized meshgrid coordinates of a mode of size `d`: `i / (d - 1)`, or
/// `[0]` when `d == 1`.
pub fn grid_coordinates(d: usize) -> Vec<f64> {
    if d <= 1 {
        return vec![0.0; d];
    }
    let denom = (d - 1) as f64;
    (0..d).map(|i| i as f64 / denom).collect()
}

fn check_grid(modes: usize, shape: &[usize]) -> Result<()> {
    if shape.len() != modes {
        return Err(Error::invalid(format!(
            "grid shape {shape:?} has {} modes, model has {modes}",
            shape.len()
        )));
    }
    if shape.contains(&0) {
        return Err(Error::invalid(format!("grid shape {shape:?} has an empty mode")));
    }
    Ok(())
}

/// Sums term contributions in an order fixed by their values, so the result
/// does not depend on the order of the term list.
fn canonical_tensor_sum(mut fields: Vec<DenseTensor>) -> DenseTensor {
    fields.sort_by(|a, b| {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let mut iter = fields.into_iter();
    let mut acc = iter.next().expect("at least one term");
    for f in iter {
        acc.add_assign(&f).expect("fields share the grid shape");
    }
    acc
}

fn canonical_scalar_sum(mut parts: Vec<f64>) -> f64 {
    parts.sort_by(f64::total_cmp);
    parts.into_iter().sum()
}

/// `t x_k F_k^T` over all modes `k != skip`, largest reductions first.
fn contract_except_t(t: &DenseTensor, factors: &[DenseTensor], skip: usize) -> DenseTensor {
    let mut order: Vec<usize> = (0..factors.len()).filter(|&k| k != skip).collect();
    // shrink the most first: ratio D_k / R_k, ties broken by mode index
    order.sort_by(|&a, &b| {
        let ra = factors[a].rows() * factors[b].cols();
        let rb = factors[b].rows() * factors[a].cols();
        rb.cmp(&ra).then(a.cmp(&b))
    });
    let mut out = t.clone();
    for k in order {
        out = out.mode_product_t(&factors[k], k).expect("factor matches tensor");
    }
    out
}

fn coordinate_columns(coords: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| coords.iter().map(|c| c[i]).collect()).collect()
}

fn point_factors(t: &BlockTerm, columns: &[Vec<f64>]) -> Vec<DenseTensor> {
    t.bases
        .iter()
        .zip(columns)
        .map(|(b, xs)| b.evaluate_batch(xs))
        .collect()
}

fn point_values(t: &BlockTerm, factors: &[DenseTensor]) -> Vec<f64> {
    let ranks = t.core.shape();
    let m = factors[0].rows();
    (0..m)
        .map(|p| {
            let rows: Vec<&[f64]> = factors
                .iter()
                .zip(ranks)
                .map(|(f, &r)| &f.data()[p * r..(p + 1) * r])
                .collect();
            contract_all(&t.core, &rows)
        })
        .collect()
}

/// Contracts the trailing mode of a row-major buffer with `v`.
fn contract_last(data: &[f64], v: &[f64]) -> Vec<f64> {
    data.chunks_exact(v.len())
        .map(|c| c.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Full contraction of `core` with one vector per mode.
pub(crate) fn contract_all(core: &DenseTensor, vecs: &[&[f64]]) -> f64 {
    let mut cur = core.data().to_vec();
    for v in vecs.iter().rev() {
        cur = contract_last(&cur, v);
    }
    cur[0]
}

/// Contraction of `core` with every vector except mode `skip`; returns a
/// vector of length `R_skip`.
fn contract_except_vec(core: &DenseTensor, vecs: &[&[f64]], skip: usize) -> Vec<f64> {
    let n = vecs.len();
    let mut cur = core.data().to_vec();
    // trailing modes after `skip` contract as the last mode
    for k in (skip + 1..n).rev() {
        cur = contract_last(&cur, vecs[k]);
    }
    // leading modes: cur is (R_0 .. R_skip) row-major; contract the first mode
    let r_skip = core.shape()[skip];
    for v in vecs.iter().take(skip) {
        let stride = cur.len() / v.len();
        let mut next = vec![0.0; stride];
        for (a, chunk) in v.iter().zip(cur.chunks_exact(stride)) {
            for (o, c) in next.iter_mut().zip(chunk) {
                *o += a * c;
            }
        }
        cur = next;
    }
    debug_assert_eq!(cur.len(), r_skip);
    cur
}

/// `acc += scale * (v_0 ⊗ v_1 ⊗ ... ⊗ v_{n-1})`.
fn outer_accumulate(acc: &mut DenseTensor, vecs: &[&[f64]], scale: f64) {
    let mut outer = vec![scale];
    for v in vecs {
        let mut next = Vec::with_capacity(outer.len() * v.len());
        for &o in &outer {
            next.extend(v.iter().map(|&x| o * x));
        }
        outer = next;
    }
    for (a, o) in acc.data_mut().iter_mut().zip(outer) {
        *a += o;
    }
}

/// Centered 2-D DFT magnitude of a matrix (zero frequency at index `(D/2)`).
pub fn spectrum_magnitude(slice: &DenseTensor) -> Result<DenseTensor> {
    if slice.ndim() != 2 {
        return Err(Error::invalid(format!(
            "spectrum needs a 2-mode slice, got shape {:?}",
            slice.shape()
        )));
    }
    let (rows, cols) = (slice.rows(), slice.cols());
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = slice.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(cols);
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(rows);
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    let mut out = DenseTensor::zeros(&[rows, cols]);
    for r in 0..rows {
        for c in 0..cols {
            let (sr, sc) = ((r + rows / 2) % rows, (c + cols / 2) % cols);
            out.data_mut()[sr * cols + sc] = buf[r * cols + c].norm();
        }
    }
    Ok(out)
}

/// Log-scaled centered spectrum `log(1 + |F|)` of a matrix.
pub fn spectrum2d(slice: &DenseTensor) -> Result<DenseTensor> {
    Ok(spectrum_magnitude(slice)?.map(f64::ln_1p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::{DenseLayer, NeuralBasis};

    fn scalar_basis(value: f64) -> BasisFamily {
        // depth-1 network with zero weight: constant output `value`
        BasisFamily::Neural(
            NeuralBasis::from_layers(
                vec![DenseLayer::new(DenseTensor::matrix(1, 1, vec![0.0]).unwrap(), vec![value]).unwrap()],
                30.0,
                1.0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn zero_cores_give_zero() {
        let mut m = BlockTermModel::init(&ModelSpec::neural(1, vec![2, 3], 2, 4), 1).unwrap();
        m.terms_mut()[0].core_mut().data_mut().fill(0.0);
        assert_eq!(m.eval_point(&[0.2, 0.9]).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_product() {
        let core = DenseTensor::new(vec![1, 1], vec![1.5]).unwrap();
        let term = BlockTerm::new(core, vec![scalar_basis(2.0), scalar_basis(-3.0)]).unwrap();
        let m = BlockTermModel::new(vec![term]).unwrap();
        assert_eq!(m.eval_point(&[0.4, 0.1]).unwrap(), 1.5 * 2.0 * -3.0);
        assert!(m.eval_point(&[0.4]).is_err());
    }

    #[test]
    fn single_entry_loss_matches_chain_rule() {
        let core = DenseTensor::new(vec![1, 1], vec![1.5]).unwrap();
        let term = BlockTerm::new(core, vec![scalar_basis(2.0), scalar_basis(-3.0)]).unwrap();
        let m = BlockTermModel::new(vec![term]).unwrap();
        let obs = ObservationSet::points(vec![vec![0.5, 0.5]], vec![1.0]).unwrap();
        let lg = m.loss_and_gradients(&obs, TrainScope::CoresOnly).unwrap();
        let pred = 1.5 * 2.0 * -3.0;
        assert_eq!(lg.loss, (pred - 1.0) * (pred - 1.0));
        assert_eq!(lg.grads.slots[0], vec![2.0 * (pred - 1.0) * 2.0 * -3.0]);
    }

    #[test]
    fn structure_checks() {
        let cp = BlockTermModel::init(&ModelSpec::neural(3, vec![1, 1, 1], 2, 4), 0).unwrap();
        assert!(reduce_check_cp(&cp) && !reduce_check_tucker(&cp));
        let tk = BlockTermModel::init(&ModelSpec::neural(1, vec![3, 3, 2], 2, 4), 0).unwrap();
        assert!(!reduce_check_cp(&tk) && reduce_check_tucker(&tk));
        let both = BlockTermModel::init(&ModelSpec::neural(1, vec![1, 1, 1], 2, 4), 0).unwrap();
        assert!(reduce_check_cp(&both) && reduce_check_tucker(&both));
    }

    #[test]
    fn grid_coordinate_rule() {
        assert_eq!(grid_coordinates(1), vec![0.0]);
        assert_eq!(grid_coordinates(3), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn degenerate_grid_equals_origin_point() {
        let m = BlockTermModel::init(&ModelSpec::neural(2, vec![2, 2, 2], 3, 8), 4).unwrap();
        let g = m.eval_grid(&[1, 1, 1]).unwrap();
        assert_eq!(g.data()[0], m.eval_point(&[0.0, 0.0, 0.0]).unwrap());
        assert!(m.eval_grid(&[1, 0, 1]).is_err());
        assert!(m.eval_grid(&[2, 2]).is_err());
    }

    #[test]
    fn term_index_out_of_range() {
        let m = BlockTermModel::init(&ModelSpec::neural(2, vec![2, 2], 2, 4), 4).unwrap();
        assert!(m.block_term_field(2, &[3, 3]).is_err());
        assert_eq!(m.block_term_field(1, &[3, 3]).unwrap().shape(), &[3, 3]);
    }

    #[test]
    fn mismatched_ranks_rejected() {
        let core = DenseTensor::zeros(&[2, 2]);
        assert!(BlockTerm::new(core.clone(), vec![BasisFamily::fourier(2).unwrap()]).is_err());
        assert!(BlockTerm::new(
            core,
            vec![BasisFamily::fourier(2).unwrap(), BasisFamily::fourier(3).unwrap()]
        )
        .is_err());
        assert!(BlockTermModel::new(vec![]).is_err());
    }

    fn fd_check(m: &BlockTermModel, obs: &ObservationSet, scope: TrainScope) {
        let lg = m.loss_and_gradients(obs, scope).unwrap();
        let mut probe = m.clone();
        let sizes: Vec<usize> = probe.trainable_slices_mut(scope).iter().map(|s| s.len()).collect();
        assert_eq!(sizes, lg.grads.slots.iter().map(Vec::len).collect::<Vec<_>>());
        let h = 1e-6;
        for (s, &len) in sizes.iter().enumerate() {
            for k in [0, len / 2, len - 1] {
                let orig = probe.trainable_slices_mut(scope)[s][k];
                probe.trainable_slices_mut(scope)[s][k] = orig + h;
                let up = probe.loss_and_gradients(obs, scope).unwrap().loss;
                probe.trainable_slices_mut(scope)[s][k] = orig - h;
                let down = probe.loss_and_gradients(obs, scope).unwrap().loss;
                probe.trainable_slices_mut(scope)[s][k] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = lg.grads.slots[s][k];
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "slot {s} index {k}: finite difference {fd} vs analytic {an}"
                );
            }
        }
    }

    fn grid_obs(shape: &[usize]) -> ObservationSet {
        let n: usize = shape.iter().product();
        let values = DenseTensor::from_fn(shape, |i| (i.iter().sum::<usize>() as f64 * 0.7).sin());
        let bits = (0..n).map(|i| i % 3 != 1).collect();
        ObservationSet::grid(values, crate::data::Mask::new(shape.to_vec(), bits).unwrap()).unwrap()
    }

    #[test]
    fn grid_gradients_match_finite_differences() {
        let m = BlockTermModel::init(&ModelSpec::neural(2, vec![2, 3, 2], 2, 6), 11).unwrap();
        let obs = grid_obs(&[4, 5, 3]);
        fd_check(&m, &obs, TrainScope::Full);
        fd_check(&m, &obs, TrainScope::CoresOnly);
        let mut adapted = m.attach_lora(2, 3).unwrap();
        // move adapters off zero so both factors get nonzero gradients
        for s in adapted.trainable_slices_mut(TrainScope::Full) {
            for (i, v) in s.iter_mut().enumerate() {
                *v += 0.01 * ((i % 5) as f64 - 2.0);
            }
        }
        fd_check(&adapted, &obs, TrainScope::Full);
    }

    #[test]
    fn point_gradients_match_finite_differences() {
        let m = BlockTermModel::init(&ModelSpec::neural(2, vec![2, 1, 3], 3, 5), 5).unwrap();
        let coords: Vec<Vec<f64>> = (0..7)
            .map(|i| vec![i as f64 / 7.0, (i * 3 % 7) as f64 / 7.0, (i % 3) as f64 * 0.5])
            .collect();
        let values = (0..7).map(|i| (i as f64).cos()).collect();
        let obs = ObservationSet::points(coords, values).unwrap();
        fd_check(&m, &obs, TrainScope::Full);
    }

    #[test]
    fn fixed_basis_gradients_match_finite_differences() {
        let spec = ModelSpec {
            terms: 2,
            core_shape: vec![3, 3, 2],
            kinds: vec![BasisKind::Fourier, BasisKind::Gaussian, BasisKind::Polynomial],
            arch: BasisArch::new(2, 4),
        };
        let m = BlockTermModel::init(&spec, 2).unwrap();
        fd_check(&m, &grid_obs(&[5, 4, 3]), TrainScope::Full);
    }

    #[test]
    fn grid_and_point_losses_agree() {
        let m = BlockTermModel::init(&ModelSpec::neural(2, vec![2, 2, 2], 2, 4), 8).unwrap();
        let obs = grid_obs(&[3, 4, 2]);
        let ObservationSet::Grid { values, mask } = &obs else { unreachable!() };
        let (mut coords, mut ys) = (Vec::new(), Vec::new());
        let gc: Vec<Vec<f64>> = values.shape().iter().map(|&d| grid_coordinates(d)).collect();
        for (flat, &b) in mask.bits().iter().enumerate() {
            if b {
                let idx = [flat / 8, (flat / 2) % 4, flat % 2];
                coords.push(vec![gc[0][idx[0]], gc[1][idx[1]], gc[2][idx[2]]]);
                ys.push(values.data()[flat]);
            }
        }
        let pts = ObservationSet::points(coords, ys).unwrap();
        let a = m.loss_and_gradients(&obs, TrainScope::Full).unwrap();
        let b = m.loss_and_gradients(&pts, TrainScope::Full).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-10 * (1.0 + a.loss));
        for (x, y) in a.grads.slots.iter().flatten().zip(b.grads.slots.iter().flatten()) {
            assert!((x - y).abs() < 1e-8 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn spectrum_of_constant_is_a_single_bin() {
        let s = spectrum_magnitude(&DenseTensor::filled(&[4, 6], 2.0)).unwrap();
        for r in 0..4 {
            for c in 0..6 {
                let v = s.at(r, c);
                if (r, c) == (2, 3) {
                    assert!((v - 48.0).abs() < 1e-12);
                } else {
                    assert!(v.abs() < 1e-12);
                }
            }
        }
        assert!(spectrum2d(&DenseTensor::zeros(&[2, 2, 2])).is_err());
    }
}
