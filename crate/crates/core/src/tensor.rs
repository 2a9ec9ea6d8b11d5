//! Dense N-dimensional tensors.
//!
//! Storage is row-major: the last mode varies fastest. Every unfolding derives
//! its column order from that layout, so `unfold(t, m)` places entry
//! `t[i_0, .., i_{N-1}]` at row `i_m` and at the column obtained by flattening
//! the remaining indices row-major in their original mode order.
//!
//! Modes are zero-based throughout the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor shape must have at least one mode"));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::invalid(format!("mode {pos} has size 0")));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::invalid("tensor size overflows usize"))
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if data.len() != n {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?} ({} entries)",
                data.len(),
                shape,
                n
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    /// All-zero tensor. Panics on an empty shape or a zero-sized mode.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = check_shape(shape).expect("invalid tensor shape");
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    /// Builds a tensor by evaluating `f` at every multi-index in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            increment_index(&mut idx, shape);
        }
        t
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i[0] == i[1] { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(self.strides())
            .map(|(&i, s)| i * s)
            .sum()
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Element (r, c) of a 2-mode tensor.
    pub fn at(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.ndim(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add_assign(&mut self, other: &DenseTensor) -> Result<()> {
        self.same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        self.same_shape(other)?;
        Ok(DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    fn same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<DenseTensor> {
        DenseTensor::new(shape, self.data)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.ndim() {
            return Err(Error::invalid(format!(
                "mode {mode} out of range for a {}-mode tensor",
                self.ndim()
            )));
        }
        Ok(())
    }

    /// (outer, size, inner) block decomposition around `mode`.
    fn split_at_mode(&self, mode: usize) -> (usize, usize, usize) {
        let outer = self.shape[..mode].iter().product();
        let inner = self.shape[mode + 1..].iter().product();
        (outer, self.shape[mode], inner)
    }

    /// Mode-`mode` unfolding into a `(D_mode, prod_{j != mode} D_j)` matrix.
    pub fn unfold(&self, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        let (outer, size, inner) = self.split_at_mode(mode);
        let cols = outer * inner;
        let mut out = vec![0.0; self.data.len()];
        for o in 0..outer {
            for i in 0..size {
                let src = &self.data[(o * size + i) * inner..(o * size + i + 1) * inner];
                let dst = i * cols + o * inner;
                out[dst..dst + inner].copy_from_slice(src);
            }
        }
        DenseTensor::new(vec![size, cols], out)
    }

    /// Inverse of [`DenseTensor::unfold`] for the same mode.
    pub fn fold(matrix: &DenseTensor, mode: usize, target_shape: &[usize]) -> Result<DenseTensor> {
        let total = check_shape(target_shape)?;
        if mode >= target_shape.len() {
            return Err(Error::invalid(format!(
                "mode {mode} out of range for target shape {target_shape:?}"
            )));
        }
        let size = target_shape[mode];
        if matrix.ndim() != 2 || matrix.shape[0] != size || matrix.shape[1] * size != total {
            return Err(Error::invalid(format!(
                "cannot fold a {:?} matrix along mode {mode} into {target_shape:?}",
                matrix.shape
            )));
        }
        let outer: usize = target_shape[..mode].iter().product();
        let inner: usize = target_shape[mode + 1..].iter().product();
        let cols = outer * inner;
        let mut out = vec![0.0; total];
        for o in 0..outer {
            for i in 0..size {
                let src = i * cols + o * inner;
                let dst = (o * size + i) * inner;
                out[dst..dst + inner].copy_from_slice(&matrix.data[src..src + inner]);
            }
        }
        DenseTensor::new(target_shape.to_vec(), out)
    }

    /// Mode product `self x_mode a` with `a` of shape `(P, D_mode)`:
    /// `fold_mode(a * unfold_mode(self))`, computed without materializing the unfolding.
    pub fn mode_product(&self, a: &DenseTensor, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        if a.ndim() != 2 || a.shape[1] != self.shape[mode] {
            return Err(Error::invalid(format!(
                "mode-{mode} product needs a (P, {}) matrix, got {:?}",
                self.shape[mode], a.shape
            )));
        }
        Ok(self.mode_product_view(MatRef::row_major(&a.data, a.shape[0], a.shape[1]), mode))
    }

    /// Mode product with the transpose of `a` (shape `(D_mode, P)`).
    pub fn mode_product_t(&self, a: &DenseTensor, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        if a.ndim() != 2 || a.shape[0] != self.shape[mode] {
            return Err(Error::invalid(format!(
                "transposed mode-{mode} product needs a ({}, P) matrix, got {:?}",
                self.shape[mode], a.shape
            )));
        }
        Ok(self.mode_product_view(MatRef::row_major(&a.data, a.shape[0], a.shape[1]).t(), mode))
    }

    pub(crate) fn mode_product_view(&self, a: MatRef<'_>, mode: usize) -> DenseTensor {
        let (outer, size, inner) = self.split_at_mode(mode);
        debug_assert_eq!(a.cols, size);
        let p = a.rows;
        let mut shape = self.shape.clone();
        shape[mode] = p;
        let mut out = vec![0.0; outer * p * inner];
        if inner == 1 {
            // (outer x size) * a^T -> (outer x p)
            gemm(1.0, MatRef::row_major(&self.data, outer, size), a.t(), 0.0, &mut out);
        } else {
            for o in 0..outer {
                let block = &self.data[o * size * inner..(o + 1) * size * inner];
                gemm(
                    1.0,
                    a,
                    MatRef::row_major(block, size, inner),
                    0.0,
                    &mut out[o * p * inner..(o + 1) * p * inner],
                );
            }
        }
        DenseTensor { shape, data: out }
    }

    /// `unfold(self, mode) * unfold(other, mode)^T` for tensors that agree on
    /// every mode except `mode`; result is `(self.D_mode, other.D_mode)`.
    pub fn mode_gram(&self, other: &DenseTensor, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        let compatible = self.ndim() == other.ndim()
            && self
                .shape
                .iter()
                .zip(&other.shape)
                .enumerate()
                .all(|(k, (a, b))| k == mode || a == b);
        if !compatible {
            return Err(Error::invalid(format!(
                "mode-{mode} gram needs matching shapes off that mode: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let (outer, p, inner) = self.split_at_mode(mode);
        let q = other.shape[mode];
        let mut out = vec![0.0; p * q];
        for o in 0..outer {
            let a = &self.data[o * p * inner..(o + 1) * p * inner];
            let b = &other.data[o * q * inner..(o + 1) * q * inner];
            gemm(
                1.0,
                MatRef::row_major(a, p, inner),
                MatRef::row_major(b, q, inner).t(),
                1.0,
                &mut out,
            );
        }
        DenseTensor::new(vec![p, q], out)
    }

    /// Matrix product of two 2-mode tensors.
    pub fn matmul(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.ndim() != 2 || other.ndim() != 2 || self.shape[1] != other.shape[0] {
            return Err(Error::invalid(format!(
                "matmul shape mismatch: {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let (m, n) = (self.shape[0], other.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(
            1.0,
            MatRef::row_major(&self.data, m, self.shape[1]),
            MatRef::row_major(&other.data, other.shape[0], n),
            0.0,
            &mut out,
        );
        DenseTensor::new(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<DenseTensor> {
        if self.ndim() != 2 {
            return Err(Error::invalid("transpose requires a 2-mode tensor"));
        }
        let (r, c) = (self.shape[0], self.shape[1]);
        Ok(DenseTensor::from_fn(&[c, r], |i| self.data[i[1] * c + i[0]]))
    }
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * shape[k + 1];
    }
    strides
}

/// Advances a row-major multi-index; wraps to all zeros after the last entry.
pub(crate) fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}
