//! Observation containers shared by the model, the optimizer and the tasks.

use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

/// Dense boolean mask; `true` marks an observed entry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    shape: Vec<usize>,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, bits: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || n != bits.len() {
            return Err(Error::invalid(format!(
                "mask of {} entries does not fit shape {:?}",
                bits.len(),
                shape
            )));
        }
        Ok(Mask { shape, bits })
    }

    pub fn full(shape: &[usize], value: bool) -> Self {
        let n = shape.iter().product();
        Mask {
            shape: shape.to_vec(),
            bits: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn observed(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn missing(&self) -> usize {
        self.len() - self.observed()
    }

    pub fn complement(&self) -> Mask {
        Mask {
            shape: self.shape.clone(),
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.shape != other.shape {
            return Err(Error::invalid("mask shapes differ"));
        }
        Ok(Mask {
            shape: self.shape.clone(),
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a && *b).collect(),
        })
    }

    /// 0/1 tensor view, used by the tensor container format.
    pub fn to_tensor(&self) -> DenseTensor {
        DenseTensor::new(
            self.shape.clone(),
            self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask shape is valid")
    }

    /// Inverse of [`Mask::to_tensor`]; every entry must be exactly 0 or 1.
    pub fn from_tensor(t: &DenseTensor) -> Result<Self> {
        let bits = t
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v == 1.0 {
                    Ok(true)
                } else if v == 0.0 {
                    Ok(false)
                } else {
                    Err(Error::invalid(format!("mask entry {i} is {v}, expected 0 or 1")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Mask::new(t.shape().to_vec(), bits)
    }
}

/// Training data for a block-term model.
#[derive(Clone, Debug, PartialEq)]
pub enum ObservationSet {
    /// Values on a meshgrid plus the observed-entry mask.
    Grid { values: DenseTensor, mask: Mask },
    /// Off-grid samples: one coordinate vector per value.
    Points {
        coordinates: Vec<Vec<f64>>,
        values: Vec<f64>,
    },
}

impl ObservationSet {
    pub fn grid(values: DenseTensor, mask: Mask) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(Error::invalid(format!(
                "values shape {:?} does not match mask shape {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        if mask.observed() == 0 {
            return Err(Error::invalid("observation mask has no observed entries"));
        }
        Ok(ObservationSet::Grid { values, mask })
    }

    pub fn points(coordinates: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if coordinates.is_empty() {
            return Err(Error::invalid("point observation set is empty"));
        }
        if coordinates.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} coordinates but {} values",
                coordinates.len(),
                values.len()
            )));
        }
        let arity = coordinates[0].len();
        if arity == 0 {
            return Err(Error::invalid("coordinates must have at least one dimension"));
        }
        for (i, c) in coordinates.iter().enumerate() {
            if c.len() != arity {
                return Err(Error::invalid(format!(
                    "point {i} has arity {} instead of {arity}",
                    c.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("point {i} has a non-finite coordinate")));
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite observed value"));
        }
        Ok(ObservationSet::Points { coordinates, values })
    }

    pub fn mode_count(&self) -> usize {
        match self {
            ObservationSet::Grid { values, .. } => values.ndim(),
            ObservationSet::Points { coordinates, .. } => coordinates[0].len(),
        }
    }

    pub fn observed_count(&self) -> usize {
        match self {
            ObservationSet::Grid { mask, .. } => mask.observed(),
            ObservationSet::Points { values, .. } => values.len(),
        }
    }
}
