//! Univariate basis families behind one interface.
//!
//! Neural bases are trainable; polynomial, Fourier and Gaussian families are
//! fixed functions of the coordinate, so swapping the family inside a block
//! term leaves only the coefficient tensor to learn.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::NeuralBasis;
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisKind {
    Neural,
    Polynomial,
    Fourier,
    Gaussian,
}

impl BasisKind {
    pub const ALL: [BasisKind; 4] = [
        BasisKind::Polynomial,
        BasisKind::Fourier,
        BasisKind::Gaussian,
        BasisKind::Neural,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Neural => "neural",
            BasisKind::Polynomial => "polynomial",
            BasisKind::Fourier => "fourier",
            BasisKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for BasisKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "neural" => Ok(BasisKind::Neural),
            "polynomial" | "poly" => Ok(BasisKind::Polynomial),
            "fourier" => Ok(BasisKind::Fourier),
            "gaussian" => Ok(BasisKind::Gaussian),
            other => Err(Error::invalid(format!("unknown basis kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BasisFamily {
    Neural(NeuralBasis),
    /// Monomials `1, x, x^2, ...`.
    Polynomial { rank: usize },
    /// `1, cos 2πx, sin 2πx, cos 4πx, sin 4πx, ...` truncated to `rank`.
    Fourier { rank: usize },
    /// Radial bumps at `rank` equally spaced centers on `[0, 1]` with shared width.
    Gaussian { rank: usize, width: f64 },
}

impl BasisFamily {
    pub fn polynomial(rank: usize) -> Result<Self> {
        check_rank(rank)?;
        Ok(BasisFamily::Polynomial { rank })
    }

    pub fn fourier(rank: usize) -> Result<Self> {
        check_rank(rank)?;
        Ok(BasisFamily::Fourier { rank })
    }

    /// Gaussian family with width equal to the center spacing `1 / (rank - 1)`.
    pub fn gaussian(rank: usize) -> Result<Self> {
        if rank < 2 {
            return Err(Error::invalid("gaussian basis needs rank >= 2"));
        }
        Self::gaussian_with_width(rank, 1.0 / (rank - 1) as f64)
    }

    pub fn gaussian_with_width(rank: usize, width: f64) -> Result<Self> {
        check_rank(rank)?;
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::invalid("gaussian width must be positive"));
        }
        Ok(BasisFamily::Gaussian { rank, width })
    }

    pub fn kind(&self) -> BasisKind {
        match self {
            BasisFamily::Neural(_) => BasisKind::Neural,
            BasisFamily::Polynomial { .. } => BasisKind::Polynomial,
            BasisFamily::Fourier { .. } => BasisKind::Fourier,
            BasisFamily::Gaussian { .. } => BasisKind::Gaussian,
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            BasisFamily::Neural(n) => n.output_rank(),
            BasisFamily::Polynomial { rank }
            | BasisFamily::Fourier { rank }
            | BasisFamily::Gaussian { rank, .. } => *rank,
        }
    }

    pub fn is_trainable(&self) -> bool {
        matches!(self, BasisFamily::Neural(_))
    }

    pub fn as_neural(&self) -> Option<&NeuralBasis> {
        match self {
            BasisFamily::Neural(n) => Some(n),
            _ => None,
        }
    }

    pub fn as_neural_mut(&mut self) -> Option<&mut NeuralBasis> {
        match self {
            BasisFamily::Neural(n) => Some(n),
            _ => None,
        }
    }

    pub fn num_params(&self) -> usize {
        self.as_neural().map(NeuralBasis::num_params).unwrap_or(0)
    }

    pub fn evaluate(&self, x: f64) -> Vec<f64> {
        match self {
            BasisFamily::Neural(n) => n.forward(x),
            _ => {
                let mut out = vec![0.0; self.rank()];
                self.fill_fixed(x, &mut out);
                out
            }
        }
    }

    /// Evaluates at every coordinate, returning the `(K, rank)` factor matrix.
    pub fn evaluate_batch(&self, xs: &[f64]) -> DenseTensor {
        match self {
            BasisFamily::Neural(n) => n.forward_batch(xs),
            _ => {
                let r = self.rank();
                let mut data = vec![0.0; xs.len() * r];
                for (row, &x) in data.chunks_exact_mut(r).zip(xs) {
                    self.fill_fixed(x, row);
                }
                DenseTensor::new(vec![xs.len(), r], data).expect("factor shape")
            }
        }
    }

    fn fill_fixed(&self, x: f64, out: &mut [f64]) {
        match *self {
            BasisFamily::Polynomial { .. } => {
                let mut p = 1.0;
                for v in out.iter_mut() {
                    *v = p;
                    p *= x;
                }
            }
            BasisFamily::Fourier { .. } => {
                for (k, v) in out.iter_mut().enumerate() {
                    *v = if k == 0 {
                        1.0
                    } else {
                        let freq = ((k + 1) / 2) as f64;
                        let arg = 2.0 * PI * freq * x;
                        if k % 2 == 1 {
                            arg.cos()
                        } else {
                            arg.sin()
                        }
                    };
                }
            }
            BasisFamily::Gaussian { rank, width } => {
                for (k, v) in out.iter_mut().enumerate() {
                    let c = if rank == 1 {
                        0.5
                    } else {
                        k as f64 / (rank - 1) as f64
                    };
                    *v = (-(x - c).powi(2) / (2.0 * width * width)).exp();
                }
            }
            BasisFamily::Neural(_) => unreachable!("neural bases are evaluated by the network"),
        }
    }
}

fn check_rank(rank: usize) -> Result<()> {
    if rank == 0 {
        return Err(Error::invalid("basis rank must be positive"));
    }
    Ok(())
}
