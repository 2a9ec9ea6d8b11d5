//! Block-term tensor approximation with learned univariate neural bases.
//!
//! A model is a sum of block terms; each term contracts a small coefficient
//! tensor with one basis function per mode. The bases can be small sine
//! networks (trained jointly with the cores) or fixed polynomial, Fourier and
//! Gaussian families. The same model fits data on a meshgrid (completion,
//! inpainting) and scattered samples (point clouds).

pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod metrics;
mod linalg;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tasks;
pub mod tensor;

pub use basis::{BasisFamily, BasisKind};
pub use data::{Mask, ObservationSet};
pub use error::{Error, Result};
pub use mlp::{BasisArch, NeuralBasis};
pub use model::{BlockTerm, BlockTermModel, ModelSpec, TrainScope};
pub use tensor::DenseTensor;
