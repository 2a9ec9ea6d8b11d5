//! Univariate neural basis functions.
//!
//! A [`NeuralBasis`] maps a scalar coordinate to an `R`-vector through a chain
//! of dense layers. Every layer except the last is followed by `sin(omega * z)`;
//! the last layer is affine. Gradients are derived by hand and checked against
//! finite differences in the test suite.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::rng::{substream, Stream};
use crate::tensor::DenseTensor;

/// Frequency applied inside the first sine activation.
pub const DEFAULT_OMEGA_FIRST: f64 = 30.0;
/// Frequency applied inside the remaining hidden sine activations.
pub const DEFAULT_OMEGA_HIDDEN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `(out, in)` matrix.
    pub weight: DenseTensor,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(weight: DenseTensor, bias: Vec<f64>) -> Result<Self> {
        if weight.ndim() != 2 || weight.rows() != bias.len() {
            return Err(Error::invalid(format!(
                "layer weight {:?} does not match bias length {}",
                weight.shape(),
                bias.len()
            )));
        }
        Ok(DenseLayer { weight, bias })
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }
}

/// Low-rank correction `a * b` added to a frozen layer weight.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `(out, r)`, zero at attachment.
    pub a: DenseTensor,
    /// `(r, in)`.
    pub b: DenseTensor,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn num_params(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// Architecture knobs shared by every neural basis in a model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisArch {
    /// Number of dense layers (`L + 1`), at least 2.
    pub depth: usize,
    /// Hidden width `h`.
    pub width: usize,
    pub omega_first: f64,
    pub omega_hidden: f64,
}

impl BasisArch {
    pub fn new(depth: usize, width: usize) -> Self {
        BasisArch {
            depth,
            width,
            omega_first: DEFAULT_OMEGA_FIRST,
            omega_hidden: DEFAULT_OMEGA_HIDDEN,
        }
    }

    /// Parameter count of one basis with this architecture and output rank.
    pub fn param_count(&self, rank: usize) -> usize {
        let h = self.width;
        let hidden = self.depth.saturating_sub(2);
        2 * h + hidden * (h * h + h) + rank * h + rank
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeuralBasis {
    layers: Vec<DenseLayer>,
    adapters: Option<Vec<LoraAdapter>>,
    omega_first: f64,
    omega_hidden: f64,
}

/// Gradients for one layer (weight, bias).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weight: DenseTensor,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterGradient {
    pub a: DenseTensor,
    pub b: DenseTensor,
}

/// Gradients of a [`NeuralBasis`], congruent with its parameters.
///
/// Base-layer gradients are identically zero whenever adapters are attached.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisGradients {
    pub layers: Vec<LayerGradient>,
    pub adapters: Option<Vec<AdapterGradient>>,
}

impl BasisGradients {
    /// Flattened gradients of the trainable parameters, in the same order as
    /// [`NeuralBasis::trainable_slices_mut`].
    pub fn into_trainable(self) -> Vec<Vec<f64>> {
        match self.adapters {
            Some(ad) => ad
                .into_iter()
                .flat_map(|g| [g.a.into_data(), g.b.into_data()])
                .collect(),
            None => self
                .layers
                .into_iter()
                .flat_map(|g| [g.weight.into_data(), g.bias])
                .collect(),
        }
    }
}

/// Per-layer activations retained for the backward pass.
pub(crate) struct ForwardCache {
    /// Input to each layer, `K x in_l`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every activated layer, `K x out_l`.
    pre: Vec<Vec<f64>>,
    /// Effective weights (base plus adapter correction).
    weights: Vec<DenseTensor>,
    output: Vec<f64>,
}

impl ForwardCache {
    /// The `(K, R)` output as a tensor.
    pub(crate) fn output_tensor(&self, rank: usize) -> DenseTensor {
        let k = self.inputs[0].len();
        DenseTensor::new(vec![k, rank], self.output.clone()).expect("forward output shape")
    }
}

impl NeuralBasis {
    /// Random initialization: first-layer weights uniform in `[-1, 1]`, later
    /// layers uniform in `[-sqrt(6/h)/omega_hidden, sqrt(6/h)/omega_hidden]`,
    /// zero biases.
    pub fn init<R: Rng + ?Sized>(arch: &BasisArch, rank: usize, rng: &mut R) -> Result<Self> {
        if arch.depth < 2 {
            return Err(Error::invalid(format!(
                "basis depth must be at least 2, got {}",
                arch.depth
            )));
        }
        if arch.width == 0 || rank == 0 {
            return Err(Error::invalid("basis width and rank must be positive"));
        }
        if !(arch.omega_first.is_finite() && arch.omega_hidden.is_finite() && arch.omega_hidden != 0.0) {
            return Err(Error::invalid("sine frequencies must be finite and nonzero"));
        }
        let h = arch.width;
        let mut layers = Vec::with_capacity(arch.depth);
        for l in 0..arch.depth {
            let fan_in = if l == 0 { 1 } else { h };
            let fan_out = if l + 1 == arch.depth { rank } else { h };
            let bound = if l == 0 {
                1.0
            } else {
                (6.0 / h as f64).sqrt() / arch.omega_hidden.abs()
            };
            let w: Vec<f64> = (0..fan_out * fan_in)
                .map(|_| rng.gen_range(-bound..=bound))
                .collect();
            layers.push(DenseLayer::new(
                DenseTensor::matrix(fan_out, fan_in, w)?,
                vec![0.0; fan_out],
            )?);
        }
        Ok(NeuralBasis {
            layers,
            adapters: None,
            omega_first: arch.omega_first,
            omega_hidden: arch.omega_hidden,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, omega_first: f64, omega_hidden: f64) -> Result<Self> {
        let b = NeuralBasis {
            layers,
            adapters: None,
            omega_first,
            omega_hidden,
        };
        b.validate()?;
        Ok(b)
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| Error::invalid("basis has no layers"))?;
        if first.in_width() != 1 {
            return Err(Error::invalid("first layer must take a scalar input"));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.weight.ndim() != 2 || layer.weight.rows() != layer.bias.len() {
                return Err(Error::invalid(format!("layer {l}: weight/bias mismatch")));
            }
            if l > 0 && self.layers[l - 1].out_width() != layer.in_width() {
                return Err(Error::invalid(format!("layer {l}: widths do not chain")));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("layer {l}: non-finite parameter")));
            }
        }
        if let Some(ad) = &self.adapters {
            if ad.len() != self.layers.len() {
                return Err(Error::invalid("adapter count does not match layer count"));
            }
            for (l, (a, layer)) in ad.iter().zip(&self.layers).enumerate() {
                if a.a.ndim() != 2
                    || a.b.ndim() != 2
                    || a.a.rows() != layer.out_width()
                    || a.b.cols() != layer.in_width()
                    || a.a.cols() != a.b.rows()
                {
                    return Err(Error::invalid(format!("adapter {l}: shape mismatch")));
                }
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn adapters(&self) -> Option<&[LoraAdapter]> {
        self.adapters.as_deref()
    }

    pub fn has_adapters(&self) -> bool {
        self.adapters.is_some()
    }

    pub fn output_rank(&self) -> usize {
        self.layers.last().map(|l| l.out_width()).unwrap_or(0)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn omega_first(&self) -> f64 {
        self.omega_first
    }

    pub fn omega_hidden(&self) -> f64 {
        self.omega_hidden
    }

    fn omega(&self, layer: usize) -> f64 {
        if layer == 0 {
            self.omega_first
        } else {
            self.omega_hidden
        }
    }

    /// Base parameters plus adapter parameters.
    pub fn num_params(&self) -> usize {
        let base: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        base + self.num_adapter_params()
    }

    pub fn num_adapter_params(&self) -> usize {
        self.adapters
            .as_ref()
            .map(|ad| ad.iter().map(LoraAdapter::num_params).sum())
            .unwrap_or(0)
    }

    /// Attaches a LoRA pair to every layer. Layer `l` receives rank
    /// `min(rank, out_l, in_l)`; `a` starts at zero so the output is unchanged.
    pub fn attach_lora<R: Rng + ?Sized>(&self, rank: usize, rng: &mut R) -> Result<Self> {
        let widest = self
            .layers
            .iter()
            .map(|l| l.in_width().min(l.out_width()))
            .max()
            .unwrap_or(0);
        if rank == 0 || rank > widest {
            return Err(Error::invalid(format!(
                "LoRA rank {rank} must lie in [1, {widest}]"
            )));
        }
        let adapters = self
            .layers
            .iter()
            .map(|layer| {
                let (out, inp) = (layer.out_width(), layer.in_width());
                let r = rank.min(out).min(inp);
                let bound = 1.0 / (inp as f64).sqrt();
                let b: Vec<f64> = (0..r * inp).map(|_| rng.gen_range(-bound..=bound)).collect();
                Ok(LoraAdapter {
                    a: DenseTensor::zeros(&[out, r]),
                    b: DenseTensor::matrix(r, inp, b)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = self.clone();
        out.adapters = Some(adapters);
        Ok(out)
    }

    /// Drops adapters, returning the untouched base network.
    pub fn without_adapters(&self) -> Self {
        let mut out = self.clone();
        out.adapters = None;
        out
    }

    fn effective_weight(&self, l: usize) -> DenseTensor {
        let w = &self.layers[l].weight;
        match &self.adapters {
            None => w.clone(),
            Some(ad) => {
                let a = &ad[l];
                let mut eff = w.clone();
                gemm(
                    1.0,
                    MatRef::row_major(a.a.data(), a.a.rows(), a.a.cols()),
                    MatRef::row_major(a.b.data(), a.b.rows(), a.b.cols()),
                    1.0,
                    eff.data_mut(),
                );
                eff
            }
        }
    }

    pub(crate) fn forward_cached(&self, xs: &[f64]) -> ForwardCache {
        let k = xs.len();
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut weights = Vec::with_capacity(n_layers);
        let mut h = xs.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let w = self.effective_weight(l);
            let (out, inp) = (layer.out_width(), layer.in_width());
            let mut z = vec![0.0; k * out];
            for row in z.chunks_exact_mut(out) {
                row.copy_from_slice(&layer.bias);
            }
            gemm(
                1.0,
                MatRef::row_major(&h, k, inp),
                MatRef::row_major(w.data(), out, inp).t(),
                1.0,
                &mut z,
            );
            weights.push(w);
            if l + 1 == n_layers {
                inputs.push(h);
                return ForwardCache {
                    inputs,
                    pre,
                    weights,
                    output: z,
                };
            }
            let omega = self.omega(l);
            let next: Vec<f64> = z.iter().map(|&v| (omega * v).sin()).collect();
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(z);
        }
        unreachable!("basis has at least one layer")
    }

    /// Evaluates the basis at one coordinate.
    pub fn forward(&self, x: f64) -> Vec<f64> {
        self.forward_cached(&[x]).output
    }

    /// Evaluates the basis at every coordinate; row `k` of the `(K, R)` result
    /// is `forward(xs[k])`.
    pub fn forward_batch(&self, xs: &[f64]) -> DenseTensor {
        assert!(!xs.is_empty(), "forward_batch needs at least one coordinate");
        let out = self.forward_cached(xs).output;
        DenseTensor::new(vec![xs.len(), self.output_rank()], out).expect("forward output shape")
    }

    /// Gradient of `sum_{k,r} upstream[k,r] * forward_batch(xs)[k,r]` with
    /// respect to every parameter.
    pub fn backward(&self, xs: &[f64], upstream: &DenseTensor) -> Result<BasisGradients> {
        let cache = self.forward_cached(xs);
        self.backward_cached(&cache, upstream)
    }

    pub(crate) fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &DenseTensor,
    ) -> Result<BasisGradients> {
        // the first layer takes scalars, so its input length is K
        let k = cache.inputs[0].len();
        let r = self.output_rank();
        if upstream.ndim() != 2 || upstream.rows() != k || upstream.cols() != r {
            return Err(Error::invalid(format!(
                "upstream gradient shape {:?} does not match ({k}, {r})",
                upstream.shape()
            )));
        }
        let n_layers = self.layers.len();
        let mut layer_grads: Vec<Option<LayerGradient>> = vec![None; n_layers];
        let mut adapter_grads: Vec<Option<AdapterGradient>> = vec![None; n_layers];
        let mut delta = upstream.data().to_vec();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (out, inp) = (layer.out_width(), layer.in_width());
            let h = &cache.inputs[l];
            let mut dw = vec![0.0; out * inp];
            gemm(
                1.0,
                MatRef::row_major(&delta, k, out).t(),
                MatRef::row_major(h, k, inp),
                0.0,
                &mut dw,
            );
            let dw = DenseTensor::matrix(out, inp, dw)?;
            match &self.adapters {
                Some(ad) => {
                    let a = &ad[l];
                    let ga = dw.matmul(&a.b.transpose()?)?;
                    let gb = a.a.transpose()?.matmul(&dw)?;
                    adapter_grads[l] = Some(AdapterGradient { a: ga, b: gb });
                    layer_grads[l] = Some(LayerGradient {
                        weight: DenseTensor::zeros(&[out, inp]),
                        bias: vec![0.0; out],
                    });
                }
                None => {
                    let mut db = vec![0.0; out];
                    for row in delta.chunks_exact(out) {
                        for (g, d) in db.iter_mut().zip(row) {
                            *g += d;
                        }
                    }
                    layer_grads[l] = Some(LayerGradient { weight: dw, bias: db });
                }
            }
            if l == 0 {
                break;
            }
            let mut dh = vec![0.0; k * inp];
            gemm(
                1.0,
                MatRef::row_major(&delta, k, out),
                MatRef::row_major(cache.weights[l].data(), out, inp),
                0.0,
                &mut dh,
            );
            let omega = self.omega(l - 1);
            for (d, &z) in dh.iter_mut().zip(&cache.pre[l - 1]) {
                *d *= omega * (omega * z).cos();
            }
            delta = dh;
        }
        Ok(BasisGradients {
            layers: layer_grads.into_iter().map(|g| g.expect("layer gradient")).collect(),
            adapters: self
                .adapters
                .as_ref()
                .map(|_| adapter_grads.into_iter().map(|g| g.expect("adapter gradient")).collect()),
        })
    }

    /// Mutable views of the trainable parameters: the adapters when attached,
    /// otherwise every base weight and bias. Order: per layer, weight then bias
    /// (or `a` then `b`).
    pub fn trainable_slices_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.adapters {
            Some(ad) => ad
                .iter_mut()
                .flat_map(|a| [a.a.data_mut(), a.b.data_mut()])
                .collect(),
            None => self
                .layers
                .iter_mut()
                .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
                .collect(),
        }
    }

    /// Mutable views of every base weight and bias regardless of adapters.
    pub fn base_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    /// Hex SHA-256 over the bit patterns of the base weights and biases.
    pub fn base_checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for layer in &self.layers {
            hash_f64s(&mut hasher, layer.weight.data());
            hash_f64s(&mut hasher, &layer.bias);
        }
        hex::encode(hasher.finalize())
    }

    /// Upper bound on the Lipschitz constant of `forward` in its input:
    /// product over layers of the weight Frobenius norms, times `omega` for
    /// every activated layer.
    pub fn lipschitz_bound(&self) -> f64 {
        (0..self.layers.len())
            .map(|l| {
                let w = self.effective_weight(l).frobenius_norm();
                if l + 1 == self.layers.len() {
                    w
                } else {
                    w * self.omega(l).abs()
                }
            })
            .product()
    }
}

pub(crate) fn hash_f64s(hasher: &mut Sha256, values: &[f64]) {
    for v in values {
        hasher.update(v.to_bits().to_le_bytes());
    }
}

/// Seeded convenience constructor for a single basis.
pub fn init_basis(depth: usize, width: usize, output_rank: usize, seed: u64) -> Result<NeuralBasis> {
    let mut rng = substream(seed, Stream::Init);
    NeuralBasis::init(&BasisArch::new(depth, width), output_rank, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(w: f64, c: f64) -> NeuralBasis {
        NeuralBasis::from_layers(
            vec![DenseLayer::new(DenseTensor::matrix(1, 1, vec![w]).unwrap(), vec![c]).unwrap()],
            30.0,
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let a = init_basis(2, 64, 3, 11).unwrap();
        let b = init_basis(2, 64, 3, 11).unwrap();
        assert_eq!(a, b);
        let shapes: Vec<_> = a.layers().iter().map(|l| l.weight.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![64, 1], vec![3, 64]]);
        assert!(init_basis(1, 64, 3, 11).is_err());
        assert!(init_basis(3, 0, 3, 11).is_err());
        assert!(init_basis(3, 8, 0, 11).is_err());
    }

    #[test]
    fn init_ranges() {
        let b = init_basis(4, 16, 2, 3).unwrap();
        assert!(b.layers()[0].weight.data().iter().all(|w| w.abs() <= 1.0));
        let bound = (6.0f64 / 16.0).sqrt();
        for layer in &b.layers()[1..] {
            assert!(layer.weight.data().iter().all(|w| w.abs() <= bound));
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut b = init_basis(3, 8, 4, 1).unwrap();
        for s in b.base_slices_mut() {
            s.fill(0.0);
        }
        assert_eq!(b.forward(0.7), vec![0.0; 4]);
    }

    #[test]
    fn affine_forward_and_backward() {
        let b = affine(2.5, -0.75);
        assert_eq!(b.forward(0.5), vec![2.5 * 0.5 - 0.75]);
        let g = b
            .backward(&[0.5], &DenseTensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(g.layers[0].weight.data(), &[0.5]);
        assert_eq!(g.layers[0].bias, vec![1.0]);
    }

    #[test]
    fn batch_rows_equal_pointwise() {
        let b = init_basis(3, 12, 5, 9).unwrap();
        let one = b.forward_batch(&[0.25]);
        assert_eq!(one.data(), b.forward(0.25).as_slice());
        let twin = b.forward_batch(&[0.0, 0.0]);
        assert_eq!(twin.data()[..5], twin.data()[5..]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let b = init_basis(3, 6, 2, 4).unwrap();
        let g = b.backward(&[0.1, 0.9], &DenseTensor::zeros(&[2, 2])).unwrap();
        for lg in g.layers {
            assert!(lg.weight.data().iter().all(|&v| v == 0.0));
            assert!(lg.bias.iter().all(|&v| v == 0.0));
        }
        assert!(b.backward(&[0.1], &DenseTensor::zeros(&[2, 2])).is_err());
    }

    #[test]
    fn lora_attachment_preserves_output() {
        let b = init_basis(3, 64, 3, 2).unwrap();
        let mut rng = substream(5, Stream::Lora);
        let l = b.attach_lora(10, &mut rng).unwrap();
        for x in [0.0, 0.3, 1.0, 1.2] {
            assert_eq!(l.forward(x), b.forward(x));
        }
        // hidden 64x64 layer: 64*10 + 10*64
        assert_eq!(l.adapters().unwrap()[1].num_params(), 1280);
        assert!(b.attach_lora(0, &mut rng).is_err());
        assert!(b.attach_lora(65, &mut rng).is_err());
    }

    #[test]
    fn adapter_gradients_leave_base_zero() {
        let b = init_basis(3, 8, 2, 2).unwrap();
        let l = b.attach_lora(2, &mut substream(1, Stream::Lora)).unwrap();
        let up = DenseTensor::filled(&[3, 2], 1.0);
        let g = l.backward(&[0.1, 0.5, 0.8], &up).unwrap();
        assert!(g.layers.iter().all(|lg| lg.weight.data().iter().all(|&v| v == 0.0)));
        let ad = g.adapters.unwrap();
        assert!(ad.iter().any(|a| a.a.data().iter().any(|&v| v != 0.0)));
    }
}
