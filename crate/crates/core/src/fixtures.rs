//! Synthetic data with known structure, used by the examples, the tests and
//! the CLI's `--synthetic` inputs.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::Result;
use crate::model::{grid_coordinates, BlockTermModel, ModelSpec};
use crate::rng::{substream, Stream};
use crate::tensor::DenseTensor;

/// A random block-term model and its reconstruction on `grid_shape`.
pub fn random_model_tensor(
    spec: &ModelSpec,
    grid_shape: &[usize],
    seed: u64,
) -> Result<(BlockTermModel, DenseTensor)> {
    let m = BlockTermModel::init(spec, seed)?;
    let t = m.eval_grid(grid_shape)?;
    Ok((m, t))
}

const TEXTURE_PATCHES: usize = 5;

/// Image-like 3-mode tensor in `[0, 1]`: a smooth low-frequency background
/// plus localized oscillating patches at 4 to 7 cycles per side whose
/// amplitude varies across bands.
///
/// Shape is `(height, width, bands)`. The phases and frequencies are drawn
/// from `seed`.
pub fn smooth_plus_texture(shape: &[usize; 3], seed: u64) -> DenseTensor {
    let mut rng = substream(seed, Stream::Fixture);
    let (cu, cv) = (rng.gen_range(0.3..0.7), rng.gen_range(0.3..0.7));
    let tilt = rng.gen_range(0.5..1.5);
    let patches: Vec<[f64; 8]> = (0..TEXTURE_PATCHES)
        .map(|_| {
            [
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(4.0..7.0),
                rng.gen_range(4.0..7.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.08..0.16),
            ]
        })
        .collect();
    let (us, vs, ws) = (
        grid_coordinates(shape[0]),
        grid_coordinates(shape[1]),
        grid_coordinates(shape[2]),
    );
    let t = DenseTensor::from_fn(shape, |i| {
        let (u, v, w) = (us[i[0]], vs[i[1]], ws[i[2]]);
        let bump = (-((u - cu).powi(2) + (v - cv).powi(2)) / 0.12).exp();
        let ramp = 0.5 + 0.5 * (tilt * u - 0.6 * v);
        let edge = 1.0 / (1.0 + (-(u + v - 1.0) / 0.06).exp());
        let mut value = bump * (1.0 - 0.5 * w) + 0.4 * ramp * (0.6 + 0.4 * w * w) + 0.3 * edge * w;
        for &[pu, pv, fu, fv, phu, phv, slope, s] in &patches {
            let window = (-((u - pu).powi(2) + (v - pv).powi(2)) / (2.0 * s * s)).exp();
            let wave = (2.0 * PI * fu * u + phu).sin() * (2.0 * PI * fv * v + phv).sin();
            value += 0.2 * window * wave * (1.0 + 0.5 * slope * (2.0 * w - 1.0));
        }
        value
    });
    normalize_unit(&t)
}

/// Min-max rescaling to `[0, 1]`; constant tensors map to zero.
pub fn normalize_unit(t: &DenseTensor) -> DenseTensor {
    let lo = t.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = t.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| 0.0)
    }
}

/// Two targets that share every basis function but have independent cores.
///
/// Returns the model behind the first target together with both tensors.
pub fn related_pair(
    spec: &ModelSpec,
    grid_shape: &[usize],
    seed: u64,
) -> Result<(BlockTermModel, DenseTensor, DenseTensor)> {
    let a = BlockTermModel::init(spec, seed)?;
    let fresh = BlockTermModel::init(spec, seed.wrapping_add(0x9e37_79b9))?;
    let mut b = a.clone();
    for (tb, tf) in b.terms_mut().iter_mut().zip(fresh.terms()) {
        *tb.core_mut() = tf.core().clone();
    }
    let ya = a.eval_grid(grid_shape)?;
    let yb = b.eval_grid(grid_shape)?;
    Ok((a, ya, yb))
}

/// Samples of a separable color function `a_c(x) b_c(y) c_c(z)` at random
/// points of the unit cube, one `(x, y, z, channel)` observation per channel
/// with channel coordinates `{0, 0.5, 1}`.
pub fn separable_pointcloud(points: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = substream(seed, Stream::Fixture);
    let mut coords = Vec::with_capacity(points * 3);
    let mut values = Vec::with_capacity(points * 3);
    for _ in 0..points {
        let (x, y, z): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        for (c, ch) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            let k = c as f64;
            let a = 0.5 + 0.4 * (PI * (x + 0.2 * k)).sin();
            let b = 0.6 + 0.3 * (1.5 * y - 0.3 * k).cos();
            let cz = 0.4 + 0.5 * z * (1.0 - 0.3 * k);
            coords.push(vec![x, y, z, ch]);
            values.push(a * b * cz);
        }
    }
    (coords, values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_fixture_is_unit_range_and_seeded() {
        let a = smooth_plus_texture(&[16, 12, 3], 4);
        let b = smooth_plus_texture(&[16, 12, 3], 4);
        let c = smooth_plus_texture(&[16, 12, 3], 5);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let lo = a.data().iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }

    #[test]
    fn related_pair_shares_bases() {
        let spec = ModelSpec::neural(2, vec![2, 2], 2, 4);
        let (a, ya, yb) = related_pair(&spec, &[5, 4], 3).unwrap();
        assert_eq!(a.eval_grid(&[5, 4]).unwrap(), ya);
        assert_ne!(ya, yb);
    }
}
