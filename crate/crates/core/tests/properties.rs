//! Property-based checks of the documented invariants.

use proptest::prelude::*;

use neuapprox::data::{Mask, ObservationSet};
use neuapprox::io::{self, TrainConfig};
use neuapprox::metrics;
use neuapprox::model::{grid_coordinates, spectrum_magnitude};
use neuapprox::optim::{AdamConfig, AdamState};
use neuapprox::model::GradientBundle;
use neuapprox::tasks::{compose, make_random_mask, make_slice_mask};
use neuapprox::{BlockTermModel, DenseTensor, ModelSpec, TrainScope};

fn shape_strategy(max_modes: usize, max_size: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1..=max_size, 1..=max_modes)
}

fn tensor_strategy(max_modes: usize, max_size: usize) -> impl Strategy<Value = DenseTensor> {
    shape_strategy(max_modes, max_size).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(-10.0f64..10.0, n).prop_map(move |d| DenseTensor::new(shape.clone(), d).unwrap())
    })
}

fn pair_strategy() -> impl Strategy<Value = (DenseTensor, DenseTensor)> {
    shape_strategy(3, 5).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (
            prop::collection::vec(0.0f64..1.0, n),
            prop::collection::vec(0.0f64..1.0, n),
        )
            .prop_map(move |(a, b)| {
                (DenseTensor::new(shape.clone(), a).unwrap(), DenseTensor::new(shape.clone(), b).unwrap())
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(t in tensor_strategy(4, 4), m in 0usize..4) {
        let mode = m % t.ndim();
        let u = t.unfold(mode).unwrap();
        prop_assert_eq!(u.rows(), t.shape()[mode]);
        prop_assert_eq!(DenseTensor::fold(&u, mode, t.shape()).unwrap(), t);
    }

    #[test]
    fn mode_product_is_fold_of_matrix_product(t in tensor_strategy(3, 4), m in 0usize..3, p in 1usize..4, seed in 0u64..1000) {
        let mode = m % t.ndim();
        let d = t.shape()[mode];
        let a = DenseTensor::from_fn(&[p, d], |i| ((i[0] * 7 + i[1] * 3 + seed as usize) % 11) as f64 - 5.0);
        let direct = t.mode_product(&a, mode).unwrap();
        let mut shape = t.shape().to_vec();
        shape[mode] = p;
        let via = DenseTensor::fold(&a.matmul(&t.unfold(mode).unwrap()).unwrap(), mode, &shape).unwrap();
        for (x, y) in direct.data().iter().zip(via.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn frobenius_norm_is_zero_only_for_zero(t in tensor_strategy(3, 4)) {
        let n = t.frobenius_norm();
        prop_assert!(n >= 0.0);
        prop_assert_eq!(n == 0.0, t.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tensor_container_round_trips(t in tensor_strategy(4, 5)) {
        let bytes = io::encode_tensor(&t);
        let back = io::decode_tensor(&bytes, "mem").unwrap();
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn metric_identities((x, _) in pair_strategy()) {
        prop_assert_eq!(metrics::psnr(&x, &x, 1.0).unwrap(), metrics::PSNR_CAP);
        let s = metrics::ssim(&x, &x, 1.0).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
        if x.frobenius_norm() > 0.0 {
            prop_assert_eq!(metrics::nrmse(&x, &x).unwrap(), 0.0);
        }
    }

    #[test]
    fn metric_ranges_and_symmetry((x, y) in pair_strategy()) {
        let p = metrics::psnr(&x, &y, 1.0).unwrap();
        prop_assert!(p >= 0.0 && p <= metrics::PSNR_CAP);
        prop_assert_eq!(p, metrics::psnr(&y, &x, 1.0).unwrap());
        let s = metrics::ssim(&x, &y, 1.0).unwrap();
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&s));
        if x.frobenius_norm() > 0.0 && y.frobenius_norm() > 0.0 {
            let (a, b) = (metrics::nrmse(&x, &y).unwrap(), metrics::nrmse(&y, &x).unwrap());
            prop_assert!(a >= 0.0);
            if (x.frobenius_norm() - y.frobenius_norm()).abs() > 1e-9 {
                prop_assert!(a != b);
            }
        }
        if x.len() >= 2 && x.data().iter().any(|&v| v != x.data()[0]) {
            let (n, r2) = metrics::pointcloud_nrmse_r2(x.data(), y.data()).unwrap();
            prop_assert!(n >= 0.0 && r2 <= 1.0);
        }
    }

    #[test]
    fn mape_is_scale_invariant((x, y) in pair_strategy(), c in 0.01f64..100.0) {
        let x = x.map(|v| v + 0.5);
        let region = Mask::full(x.shape(), true);
        let a = metrics::traffic_rmse_mape(&x, &y, &region).unwrap();
        let b = metrics::traffic_rmse_mape(&x.scaled(c), &y.scaled(c), &region).unwrap();
        let (pa, pb) = (a.mape_percent.unwrap(), b.mape_percent.unwrap());
        prop_assert!((pa - pb).abs() <= 1e-12 * pa.max(1.0));
        prop_assert!(a.rmse >= 0.0 && pa >= 0.0);
    }

    #[test]
    fn random_masks_observe_the_requested_fraction(shape in shape_strategy(3, 6), rate in 0.05f64..0.95, seed in 0u64..100) {
        let n: usize = shape.iter().product();
        prop_assume!(n >= 2);
        match make_random_mask(&shape, rate, seed) {
            Ok(m) => {
                let k = (rate * n as f64).round() as usize;
                prop_assert_eq!(m.observed(), k);
                prop_assert_eq!(make_random_mask(&shape, rate, seed).unwrap(), m);
            }
            Err(_) => {
                let k = (rate * n as f64).round() as usize;
                prop_assert!(k == 0 || k == n);
            }
        }
    }

    #[test]
    fn slice_masks_drop_whole_slices(shape in prop::collection::vec(2usize..6, 2..=3), rate in 0.1f64..0.9, seed in 0u64..50) {
        let mode = shape.len() - 1;
        if let Ok(m) = make_slice_mask(&shape, rate, mode, seed) {
            let t = m.to_tensor();
            for k in 0..shape[mode] {
                let slice = t.unfold(mode).unwrap();
                let row: Vec<f64> = (0..slice.cols()).map(|c| slice.at(k, c)).collect();
                prop_assert!(row.iter().all(|&v| v == row[0]));
            }
        }
    }

    #[test]
    fn composition_keeps_observed_entries((y, x) in pair_strategy(), seed in 0u64..100) {
        let bits: Vec<bool> = (0..y.len()).map(|i| (i as u64 * 2654435761 + seed) % 3 != 0).collect();
        let mask = Mask::new(y.shape().to_vec(), bits).unwrap();
        let c = compose(&y, &x, &mask);
        for i in 0..y.len() {
            let expect = if mask.bits()[i] { y.data()[i] } else { x.data()[i] };
            prop_assert_eq!(c.data()[i].to_bits(), expect.to_bits());
        }
    }

    #[test]
    fn grid_coordinates_are_normalized(d in 1usize..50) {
        let c = grid_coordinates(d);
        prop_assert_eq!(c.len(), d);
        prop_assert_eq!(c[0], 0.0);
        if d > 1 {
            prop_assert_eq!(c[d - 1], 1.0);
        }
        prop_assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn parseval_holds(rows in 1usize..9, cols in 1usize..9, seed in 0u64..1000) {
        let x = DenseTensor::from_fn(&[rows, cols], |i| (((i[0] * 31 + i[1] * 17) as u64 + seed) % 13) as f64 / 13.0 - 0.4);
        let mag = spectrum_magnitude(&x).unwrap();
        let e: f64 = x.data().iter().map(|v| v * v).sum();
        let s: f64 = mag.data().iter().map(|v| v * v).sum::<f64>() / (rows * cols) as f64;
        prop_assert!((e - s).abs() <= 1e-9 * e.max(1e-12));
        prop_assert!(mag.data().iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn eval_grid_agrees_with_points(seed in 0u64..1000, terms in 1usize..3, r0 in 1usize..4, r1 in 1usize..4) {
        let spec = ModelSpec::neural(terms, vec![r0, r1], 3, 8);
        let m = BlockTermModel::init(&spec, seed).unwrap();
        let g = m.eval_grid(&[4, 3]).unwrap();
        let (c0, c1) = (grid_coordinates(4), grid_coordinates(3));
        let pts: Vec<Vec<f64>> = c0.iter().flat_map(|&a| c1.iter().map(move |&b| vec![a, b])).collect();
        let vals = m.eval_points(&pts).unwrap();
        for (a, b) in g.data().iter().zip(&vals) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        prop_assert!(g.is_finite());
    }

    #[test]
    fn zero_initialized_adapters_preserve_the_field(seed in 0u64..1000, rank in 1usize..6) {
        let spec = ModelSpec::neural(2, vec![2, 3, 2], 3, 8);
        let m = BlockTermModel::init(&spec, seed).unwrap();
        let a = m.attach_lora(rank, seed).unwrap();
        prop_assert_eq!(a.eval_grid(&[3, 4, 2]).unwrap(), m.eval_grid(&[3, 4, 2]).unwrap());
        prop_assert_eq!(a.neural_checksum(), m.neural_checksum());
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_gradients(seed in 0u64..1000) {
        let spec = ModelSpec::neural(2, vec![2, 2, 2], 3, 6);
        let m = BlockTermModel::init(&spec, seed).unwrap();
        let y = m.eval_grid(&[3, 3, 2]).unwrap();
        let obs = ObservationSet::grid(y, Mask::full(&[3, 3, 2], true)).unwrap();
        let lg = m.loss_and_gradients(&obs, TrainScope::Full).unwrap();
        prop_assert_eq!(lg.loss, 0.0);
        prop_assert!(lg.grads.slots.iter().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn adam_moments_stay_congruent(grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 1..6), 1..4), steps in 1usize..6) {
        let sizes: Vec<usize> = grads.iter().map(|g| g.len()).collect();
        let mut params: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.5; n]).collect();
        let mut state = AdamState::new(AdamConfig::default(), &sizes);
        let bundle = GradientBundle { slots: grads.clone() };
        for k in 0..steps {
            let mut views: Vec<&mut [f64]> = params.iter_mut().map(|p| p.as_mut_slice()).collect();
            state.apply(&mut views, &bundle).unwrap();
            prop_assert_eq!(state.step_count(), k as u64 + 1);
        }
        for (v, &n) in state.second_moment().iter().zip(&sizes) {
            prop_assert_eq!(v.len(), n);
            prop_assert!(v.iter().all(|&x| x >= 0.0));
        }
        prop_assert!(params.iter().flatten().all(|p| p.is_finite()));
    }

    #[test]
    fn config_text_round_trips(terms in 1usize..5, depth in 2usize..6, width in 1usize..64, lr in 1e-6f64..1.0, seed in any::<u64>()) {
        let mut cfg = TrainConfig::default();
        cfg.terms = terms;
        cfg.depth = depth;
        cfg.width = width;
        cfg.learning_rate = lr;
        cfg.seed = seed;
        let back = TrainConfig::from_kv(&cfg.to_kv(), "mem").unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn checkpoints_reproduce_the_field(seed in 0u64..1000) {
        let spec = ModelSpec::neural(2, vec![2, 2, 3], 3, 6);
        let m = BlockTermModel::init(&spec, seed).unwrap();
        let text = io::encode_checkpoint(&m, &TrainConfig::default(), 3).unwrap();
        let back = io::decode_checkpoint(&text, "mem").unwrap();
        let (a, b) = (m.eval_grid(&[4, 3, 2]).unwrap(), back.model.eval_grid(&[4, 3, 2]).unwrap());
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
