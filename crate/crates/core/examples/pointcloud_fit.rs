// Off-grid color regression on a point cloud: train on a small fraction of
// the points and predict colors at the rest.

use std::fmt::Write;

use neuapprox::data::ObservationSet;
use neuapprox::io::{PointCloud, TrainConfig};
use neuapprox::tasks::fit_pointcloud;

fn main() -> neuapprox::Result<()> {
    // a colored sphere-ish shell in world units with byte colors
    let mut text = String::new();
    for i in 0..400 {
        let u = i as f64 * 0.61803398875 % 1.0;
        let v = (i as f64 + 0.5) / 400.0;
        let (x, y, z) = (10.0 * u, -3.0 + 6.0 * v, 2.0 * (u * v).sqrt());
        let r = (255.0 * u).round();
        let g = (255.0 * v).round();
        let b = (128.0 + 100.0 * (3.0 * u).sin()).round();
        writeln!(text, "{x} {y} {z} {r} {g} {b}").unwrap();
    }
    let pc = PointCloud::parse(&text, "generated")?;
    let train_pc = PointCloud { rows: pc.rows.iter().step_by(5).copied().collect() };
    let test_pc = PointCloud { rows: pc.rows.iter().skip(2).step_by(5).copied().collect() };

    let bounds = train_pc.bounds();
    let bytes = pc.colors_are_bytes();
    let (tc, tv, _) = train_pc.observations(&bounds, bytes);
    let (qc, qv, _) = test_pc.observations(&bounds, bytes);

    let mut cfg = TrainConfig::default();
    cfg.core_shape = vec![4, 4, 4, 3];
    cfg.iterations = 1000;
    cfg.omega_first = 3.0;
    cfg.learning_rate = 1e-3;
    let res = fit_pointcloud(&ObservationSet::points(tc, tv)?, &qc, &cfg, Some(&qv))?;
    println!(
        "heldout nrmse {:.4}, r2 {:.4}",
        res.metrics.get("nrmse").unwrap(),
        res.metrics.get("r2").unwrap()
    );
    Ok(())
}
