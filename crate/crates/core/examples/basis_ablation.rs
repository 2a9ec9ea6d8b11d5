// Same completion with each basis family on a shared mask.

use neuapprox::fixtures::smooth_plus_texture;
use neuapprox::io::TrainConfig;
use neuapprox::tasks::{inpaint, make_random_mask, GridMetrics};
use neuapprox::BasisKind;

fn main() -> neuapprox::Result<()> {
    let shape = [24, 24, 4];
    let truth = smooth_plus_texture(&shape, 1);
    let mask = make_random_mask(&shape, 0.2, 3)?;
    println!("{:>10} {:>8} {:>8} {:>7}", "basis", "psnr", "ssim", "params");
    for kind in BasisKind::ALL {
        let mut cfg = TrainConfig::default();
        cfg.basis = vec![kind];
        cfg.core_shape = vec![6, 6, 4];
        cfg.iterations = 200;
        cfg.learning_rate = if kind == BasisKind::Neural { 1e-3 } else { 1e-2 };
        let res = inpaint(&truth, &mask, &cfg, Some(&truth), GridMetrics::Image)?;
        println!(
            "{:>10} {:>8.3} {:>8.4} {:>7}",
            kind.name(),
            res.metrics.get("psnr").unwrap(),
            res.metrics.get("ssim").unwrap(),
            res.model.num_params()
        );
    }
    Ok(())
}
