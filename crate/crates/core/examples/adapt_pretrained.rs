// Pretrain on one target, then adapt to a related one with each strategy.

use neuapprox::fixtures::related_pair;
use neuapprox::io::{Strategy, TrainConfig};
use neuapprox::tasks::{adapt, inpaint, make_random_mask, GridMetrics};
use neuapprox::ModelSpec;

fn main() -> neuapprox::Result<()> {
    let shape = [16, 16, 4];
    let mut spec = ModelSpec::neural(2, vec![3, 3, 3], 3, 16);
    spec.arch.omega_first = 10.0;
    let (_, ya, yb) = related_pair(&spec, &shape, 4)?;

    let mut cfg = TrainConfig::default();
    cfg.core_shape = vec![3];
    cfg.width = 16;
    cfg.omega_first = 10.0;
    cfg.iterations = 1000;
    cfg.learning_rate = 1e-3;
    cfg.lora_rank = 4;
    let pre = inpaint(&ya, &make_random_mask(&shape, 0.3, 1)?, &cfg, Some(&ya), GridMetrics::Image)?;
    println!("pretrained psnr {:.3}", pre.metrics.get("psnr").unwrap());

    let mask = make_random_mask(&shape, 0.3, 2)?;
    for s in Strategy::ALL {
        let r = adapt(&pre.model, &yb, &mask, s, &cfg, Some(&yb))?;
        println!(
            "{:>8}: psnr {:.3}, {:.3}s, base weights unchanged: {}",
            s.name(),
            r.result.metrics.get("psnr").unwrap(),
            r.result.wall_time.as_secs_f64(),
            r.checksum_before == r.checksum_after
        );
    }
    Ok(())
}
