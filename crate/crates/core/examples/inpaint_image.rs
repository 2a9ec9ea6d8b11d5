// Random-mask inpainting of a small multi-band image.

use neuapprox::fixtures::smooth_plus_texture;
use neuapprox::io::TrainConfig;
use neuapprox::tasks::{inpaint, make_random_mask, GridMetrics};

fn main() -> neuapprox::Result<()> {
    let shape = [24, 24, 4];
    let truth = smooth_plus_texture(&shape, 3);
    let mask = make_random_mask(&shape, 0.3, 7)?;

    let mut cfg = TrainConfig::default();
    cfg.core_shape = vec![6, 6, 4];
    cfg.iterations = 300;
    cfg.learning_rate = 1e-3;
    cfg.seed = 7;

    let res = inpaint(&truth, &mask, &cfg, Some(&truth), GridMetrics::Image)?;
    println!("observed {} of {} entries", mask.observed(), mask.len());
    for (name, (value, region)) in &res.metrics.values {
        println!("{name:>14} = {value:.4} ({})", region.name());
    }
    println!("final loss {:.4e} after {} iterations", res.loss_trace.last().unwrap(), res.loss_trace.len());
    Ok(())
}
