// Per-term fields of a fitted model and the centered log-magnitude spectrum
// of one band.

use neuapprox::cli::band_slice;
use neuapprox::fixtures::smooth_plus_texture;
use neuapprox::io::TrainConfig;
use neuapprox::model::{spectrum2d, spectrum_magnitude};
use neuapprox::tasks::{inpaint, make_random_mask, GridMetrics};

fn main() -> neuapprox::Result<()> {
    let shape = [16, 16, 3];
    let truth = smooth_plus_texture(&shape, 2);
    let mask = make_random_mask(&shape, 0.5, 1)?;
    let mut cfg = TrainConfig::default();
    cfg.terms = 3;
    cfg.core_shape = vec![4, 4, 3];
    cfg.iterations = 150;
    cfg.learning_rate = 1e-3;
    let model = inpaint(&truth, &mask, &cfg, None, GridMetrics::Image)?.model;

    let full = model.eval_grid(&shape)?;
    let mut sum = full.scaled(0.0);
    for j in 0..model.term_count() {
        let f = model.block_term_field(j, &shape)?;
        sum.add_assign(&f)?;
        let band = band_slice(&f, 2, 0)?;
        let mag = spectrum_magnitude(&band)?;
        let energy: f64 = band.data().iter().map(|v| v * v).sum();
        let spectral: f64 = mag.data().iter().map(|v| v * v).sum::<f64>() / band.len() as f64;
        let log = spectrum2d(&band)?;
        println!(
            "term {}: energy {energy:.5}, spectral energy / N {spectral:.5}, dc log-magnitude {:.4}",
            j + 1,
            log.at(8, 8)
        );
    }
    let gap = full.sub(&sum)?.frobenius_norm();
    println!("|full - sum of terms| = {gap:.2e}");
    Ok(())
}
