// Slice-missing completion of a sensor x day x interval traffic table read
// from CSV.

use std::fmt::Write;

use neuapprox::io::{parse_traffic_csv, TrainConfig};
use neuapprox::metrics::MetricReport;
use neuapprox::tasks::{compose, inpaint, make_slice_mask, GridMetrics};

fn main() -> neuapprox::Result<()> {
    let (sensors, days, intervals) = (6, 8, 12);
    let mut csv = String::from("sensor,day,interval,value\n");
    for s in 0..sensors {
        for d in 0..days {
            for t in 0..intervals {
                let daily = (std::f64::consts::TAU * t as f64 / intervals as f64).sin();
                let v = 50.0 + 10.0 * s as f64 + 20.0 * daily * (1.0 + 0.05 * d as f64);
                // one broken reading
                if (s, d, t) == (2, 3, 4) {
                    writeln!(csv, "{s},{d},{t},").unwrap();
                } else {
                    writeln!(csv, "{s},{d},{t},{v}").unwrap();
                }
            }
        }
    }
    let data = parse_traffic_csv(&csv, None, "generated")?;
    println!("{} cells, {} missing in the file", data.mask.len(), data.mask.missing());

    // drop 25% of whole days, scale to unit range for training
    let drop = make_slice_mask(data.values.shape(), 0.25, 1, 11)?;
    let train_mask = data.mask.and(&drop)?;
    let scale = data.values.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut cfg = TrainConfig::default();
    cfg.core_shape = vec![4, 4, 6];
    cfg.iterations = 2000;
    // a short day mode with whole days missing needs a low first-layer frequency
    cfg.omega_first = 3.0;
    cfg.learning_rate = 1e-3;
    let res = inpaint(&data.values.scaled(1.0 / scale), &train_mask, &cfg, None, GridMetrics::Traffic)?;
    let rec = compose(&data.values, &res.recovered.unwrap().scaled(scale), &train_mask);

    let region = data.mask.and(&drop.complement())?;
    let report = MetricReport::traffic(&data.values, &rec, &region)?;
    for (name, (value, _)) in &report.values {
        println!("{name:>12} = {value:.4}");
    }
    Ok(())
}
