//! Exit-code harness and output contracts of the command-line front end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neuapprox::io::{self, RunManifest, TrainConfig};
use neuapprox::{BlockTermModel, DenseTensor, ModelSpec};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neuapprox"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records(dir: &Path) -> Vec<std::collections::BTreeMap<String, String>> {
    io::parse_records(&std::fs::read_to_string(dir.join("metrics.txt")).unwrap()).unwrap()
}

const QUICK: [&str; 8] = [
    "--synthetic",
    "texture",
    "--shape",
    "12,12,3",
    "--iterations",
    "30",
    "--core-shape",
    "3,3,3",
];

fn quick_complete(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["complete"];
    args.extend(QUICK);
    args.extend(extra);
    args.extend(["--out", s(out)]);
    run(&args)
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&[]), 2);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(code(&["complete", "--synthetic", "texture"]), 2, "missing --out");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let conflicting = quick_complete(&out, &["--sampling-rate", "0.3", "--slice-missing-rate", "0.2"]);
    assert_eq!(conflicting.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(quick_complete(&out, &[]).status.code(), Some(2), "no mask source");
    assert_eq!(code(&["complete", "--synthetic", "nope", "--sampling-rate", "0.3", "--out", s(&out)]), 2);
    assert_eq!(code(&["complete", "--iterations", "many", "--out", s(&out)]), 2);
}

#[test]
fn help_and_version_exit_0() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["sweep", "--help"]), 0);
}

#[test]
fn runtime_errors_exit_1_without_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(
        code(&["complete", "--data", "/nonexistent/x.tensor", "--sampling-rate", "0.3", "--out", s(&out)]),
        1
    );
    assert!(!out.exists());
    // rank larger than a mode
    let r = run(&[
        "complete", "--synthetic", "texture", "--shape", "12,12,3", "--iterations", "30",
        "--sampling-rate", "0.3", "--core-shape", "4,4,4", "--out", s(&out),
    ]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("exceeds"));
    assert!(!out.exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert!(leftovers.is_empty(), "staging directories must be removed");
    // corrupted checkpoint
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, "NEUAPPROX-CHECKPOINT 1 00\n{}").unwrap();
    assert_eq!(code(&["spectrum", "--checkpoint", s(&bad), "--out", s(&out)]), 1);
}

#[test]
fn complete_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let r = quick_complete(&out, &["--sampling-rate", "0.4", "--seed", "3"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["recovered.tensor", "mask.tensor", "metrics.txt", "loss_trace.txt", "timing.txt", "manifest.json", "model.ckpt", "config.txt"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert!(!metrics.contains("wall"), "metric records carry no timing");
    let trace = std::fs::read_to_string(out.join("loss_trace.txt")).unwrap();
    assert_eq!(trace.lines().count(), 30);
    let rec = io::load_tensor(&out.join("recovered.tensor")).unwrap();
    let mask = io::load_mask(&out.join("mask.tensor")).unwrap();
    let truth = neuapprox::fixtures::smooth_plus_texture(&[12, 12, 3], 0);
    for ((a, b), &m) in rec.data().iter().zip(truth.data()).zip(mask.bits()) {
        if m {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    let manifest = RunManifest::from_json(&std::fs::read_to_string(out.join("manifest.json")).unwrap(), "m").unwrap();
    assert_eq!(manifest.command, "complete");
    assert_eq!(manifest.seed, 3);
    assert!(manifest.outputs.iter().any(|o| o == "recovered.tensor"));
    // refuses to overwrite
    assert_eq!(quick_complete(&out, &["--sampling-rate", "0.4"]).status.code(), Some(1));
}

#[test]
fn same_arguments_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(quick_complete(&a, &["--sampling-rate", "0.1", "--seed", "7"]).status.success());
    assert!(quick_complete(&b, &["--sampling-rate", "0.1", "--seed", "7"]).status.success());
    for f in ["metrics.txt", "recovered.tensor", "loss_trace.txt", "model.ckpt"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::default();
    cfg.iterations = 7;
    cfg.learning_rate = 0.5;
    cfg.core_shape = vec![3];
    let cp = dir.path().join("run.cfg");
    cfg.save(&cp).unwrap();
    let out = dir.path().join("o");
    let r = run(&[
        "complete", "--config", s(&cp), "--synthetic", "texture", "--shape", "12,12,3",
        "--iterations", "5", "--sampling-rate", "0.3", "--out", s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let used = TrainConfig::load(&out.join("config.txt")).unwrap();
    assert_eq!(used.iterations, 5);
    assert_eq!(used.learning_rate, 0.5);
    assert_eq!(std::fs::read_to_string(out.join("loss_trace.txt")).unwrap().lines().count(), 5);
}

#[test]
fn mask_file_and_slice_masks() {
    let dir = tempfile::tempdir().unwrap();
    let mask = neuapprox::tasks::make_random_mask(&[12, 12, 3], 0.5, 4).unwrap();
    let mp = dir.path().join("mask.tensor");
    io::save_mask(&mask, &mp).unwrap();
    let out = dir.path().join("m");
    assert!(quick_complete(&out, &["--mask", s(&mp)]).status.success());
    assert_eq!(io::load_mask(&out.join("mask.tensor")).unwrap(), mask);
    let out = dir.path().join("s");
    assert!(quick_complete(&out, &["--slice-missing-rate", "0.34", "--slice-mode", "2"]).status.success());
    let m = io::load_mask(&out.join("mask.tensor")).unwrap();
    assert_eq!(m.missing(), 12 * 12);
}

#[test]
fn ablation_has_four_rows_sharing_hash_and_mask() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ab");
    let mut args = vec!["ablate-basis"];
    args.extend(QUICK);
    args.extend(["--sampling-rate", "0.3", "--out", s(&out)]);
    assert_eq!(code(&args), 0);
    let table = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4);
    let names: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    assert_eq!(names, ["polynomial", "fourier", "gaussian", "neural"]);
    assert!(rows.iter().all(|r| r[5] == rows[0][5] && r[6] == rows[0][6]));
    let recs = records(&out);
    assert_eq!(recs.len(), 16);
    assert!(recs.iter().all(|r| r["mask_digest"] == rows[0][6]));
}

fn neural_params(depth: usize, width: usize, rank: usize) -> usize {
    (width + width) + (depth - 2) * (width * width + width) + (width * rank + rank)
}

#[test]
fn sweep_counts_parameters_and_sorts_by_psnr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sw");
    let mut args = vec!["sweep"];
    args.extend(QUICK);
    args.extend([
        "--sampling-rate", "0.3", "--grid-terms", "1,2", "--grid-widths", "4,8",
        "--grid-core-shapes", "2,2,2;3,3,2", "--out", s(&out),
    ]);
    assert_eq!(code(&args), 0);
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<Vec<String>> = table.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 8);
    let mut last = f64::INFINITY;
    for r in &rows {
        let terms: usize = r[0].parse().unwrap();
        let core: Vec<usize> = r[1].split('x').map(|v| v.parse().unwrap()).collect();
        let depth: usize = r[2].parse().unwrap();
        let width: usize = r[3].parse().unwrap();
        let expected = terms * (core.iter().product::<usize>() + core.iter().map(|&c| neural_params(depth, width, c)).sum::<usize>());
        assert_eq!(r[5].parse::<usize>().unwrap(), expected);
        let p: f64 = r[6].parse().unwrap();
        assert!(p <= last);
        last = p;
    }
    let empty = dir.path().join("empty");
    let mut args = vec!["sweep"];
    args.extend(QUICK);
    args.extend(["--sampling-rate", "0.3", "--grid-core-shapes", ";", "--out", s(&empty)]);
    assert_eq!(code(&args), 2);
}

#[test]
fn single_point_sweep_reduces_to_complete() {
    let dir = tempfile::tempdir().unwrap();
    let (c, w) = (dir.path().join("c"), dir.path().join("w"));
    assert!(quick_complete(&c, &["--sampling-rate", "0.3"]).status.success());
    let mut args = vec!["sweep"];
    args.extend(QUICK);
    args.extend(["--sampling-rate", "0.3", "--out", s(&w)]);
    assert_eq!(code(&args), 0);
    let get = |recs: &[std::collections::BTreeMap<String, String>], m: &str| {
        recs.iter().find(|r| r["metric"] == m).unwrap()["value"].clone()
    };
    let (rc, rw) = (records(&c), records(&w));
    for m in ["psnr", "ssim", "nrmse"] {
        assert_eq!(get(&rc, m), get(&rw, m));
    }
}

fn checkpoint(dir: &Path, terms: usize, shape: &[usize]) -> PathBuf {
    let spec = ModelSpec::neural(terms, vec![3, 2, 2], 3, 8);
    let mut m = BlockTermModel::init(&spec, 5).unwrap();
    m.bind_grid(shape).unwrap();
    let p = dir.join(format!("t{terms}.ckpt"));
    io::save_checkpoint(&m, &TrainConfig::default(), 0, &p).unwrap();
    p
}

#[test]
fn spectrum_of_single_term_equals_full_spectrum() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(dir.path(), 1, &[8, 6, 3]);
    let out = dir.path().join("sp");
    assert_eq!(code(&["spectrum", "--checkpoint", s(&ck), "--term", "1", "--bands", "0,2", "--out", s(&out)]), 0);
    for b in [0, 2] {
        let a = std::fs::read(out.join(format!("term_1_band_{b}_spectrum.csv"))).unwrap();
        let f = std::fs::read(out.join(format!("full_band_{b}_spectrum.csv"))).unwrap();
        assert_eq!(a, f);
    }
}

#[test]
fn exported_spectra_satisfy_parseval_and_fields_add_up() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(dir.path(), 3, &[8, 6, 3]);
    let out = dir.path().join("sp");
    assert_eq!(code(&["spectrum", "--checkpoint", s(&ck), "--out", s(&out)]), 0);
    let energy = std::fs::read_to_string(out.join("energy.csv")).unwrap();
    let rows: Vec<Vec<&str>> = energy.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 4 * 3);
    for r in &rows {
        let (e, sp): (f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap());
        assert!((e - sp).abs() <= 1e-9 * e.max(1e-300), "{r:?}");
    }
    let full = io::load_tensor(&out.join("full_field.tensor")).unwrap();
    let mut sum = DenseTensor::zeros(full.shape());
    for j in 1..=3 {
        sum.add_assign(&io::load_tensor(&out.join(format!("term_{j}_field.tensor"))).unwrap()).unwrap();
    }
    for (a, b) in full.data().iter().zip(sum.data()) {
        assert!((a - b).abs() <= 1e-12);
    }
    let bad = dir.path().join("bad");
    assert_eq!(code(&["spectrum", "--checkpoint", s(&ck), "--term", "4", "--out", s(&bad)]), 1);
    assert_eq!(code(&["spectrum", "--checkpoint", s(&ck), "--bands", "3", "--out", s(&bad)]), 1);
    assert!(!bad.exists());
}

#[test]
fn adapt_runs_all_strategies_and_rejects_incompatible_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let ck = checkpoint(dir.path(), 2, &[12, 12, 3]);
    let out = dir.path().join("ad");
    let mut args = vec!["adapt", "--checkpoint", s(&ck), "--all-strategies", "--sampling-rate", "0.3", "--lora-rank", "2"];
    args.extend(QUICK);
    args.extend(["--out", s(&out)]);
    let r = run(&args);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let recs = records(&out);
    for st in ["frozen", "lora", "scratch"] {
        assert!(recs.iter().any(|r| r["strategy"] == st && r["metric"] == "psnr"));
    }
    let timing = std::fs::read_to_string(out.join("timing.txt")).unwrap();
    for line in timing.lines().filter(|l| !l.contains("strategy=scratch")) {
        let kv: std::collections::BTreeMap<&str, &str> = line.split(' ').filter_map(|t| t.split_once('=')).collect();
        assert_eq!(kv["base_checksum_before"], kv["base_checksum_after"]);
    }

    let spec = ModelSpec::neural(1, vec![2, 2], 2, 4);
    let flat = BlockTermModel::init(&spec, 1).unwrap();
    let ck2 = dir.path().join("flat.ckpt");
    io::save_checkpoint(&flat, &TrainConfig::default(), 0, &ck2).unwrap();
    let bad = dir.path().join("bad");
    let mut args = vec!["adapt", "--checkpoint", s(&ck2), "--sampling-rate", "0.3"];
    args.extend(QUICK);
    args.extend(["--out", s(&bad)]);
    assert_eq!(code(&args), 1);
    assert!(!bad.exists());
}

#[test]
fn eval_reports_metrics_between_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let t = DenseTensor::from_fn(&[4, 4], |i| (i[0] + i[1]) as f64 / 6.0);
    let (a, b) = (dir.path().join("a.tensor"), dir.path().join("b.tensor"));
    io::save_tensor(&t, &a).unwrap();
    io::save_tensor(&t.map(|v| v + 0.1), &b).unwrap();
    let r = run(&["eval", "--truth", s(&a), "--estimate", s(&b), "--peak", "1"]);
    assert!(r.status.success());
    let recs = io::parse_records(&String::from_utf8(r.stdout).unwrap()).unwrap();
    let psnr: f64 = recs.iter().find(|r| r["metric"] == "psnr").unwrap()["value"].parse().unwrap();
    assert!((psnr - 20.0).abs() < 1e-9);
    let r = run(&["eval", "--truth", s(&a), "--estimate", s(&b), "--kind", "traffic"]);
    assert!(r.status.success());
    assert_eq!(code(&["eval", "--truth", s(&a), "--estimate", s(&b), "--kind", "audio"]), 2);
    let other = dir.path().join("c.tensor");
    io::save_tensor(&DenseTensor::zeros(&[2, 2]), &other).unwrap();
    assert_eq!(code(&["eval", "--truth", s(&a), "--estimate", s(&other)]), 1);
}

#[test]
fn traffic_and_pointcloud_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut wide = String::new();
    for sensor in 0..3 {
        let row: Vec<String> = (0..20).map(|c| format!("{}", 10 + sensor * 5 + c / 5 + c % 5)).collect();
        wide.push_str(&row.join(","));
        wide.push('\n');
    }
    let tp = dir.path().join("traffic.csv");
    std::fs::write(&tp, wide).unwrap();
    let out = dir.path().join("tr");
    let r = run(&[
        "complete", "--traffic", s(&tp), "--layout", "3,4,5", "--slice-missing-rate", "0.25",
        "--slice-mode", "1", "--core-shape", "2,2,2", "--iterations", "20", "--out", s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let names: Vec<String> = records(&out).iter().map(|r| r["metric"].clone()).collect();
    assert!(names.contains(&"rmse".to_string()) && names.contains(&"mape".to_string()));
    assert_eq!(code(&["complete", "--traffic", s(&tp), "--sampling-rate", "0.5", "--out", s(&dir.path().join("x"))]), 1);

    let mut pc = String::new();
    for i in 0..60 {
        let t = i as f64 / 60.0;
        pc.push_str(&format!("{} {} {} {} {} {}\n", t, 1.0 - t, t * t, t, 0.5, 1.0 - t));
    }
    let pp = dir.path().join("cloud.txt");
    std::fs::write(&pp, pc).unwrap();
    let out = dir.path().join("pc");
    let r = run(&[
        "complete", "--pointcloud", s(&pp), "--sampling-rate", "0.5", "--core-shape", "2,2,2,2",
        "--iterations", "20", "--out", s(&out),
    ]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.lines().count(), 1 + 30 * 3);
    assert!(records(&out).iter().all(|r| r["region"] == "heldout"));
    let bad = dir.path().join("pcbad");
    assert_eq!(
        code(&["complete", "--pointcloud", s(&pp), "--slice-missing-rate", "0.5", "--out", s(&bad)]),
        2
    );
}
