mod common;

use common::*;
use nlpd_tmo::hdrimg::DisplayRange;
use nlpd_tmo::pyramid::{self, dump, level_dims, PyramidParams};
use nlpd_tmo::Plane;
use serde_json::Value;

fn json(out: &std::process::Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn can_output_stays_in_display_range() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 40, 30, 1);
    let weights = dir.path().join("w.bin");
    write_init_weights(&weights, 3);
    let (png, pfm) = (dir.path().join("o.png"), dir.path().join("o.pfm"));
    ok(&[
        "tonemap", "--input", s(&input), "--output", s(&png), "--method", "can",
        "--weights", s(&weights), "--pfm", s(&pfm), "--resize-short", "0",
    ]);
    let lum = read_luminance(&pfm);
    let d = DisplayRange::default();
    assert!(lum.data().iter().all(|&v| d.contains(v)), "{} {}", lum.min(), lum.max());
    let (w, h, c, codes) = read_png(&png);
    assert_eq!((w, h, c, codes.len()), (40, 30, 1, 1200));
}

#[test]
fn rgb_input_gives_rgb_png() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_rgb_scene(dir.path(), "in.pfm", 24, 16, 2);
    let png = dir.path().join("o.png");
    ok(&["tonemap", "--input", s(&input), "--output", s(&png), "--method", "log", "--resize-short", "0"]);
    let (w, h, c, codes) = read_png(&png);
    assert_eq!((w, h, c), (24, 16, 3));
    // The tint survives colour reattachment.
    assert!(codes.chunks(3).any(|p| p[0] != p[2]));
}

#[test]
fn every_method_runs_and_nlpd_opt_writes_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 20, 20, 4);
    for m in ["linear", "log", "sigmoid", "nlpd-opt"] {
        let png = dir.path().join(format!("{m}.png"));
        ok(&[
            "tonemap", "--input", s(&input), "--output", s(&png), "--method", m,
            "--resize-short", "0", "--opt-iters", "5", "--levels", "3",
        ]);
        assert!(png.exists());
    }
    let trace = dir.path().join("trace.csv");
    ok(&[
        "tonemap", "--input", s(&input), "--output", s(&dir.path().join("t.png")),
        "--method", "nlpd-opt", "--opt-iters", "5", "--levels", "3", "--trace", s(&trace),
    ]);
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("iter,nlpd"));
    let vals: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(!vals.is_empty() && vals.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn pyramid_depth_changes_the_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 64, 64, 5);
    let weights = dir.path().join("w.bin");
    write_init_weights(&weights, 9);
    let mut outs = Vec::new();
    for levels in ["1", "5"] {
        let pfm = dir.path().join(format!("l{levels}.pfm"));
        ok(&[
            "tonemap", "--input", s(&input), "--output", s(&dir.path().join("x.png")),
            "--method", "can", "--weights", s(&weights), "--levels", levels,
            "--pfm", s(&pfm),
        ]);
        outs.push(read_luminance(&pfm));
    }
    assert!(outs[0].max_abs_diff(&outs[1]) > 1e-3);
}

#[test]
fn resize_short_side() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 37, 23, 6);
    let png = dir.path().join("o.png");
    ok(&["tonemap", "--input", s(&input), "--output", s(&png), "--method", "linear", "--resize-short", "0"]);
    let (w, h, ..) = read_png(&png);
    assert_eq!((w, h), (37, 23));
    ok(&["tonemap", "--input", s(&input), "--output", s(&png), "--method", "linear", "--resize-short", "46"]);
    let (w, h, ..) = read_png(&png);
    assert_eq!((w, h), (74, 46));
}

#[test]
fn failures_exit_nonzero_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 16, 16, 7);
    let png = dir.path().join("o.png");
    let out = run(&["tonemap", "--input", s(&input), "--output", s(&png), "--method", "can"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--weights"));
    let out = run(&["tonemap", "--input", s(&input), "--output", s(&png), "--method", "durand"]);
    assert!(!out.status.success());
    let missing = dir.path().join("nope.pfm");
    let out = run(&["tonemap", "--input", s(&missing), "--output", s(&png), "--method", "linear"]);
    assert!(!out.status.success());
    let out = run(&["tonemap", "--input", s(&input), "--output", s(&png), "--method", "linear", "--smax", "0.01"]);
    assert!(!out.status.success());
    assert!(!png.exists());
}

#[test]
fn tonemap_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 32, 24, 8);
    let weights = dir.path().join("w.bin");
    write_init_weights(&weights, 1);
    let mut bytes = Vec::new();
    for (i, threads) in ["1", "2"].iter().enumerate() {
        let pfm = dir.path().join(format!("{i}.pfm"));
        let out = bin()
            .env("NLPD_TMO_THREADS", threads)
            .args([
                "tonemap", "--input", s(&input), "--output", s(&dir.path().join("o.png")),
                "--method", "can", "--weights", s(&weights), "--pfm", s(&pfm),
            ])
            .output()
            .unwrap();
        assert!(out.status.success());
        bytes.push(std::fs::read(&pfm).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
    let out = run(&["--threads", "0", "tonemap", "--input", s(&input), "--output", "x.png", "--method", "linear"]);
    assert!(!out.status.success());
}

#[test]
fn eval_identity_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 30, 20, 9);
    let out = ok(&["eval", "--input", s(&input), "--against", s(&input), "--calibrate-against"]);
    let v = json(&out);
    assert_eq!(v["version"], 1);
    assert_eq!(v["images"][0]["distance"].as_f64(), Some(0.0));
    assert_eq!(v["mean"].as_f64(), Some(0.0));
}

#[test]
fn eval_directory_report() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..3 {
        write_scene(dir.path(), &format!("s{i}.pfm"), 24, 24, 20 + i);
    }
    std::fs::write(dir.path().join("readme.txt"), "skip").unwrap();
    let report = dir.path().join("r.json");
    ok(&["eval", "--input", s(dir.path()), "--method", "linear", "--levels", "4", "--output", s(&report)]);
    let v: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    let images = v["images"].as_array().unwrap();
    assert_eq!(images.len(), 3);
    let d: Vec<f64> = images.iter().map(|i| i["distance"].as_f64().unwrap()).collect();
    assert!(d.iter().all(|&x| x > 0.0));
    assert!((v["mean"].as_f64().unwrap() - d.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert_eq!(images[0]["per_level"].as_array().unwrap().len(), 4);
    assert_eq!(v["method"], "linear");
    assert_eq!(v["params"]["beta"].as_f64(), Some(0.6));
}

#[test]
fn eval_nlpd_opt_beats_linear() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..2 {
        write_scene(dir.path(), &format!("s{i}.pfm"), 32, 32, 40 + i);
    }
    let mean = |m: &str| {
        json(&ok(&["eval", "--input", s(dir.path()), "--method", m, "--opt-iters", "60"]))["mean"]
            .as_f64()
            .unwrap()
    };
    assert!(mean("nlpd-opt") < mean("linear"));
}

#[test]
fn benchmark_report_contents() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 40, 20, 10);
    let out = ok(&[
        "benchmark", "--input", s(&input), "--methods", "can,linear", "--reps", "2",
        "--resize-short", "32",
    ]);
    let v = json(&out);
    assert_eq!(v["version"], 1);
    assert_eq!((v["width"].as_u64(), v["height"].as_u64()), (Some(64), Some(32)));
    assert_eq!(v["param_count"], 38_400);
    assert_eq!(v["model"]["params"]["conv_total"], 38_016);
    assert_eq!(v["trained_weights"], false);
    let methods = v["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 2);
    let can = &methods[0];
    assert_eq!(can["method"], "can");
    assert_eq!(can["times_s"].as_array().unwrap().len(), 2);
    for stage in ["decompose_s", "forward_s", "collapse_s"] {
        assert!(can["stages"][stage].as_f64().unwrap() >= 0.0);
    }
    assert!(methods[1]["stages"].is_null());
    let out = run(&["benchmark", "--input", s(&input), "--reps", "0"]);
    assert!(!out.status.success());
}

#[test]
fn decompose_constant_image_has_zero_bandpass() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_plane(&Plane::filled(37, 21, 7.0), &dir.path().join("c.pfm"));
    let out = dir.path().join("dump");
    let args = ["decompose", "--input", s(&input), "--out", s(&out), "--levels", "4", "--resize-short", "0"];
    // Calibration needs two distinct values.
    assert!(!run(&args).status.success());
    let mut raw = args.to_vec();
    raw.push("--raw");
    ok(&raw);
    let m = dump::read_manifest(&out).unwrap();
    let want: Vec<[usize; 2]> = level_dims(37, 21, 4).into_iter().map(|(w, h)| [w, h]).collect();
    assert_eq!(m.dims, want);
    assert_eq!(m.dims[1], [19, 11]);
    let (lap, _) = dump::read_laplacian(&out).unwrap();
    for b in &lap.bandpass {
        assert!(b.max_abs() <= 1e-6, "{}", b.max_abs());
    }
    assert_eq!(m.normalized.len(), 4);
}

#[test]
fn decompose_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_scene(dir.path(), "in.pfm", 45, 33, 11);
    let out = dir.path().join("dump");
    ok(&["decompose", "--input", s(&input), "--out", s(&out), "--resize-short", "0"]);
    let (lap, m) = dump::read_laplacian(&out).unwrap();
    let params = PyramidParams::with_levels(5);
    assert_eq!(m.params, params);
    let back = pyramid::collapse_laplacian(&lap, &params.lowpass_taps).unwrap();
    let (_, lum) = nlpd_tmo::cli::prepare(
        &input,
        &nlpd_tmo::cli::Preprocess { smax: 5000.0, smin: 0.05, levels: 5, resize_short: 0 },
    )
    .unwrap();
    let x1 = pyramid::front_end(&lum, params.gamma).unwrap();
    assert!(back.max_abs_diff(&x1) <= 1e-6 * x1.max_abs());
}

#[test]
fn train_and_resume_from_cli() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt) = (dir.path().join("data"), dir.path().join("ckpt"));
    let common = [
        "--data", s(&data), "--out", s(&ckpt), "--crop", "16", "--levels", "3",
        "--batch-size", "2", "--split", "0.75",
    ];
    let mut first = vec!["train", "--synthetic", "4", "--epochs", "2"];
    first.extend(common);
    ok(&first);
    for f in ["weights.bin", "adam.bin", "log.csv", "split.json"] {
        assert!(ckpt.join(f).exists(), "{f}");
    }
    let split: Value = serde_json::from_slice(&std::fs::read(ckpt.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["train"].as_array().unwrap().len(), 3);
    let mut second = vec!["train", "--epochs", "3", "--resume"];
    second.extend(common);
    ok(&second);
    let log = nlpd_tmo::trainer::read_log_csv(&ckpt.join("log.csv")).unwrap();
    assert_eq!(log.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![0, 1, 2]);
    let w = nlpd_tmo::cantmo::load_weights(&ckpt.join("weights.bin")).unwrap();
    assert_eq!(w.meta.epochs, 3);
    // The trained weights drive the tone mapper.
    let png = dir.path().join("o.png");
    let img = data.join("scene_00.pfm");
    ok(&["tonemap", "--input", s(&img), "--output", s(&png), "--method", "can", "--weights", s(&ckpt.join("weights.bin")), "--resize-short", "32"]);
}
