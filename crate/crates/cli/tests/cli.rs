use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

const SUBCOMMANDS: [&str; 9] = [
    "stats",
    "split",
    "augment",
    "anchors",
    "compare-metrics",
    "eval",
    "focal",
    "cbam-check",
    "bench",
];

fn data() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/lines20")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlinedet"))
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn help_everywhere() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let out = run(&[sub, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{sub}");
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(text.contains("--config") && text.contains("--out"), "{sub}: {text}");
    }
    let text = String::from_utf8(run(&["cbam-check", "--help"]).stdout).unwrap();
    for flag in [
        "--shape",
        "--reduction",
        "--kernel-size",
        "--seed",
        "--step",
        "--tol",
        "--load-params",
        "--save-params",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["anchors", "--bogus"]).status.code(), Some(64));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(run(&["anchors", "--data", "/nonexistent/dir"]).status.code(), Some(1));
    assert_eq!(run(&["focal", "--p", "1.5"]).status.code(), Some(1));
    let d = data();
    let d = d.to_str().unwrap();
    assert_eq!(
        run(&["anchors", "--data", d, "--k", "4", "--format", "yolo"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        run(&[
            "cbam-check",
            "--shape",
            "1,4,3,3",
            "--reduction",
            "2",
            "--tol",
            "1e-300"
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn cbam_check_passes_and_round_trips_params() {
    let dir = tempfile::tempdir().unwrap();
    let blob = dir.path().join("p.bin");
    let blob = blob.to_str().unwrap();
    let base = ["cbam-check", "--shape", "2,8,5,5", "--reduction", "4", "--seed", "41"];
    let mut args = base.to_vec();
    args.extend(["--save-params", blob]);
    let first = json(&run(&args));
    assert_eq!(first["pass"], Value::Bool(true));
    assert!(first["report"]["max_rel_err"].as_f64().unwrap() <= 1e-5);

    let mut args = base.to_vec();
    args.extend(["--load-params", blob]);
    let again = json(&run(&args));
    assert_eq!(again["report"], first["report"]);
}

#[test]
fn anchors_json_and_yolo_line() {
    let d = data();
    let d = d.to_str().unwrap();
    let v = json(&run(&[
        "anchors",
        "--data",
        d,
        "--metric",
        "one-minus-iou",
        "--k",
        "9",
        "--seed",
        "41",
    ]));
    for key in ["small", "medium", "large"] {
        let group = v[key].as_array().unwrap();
        assert_eq!(group.len(), 3);
        assert!(group.iter().all(|p| p.as_array().unwrap().len() == 2));
    }
    let out = run(&["anchors", "--data", d, "--format", "yolo"]);
    assert!(out.status.success());
    let line = String::from_utf8(out.stdout).unwrap();
    let ints: Vec<u64> = line.trim().split(',').map(|s| s.trim().parse().unwrap()).collect();
    assert_eq!(ints.len(), 18);
}

#[test]
fn primary_output_is_reproducible() {
    let d = data();
    let d = d.to_str().unwrap();
    let cases: [&[&str]; 5] = [
        &["anchors", "--data", d, "--metric", "euclidean"],
        &["compare-metrics", "--data", d, "--seed", "7"],
        &["split", "--data", d],
        &["stats", "--data", d, "--format", "csv"],
        &["focal", "--grid", "9", "--format", "csv"],
    ];
    for args in cases {
        let a = run(args);
        let b = run(args);
        assert!(a.status.success(), "{args:?}: {}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn split_and_stats_reports() {
    let d = data();
    let d = d.to_str().unwrap();
    let v = json(&run(&["split", "--data", d]));
    assert_eq!(v["sizes"], serde_json::json!([16, 2, 2]));
    assert_eq!(v["seed"], 41);

    let out = run(&["stats", "--data", d, "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("class,count,mean_w,mean_h"));
    assert_eq!(lines.count(), 5);

    let dir = tempfile::tempdir().unwrap();
    let hist = dir.path().join("hist.csv");
    let v = json(&run(&[
        "stats",
        "--data",
        d,
        "--bins",
        "4",
        "--histogram",
        hist.to_str().unwrap(),
    ]));
    let total: u64 = v["classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["count"].as_u64().unwrap())
        .sum();
    assert_eq!(total, v["total_annotations"].as_u64().unwrap());
    assert!(fs::read_to_string(hist).unwrap().lines().count() >= 4);
}

#[test]
fn eval_of_ground_truth_as_detections_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let mut dets = String::new();
    for entry in fs::read_to_string(data().join("manifest.txt")).unwrap().lines() {
        let f: Vec<&str> = entry.split_whitespace().collect();
        let stem = f[0].trim_end_matches(".png");
        let (w, h): (f64, f64) = (f[1].parse().unwrap(), f[2].parse().unwrap());
        for ann in fs::read_to_string(data().join(format!("{stem}.txt"))).unwrap().lines() {
            let v: Vec<f64> = ann.split_whitespace().map(|x| x.parse().unwrap()).collect();
            let (cx, cy, bw, bh) = (v[1] * w, v[2] * h, v[3] * w, v[4] * h);
            dets.push_str(&format!(
                "{stem} {} 0.9 {} {} {} {}\n",
                v[0],
                cx - bw / 2.0,
                cy - bh / 2.0,
                cx + bw / 2.0,
                cy + bh / 2.0
            ));
        }
    }
    let path = dir.path().join("dets.txt");
    fs::write(&path, dets).unwrap();
    let pr = dir.path().join("pr.csv");
    let d = data();
    let v = json(&run(&[
        "eval",
        "--gt",
        d.to_str().unwrap(),
        "--dets",
        path.to_str().unwrap(),
        "--iou",
        "0.5",
        "--pr-curve",
        pr.to_str().unwrap(),
    ]));
    assert_eq!(v["map@0.5"], 1.0);
    assert_eq!(v["map@0.5:0.95"], 1.0);
    assert_eq!(v["recall"], 1.0);
    assert!(fs::read_to_string(pr)
        .unwrap()
        .starts_with("class,rank,confidence,recall,precision"));

    let out = run(&[
        "eval",
        "--gt",
        d.to_str().unwrap(),
        "--dets",
        path.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("class,0.50,0.55,0.60"));
}

#[test]
fn augment_writes_a_loadable_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = data();
    let out = dir.path().join("aug");
    let v = json(&run(&[
        "augment",
        "--data",
        d.to_str().unwrap(),
        "--ops",
        "hflip;brightness:delta=-20..20",
        "--write-dir",
        out.to_str().unwrap(),
    ]));
    assert_eq!(v["output_images"], 60);
    assert!(out.join("frame_000_aug0.png").is_file());
    let stats = json(&run(&["stats", "--data", out.to_str().unwrap()]));
    assert_eq!(stats["n_images"], 60);

    let ann_only = dir.path().join("ann");
    let v = json(&run(&[
        "augment",
        "--data",
        d.to_str().unwrap(),
        "--ops",
        "affine:rot=-10..10",
        "--annotations-only",
        "--write-dir",
        ann_only.to_str().unwrap(),
    ]));
    assert_eq!(v["output_images"], 40);
    assert!(ann_only.join("manifest.txt").is_file());
    assert!(!ann_only.join("frame_000_aug0.png").exists());
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("focal.cfg");
    fs::write(&cfg, "p = 0.9\nlabel = 1\nalpha = 0.25\ngamma = 2\n").unwrap();
    let v = json(&run(&["focal", "--config", cfg.to_str().unwrap()]));
    let loss = v["points"][0]["loss"].as_f64().unwrap();
    assert!((loss - 2.634012891e-4).abs() < 1e-12);

    let v = json(&run(&[
        "focal",
        "--config",
        cfg.to_str().unwrap(),
        "--gamma",
        "0",
        "--alpha",
        "1",
    ]));
    let loss = v["points"][0]["loss"].as_f64().unwrap();
    assert!((loss + 0.9f64.ln()).abs() < 1e-15);

    fs::write(&cfg, "not_a_flag = 3\n").unwrap();
    assert_eq!(
        run(&["focal", "--config", cfg.to_str().unwrap()]).status.code(),
        Some(64)
    );
}

#[test]
fn bench_reports_consistent_fps() {
    let v = json(&run(&[
        "bench",
        "--shape",
        "1,16,8,8",
        "--reduction",
        "4",
        "--warmup",
        "1",
        "--iters",
        "3",
    ]));
    let b = &v["benchmark"];
    let (ms, fps) = (b["mean_ms"].as_f64().unwrap(), b["fps"].as_f64().unwrap());
    assert!(ms > 0.0 && (ms * fps - 1000.0).abs() < 1e-6);
}
