use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uroadnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs a failing command and returns its parsed error line.
fn fails(args: &[&str]) -> Value {
    let out = run(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim().lines().count(), 1, "error must be one line: {err}");
    serde_json::from_str(err.trim()).expect("error line is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(p: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for sub in ["images", "masks", "centerlines"] {
        let mut entries: Vec<_> = fs::read_dir(root.join(sub)).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for e in entries {
            out.push((e.strip_prefix(root).unwrap().to_path_buf(), fs::read(&e).unwrap()));
        }
    }
    out
}

const TINY: [&str; 8] = [
    "--set",
    "model.base_channels=4",
    "--set",
    "model.groups=2",
    "--set",
    "model.stages=1",
    "--set",
    "model.heads=2",
];

#[test]
fn generate_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&["generate-data", "--count", "3", "--size", "64", "--seed", "7", "--out", s(d)]);
    }
    let fa = files(&a);
    assert_eq!(fa.len(), 9);
    assert_eq!(fa, files(&b));
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
    let m = json(a.join("manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["count"], 3);
    assert!(a.join("resolved_config.txt").is_file());

    // refuses to overwrite without --force
    let e = fails(&["generate-data", "--count", "1", "--size", "64", "--out", s(&a)]);
    assert_eq!(e["error"], "argument");
    ok(&["generate-data", "--count", "3", "--size", "64", "--seed", "7", "--out", s(&a), "--force"]);
    assert_eq!(files(&a), files(&b));

    let empty = dir.path().join("empty");
    ok(&["generate-data", "--count", "0", "--out", s(&empty)]);
    assert_eq!(json(empty.join("manifest.json"))["count"], 0);
    assert!(files(&empty).is_empty());
}

#[test]
fn configuration_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let e = fails(&["params", "--out", s(&out), "--set", "model.widht=3"]);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("model.widht"));
    let e = fails(&["train", "--data", "/definitely/not/here", "--out", s(&out)]);
    assert_eq!(e["error"], "load");
    assert!(e["message"].as_str().unwrap().contains("/definitely/not/here"));
    let e = fails(&["no-such-command"]);
    assert_eq!(e["error"], "argument");
}

#[test]
fn config_file_and_set_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.txt");
    fs::write(&file, "params.height = 64\nparams.width = 32\nmodel.base_channels = 8\n").unwrap();
    let out = dir.path().join("p");
    ok(&[
        "params",
        "--config",
        s(&file),
        "--width",
        "48",
        "--set",
        "params.height=16",
        "--out",
        s(&out),
    ]);
    let snap = fs::read_to_string(out.join("resolved_config.txt")).unwrap();
    assert!(snap.contains("params.height = 16"));
    assert!(snap.contains("params.width = 48"));
    assert!(snap.contains("model.base_channels = 8"));
}

#[test]
fn params_report_is_stable_and_ordered() {
    let dir = tempfile::tempdir().unwrap();
    let count = |variant: &str, out: &str| -> u64 {
        let o = dir.path().join(out);
        ok(&["params", "--variant", variant, "--out", s(&o)]);
        json(o.join("params.json"))[0]["params"].as_u64().unwrap()
    };
    let base = count("baseline", "b1");
    assert_eq!(base, count("baseline", "b2"));
    assert!(count("dual-sa", "d") > base);
}

#[test]
fn evaluate_and_trace_on_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate-data", "--count", "2", "--size", "96", "--seed", "3", "--out", s(&data)]);
    let ev = dir.path().join("eval");
    ok(&["evaluate", "--pred", s(&data), "--gt", s(&data), "--out", s(&ev), "--jobs", "2"]);
    let agg = json(ev.join("aggregate.json"));
    assert_eq!(agg["rho"], 2.0);
    assert_eq!(agg["sigma"], 0.4);
    assert_eq!(agg["pixel"]["f1"], 1.0);
    assert_eq!(agg["pixel"]["iou"], 1.0);
    assert_eq!(agg["relaxed"]["f1"], 1.0);
    let csv = fs::read_to_string(ev.join("pr_vs_rho.csv")).unwrap();
    assert!(csv.starts_with("rho,precision,recall,f1\n"));

    let tr = dir.path().join("trace");
    ok(&["trace", "--pred", s(&data), "--gt", s(&data), "--out", s(&tr), "--pairs", "6"]);
    let report = json(tr.join("trace.json"));
    // Skeletons of wide roads and junctions drift from the drawn centreline,
    // so single long paths can dip; the weighted mean stays high.
    let (mut paths, mut ov_sum) = (0, 0.0);
    for b in report["buckets"].as_array().unwrap() {
        let n = b["paths"].as_u64().unwrap();
        paths += n;
        if n > 0 {
            ov_sum += n as f64 * b["ov"].as_f64().unwrap();
            assert!(b["ad"].as_f64().unwrap() < 2.0, "bucket {b}");
        }
    }
    assert!(paths > 0);
    assert!(ov_sum / paths as f64 > 0.9, "mean OV {}", ov_sum / paths as f64);

    let e = fails(&["evaluate", "--pred", s(&data), "--gt", s(&dir.path().join("nope")), "--out", s(&dir.path().join("e2"))]);
    assert_eq!(e["error"], "load");
}

#[test]
fn train_infer_ablate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate-data", "--count", "4", "--size", "32", "--seed", "1", "--out", s(&data)]);
    let run_dir = dir.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run_dir), "--epochs", "2", "--lr", "0.001"];
    args.extend(TINY);
    let stdout = ok(&args);
    assert_eq!(stdout.lines().count(), 2);
    for line in stdout.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "lr", "train_loss", "val_loss", "val_iou"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
    }
    let ckpt = run_dir.join("best.safetensors");
    assert!(ckpt.is_file() && run_dir.join("optimizer.safetensors").is_file());

    let pred = dir.path().join("pred");
    ok(&["infer", "--checkpoint", s(&ckpt), "--input", s(&data), "--out", s(&pred)]);
    let score = image::open(pred.join("scores/sample_00000.png")).unwrap();
    assert_eq!((score.width(), score.height()), (32, 32));
    assert!(matches!(score, image::DynamicImage::ImageLuma16(_)));
    let mask = image::open(pred.join("masks/sample_00000.png")).unwrap();
    assert!(matches!(mask, image::DynamicImage::ImageLuma8(_)));

    // predictions feed evaluate directly
    ok(&["evaluate", "--pred", s(&pred), "--gt", s(&data), "--out", s(&dir.path().join("ev"))]);

    let e = fails(&[
        "infer",
        "--checkpoint",
        s(&ckpt),
        "--input",
        s(&data),
        "--out",
        s(&dir.path().join("bad")),
        "--set",
        "model.base_channels=8",
    ]);
    assert_eq!(e["error"], "param_shape");

    let abl = dir.path().join("abl");
    let mut args = vec!["ablate", "--data", s(&data), "--out", s(&abl), "--max-steps", "1"];
    args.extend(TINY);
    ok(&args);
    let csv = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    assert!(csv.lines().next().unwrap().ends_with("f1,iou"));
    for (row, v) in rows.iter().zip(["baseline", "c-msa", "i-msa", "dual-sa"]) {
        assert_eq!(row.split(',').nth(1), Some(v));
    }
}

#[test]
fn label_rate_sweep_runs_each_rate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["generate-data", "--count", "5", "--size", "32", "--seed", "2", "--out", s(&data)]);
    let abl = dir.path().join("abl");
    let mut args = vec![
        "ablate",
        "--data",
        s(&data),
        "--out",
        s(&abl),
        "--max-steps",
        "1",
        "--label-rates",
        "1.0,0.75,0.5",
    ];
    args.extend(TINY);
    ok(&args);
    let csv = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    for rate in ["1", "0.75", "0.5"] {
        assert!(abl.join(format!("rate_{rate}")).join("dual-sa").join("train_log.jsonl").is_file());
    }
}
