//! Integration tests driving the compiled binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fcarac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcarac"))
        .args(args)
        .output()
        .expect("spawn fcarac")
}

fn ok(args: &[&str]) {
    let out = fcarac(args);
    assert!(
        out.status.success(),
        "fcarac {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_cfg(dir: &Path, extra: &str) -> String {
    let path = dir.join("cfg.txt");
    fs::write(&path, format!("steps_pretrain = 80\nsteps_finetune = 30\n{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn criterion_8_seeded_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = write_cfg(dir, "");
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let data = p(dir, &format!("data_{run}"));
        let pre = p(dir, &format!("pre_{run}"));
        let ft = p(dir, &format!("ft_{run}"));
        let ev = p(dir, &format!("ev_{run}"));
        ok(&[
            "generate", "--out-dir", &data, "--seed", "11", "--n-train", "10", "--n-val", "2",
            "--n-test", "5",
        ]);
        ok(&["pretrain", "--data", &data, "--config", &cfg, "--out-dir", &pre]);
        let ckpt = format!("{pre}/model.ckpt");
        ok(&[
            "finetune", "--data", &data, "--checkpoint", &ckpt, "--config", &cfg, "--k", "3",
            "--out-dir", &ft,
        ]);
        ok(&[
            "eval", "--data", &data, "--checkpoint", &format!("{ft}/model.ckpt"), "--config",
            &cfg, "--store", &format!("{ft}/store.bin"), "--k", "3", "--split", "test",
            "--out-dir", &ev,
        ]);
        reports.push((
            fs::read(format!("{ev}/report.json")).unwrap(),
            fs::read(format!("{ev}/report.csv")).unwrap(),
            fs::read(format!("{ft}/model.ckpt")).unwrap(),
            fs::read(format!("{data}/annotations.jsonl")).unwrap(),
        ));
    }
    assert_eq!(reports[0].0, reports[1].0, "report.json differs between runs");
    assert_eq!(reports[0].1, reports[1].1, "report.csv differs between runs");
    assert_eq!(reports[0].2, reports[1].2, "checkpoint differs between runs");
    assert_eq!(reports[0].3, reports[1].3, "dataset differs between runs");
    println!("ACCEPTANCE PASS: criterion 8 - determinism (seeded CLI runs byte-identical)");
}

#[test]
fn exit_codes_follow_the_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = p(dir, "data");
    ok(&[
        "generate", "--out-dir", &data, "--seed", "3", "--n-train", "4", "--n-val", "1",
        "--n-test", "0",
    ]);
    let cfg = write_cfg(dir, "");

    // Missing checkpoint -> 2.
    let out = fcarac(&[
        "eval", "--data", &data, "--checkpoint", &p(dir, "nope.ckpt"), "--config", &cfg,
        "--split", "train", "--out-dir", &p(dir, "ev"),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Unparseable config -> 3.
    let bad = dir.join("bad.txt");
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    let out = fcarac(&[
        "pretrain", "--data", &data, "--config", bad.to_str().unwrap(), "--out-dir",
        &p(dir, "pre"),
    ]);
    assert_eq!(out.status.code(), Some(3));

    // Empty split -> 4.
    let pre = p(dir, "pre");
    ok(&["pretrain", "--data", &data, "--config", &cfg, "--out-dir", &pre]);
    let out = fcarac(&[
        "eval", "--data", &data, "--checkpoint", &format!("{pre}/model.ckpt"), "--config", &cfg,
        "--split", "test", "--out-dir", &p(dir, "ev"),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn generate_supports_empty_datasets_and_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let empty = p(dir, "empty");
    ok(&[
        "generate", "--out-dir", &empty, "--seed", "0", "--n-train", "0", "--n-val", "0",
        "--n-test", "0",
    ]);
    assert!(Path::new(&empty).join("annotations.jsonl").exists());

    let a = p(dir, "a");
    let b = p(dir, "b");
    for out in [&a, &b] {
        ok(&[
            "generate", "--out-dir", out, "--seed", "9", "--n-train", "3", "--n-val", "1",
            "--n-test", "1",
        ]);
    }
    assert_eq!(
        fs::read(format!("{a}/annotations.jsonl")).unwrap(),
        fs::read(format!("{b}/annotations.jsonl")).unwrap()
    );
    assert_eq!(
        fs::read(format!("{a}/split.json")).unwrap(),
        fs::read(format!("{b}/split.json")).unwrap()
    );
}

#[test]
fn predict_matches_direct_forward() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = p(dir, "data");
    let cfg_path = write_cfg(dir, "");
    ok(&[
        "generate", "--out-dir", &data, "--seed", "21", "--n-train", "6", "--n-val", "1",
        "--n-test", "2",
    ]);
    let pre = p(dir, "pre");
    ok(&["pretrain", "--data", &data, "--config", &cfg_path, "--out-dir", &pre]);
    let out = p(dir, "pr");
    ok(&[
        "predict", "--data", &data, "--checkpoint", &format!("{pre}/model.ckpt"), "--config",
        &cfg_path, "--sequence", "test0000", "--out-dir", &out,
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(format!("{out}/test0000.json")).unwrap())
            .unwrap();

    // Recompute through the library with the same checkpoint.
    let cfg = fcarac_core::config::Config::load(Path::new(&cfg_path)).unwrap();
    let model = fcarac_core::head::Model::load(
        cfg,
        Path::new(&format!("{pre}/model.ckpt")),
    )
    .unwrap();
    let dataset = fcarac_core::seqdata::Dataset::load(Path::new(&data)).unwrap();
    let seq = dataset.get("test0000").unwrap();
    let expect = model.predict(seq, None).unwrap().count();
    let got = summary["count"].as_f64().unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    // Density CSV rows cover every frame.
    let csv = fs::read_to_string(format!("{out}/test0000.density.csv")).unwrap();
    let rows = csv.lines().count() - 1;
    let density = model.predict(seq, None).unwrap();
    assert_eq!(rows, density.len());
}

#[test]
fn zero_step_tta_equals_plain_eval() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let data = p(dir, "data");
    let cfg = write_cfg(dir, "tta_steps = 0\n");
    ok(&[
        "generate", "--out-dir", &data, "--seed", "4", "--n-train", "6", "--n-val", "1",
        "--n-test", "3",
    ]);
    let pre = p(dir, "pre");
    ok(&["pretrain", "--data", &data, "--config", &cfg, "--out-dir", &pre]);
    let ckpt = format!("{pre}/model.ckpt");
    for (flagged, out) in [(false, "plain"), (true, "tta")] {
        let out = p(dir, out);
        let mut args = vec![
            "eval", "--data", &data, "--checkpoint", &ckpt, "--config", &cfg, "--split",
            "test", "--out-dir", &out,
        ];
        if flagged {
            args.push("--tta");
        }
        ok(&args);
    }
    assert_eq!(
        fs::read(dir.join("plain/report.csv")).unwrap(),
        fs::read(dir.join("tta/report.csv")).unwrap()
    );
}
