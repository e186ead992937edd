use std::path::Path;
use std::process::{Command, Output};

use bisimlab::model::ModelParams;
use bisimlab::pipeline::{sha256_hex, Manifest};

fn bisimlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bisimlab"))
        .args(args)
        .env("BISIMLAB_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

/// Every artifact in the manifest exists and hashes to the recorded value.
fn check_manifest(dir: &Path) -> Manifest {
    let manifest = Manifest::load(dir.join("manifest.json")).unwrap();
    assert!(!manifest.artifacts.is_empty());
    for (name, hash) in &manifest.artifacts {
        let bytes = std::fs::read(dir.join(name)).unwrap();
        assert_eq!(&sha256_hex(&bytes), hash, "{name}");
    }
    manifest
}

#[test]
fn bisim_on_counting_mdp() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for engine in ["naive", "refine"] {
        let out = bisimlab(&["bisim", "--counting", "8", "4", "--engine", engine, "--out-dir", out_dir]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        let summary = stdout_json(&out);
        assert_eq!(summary["num_blocks"], 9);
        assert_eq!(summary["fixed_point_verified"], true);
    }
    let manifest = check_manifest(dir.path());
    assert_eq!(manifest.command, "bisim");
    let partition = std::fs::read_to_string(dir.path().join("partition.csv")).unwrap();
    assert_eq!(partition.lines().count(), 10);
}

#[test]
fn bisim_reads_mdp_files() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = bisimlab::mdp::random_mdp(12, 2, 2, 5).unwrap();
    let path = dir.path().join("m.json");
    mdp.save_json(&path).unwrap();
    let out = bisimlab(&["bisim", "--mdp", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let expected = bisimlab::bisim::partition_refine(&mdp).unwrap().partition.num_blocks;
    assert_eq!(stdout_json(&out)["num_blocks"], expected);
}

#[test]
fn invalid_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let bad_json = dir.path().join("bad.json");
    std::fs::write(&bad_json, "{\"num_observations\": 2}").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["bisim"],
        vec!["bisim", "--counting", "3", "7", "--out-dir", d],
        vec!["bisim", "--mdp", bad_json.to_str().unwrap(), "--out-dir", d],
        vec!["bisim", "--counting", "8", "4", "--engine", "fast"],
        vec!["train", "--aux", "random:0", "--out-dir", d],
        vec!["train", "--preset", "nope", "--out-dir", d],
        vec!["train", "--preset", "tabular_counting", "--c-p", "-1", "--out-dir", d],
        vec!["verify", "--checkpoint", bad_json.to_str().unwrap(), "--out-dir", d],
        vec!["empirical-bisim", bad_json.to_str().unwrap(), "--out-dir", d],
    ];
    for args in cases {
        let out = bisimlab(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn collect_then_empirical_bisim() {
    let dir = tempfile::tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let out = bisimlab(&["collect", "--preset", "tabular_counting", "--out-dir", data_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    check_manifest(&data_dir);

    let emp_dir = dir.path().join("emp");
    let out = bisimlab(&[
        "empirical-bisim",
        data_dir.join("dataset.bslb").to_str().unwrap(),
        "--out-dir",
        emp_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = stdout_json(&out);
    // Full coverage of the counting MDP recovers all nine classes.
    assert_eq!(summary["num_blocks"], 9);
    check_manifest(&emp_dir);
}

#[test]
fn collect_images_writes_frames() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"data": {"collect_steps": 40}}"#).unwrap();
    let out = bisimlab(&[
        "collect",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = check_manifest(dir.path());
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.config["data"]["collect_steps"], 40);
    let frames = bisimlab::dataset::read_ppm_frames(dir.path().join("frames.ppm")).unwrap();
    assert!(frames.len() > 40);
    assert!(frames.iter().all(|(w, h, _)| (*w, *h) == (32, 32)));
}

#[test]
fn train_analyze_verify_tabular() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = bisimlab(&["train", "--preset", "tabular_counting", "--steps", "4000", "--seed", "1", "--out-dir", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = check_manifest(dir.path());
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.config["train"]["steps"], 4000);
    let metrics = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    for line in metrics.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let analysis_dir = dir.path().join("analysis");
    let out = bisimlab(&["analyze", "--checkpoint", &format!("{d}/best.ckpt"), "--out-dir", analysis_dir.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    check_manifest(&analysis_dir);
    let pca = std::fs::read_to_string(analysis_dir.join("pca.csv")).unwrap();
    assert!(pca.lines().count() > 1);

    let out = bisimlab(&["verify", "--out-dir", d]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(stdout_json(&out)["verdict"], "pass");

    // Collapse the encoder onto a constant and the check must fail.
    let (mut params, config) = ModelParams::load(dir.path().join("best.ckpt")).unwrap();
    for layer in &mut params.encoder.layers {
        layer.weight.fill(0.0);
    }
    let collapsed = dir.path().join("collapsed.ckpt");
    params.save(&collapsed, &config.to_string()).unwrap();
    let out = bisimlab(&["verify", "--checkpoint", collapsed.to_str().unwrap(), "--out-dir", d]);
    assert_eq!(code(&out), 3);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("collapse_report.json")).unwrap()).unwrap();
    assert!(report["num_violations"].as_u64().unwrap() > 0);
}

#[test]
fn divergence_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"train": {"base_lr": 1e200}}"#).unwrap();
    let out = bisimlab(&[
        "train",
        "--preset",
        "tabular_counting",
        "--config",
        cfg.to_str().unwrap(),
        "--steps",
        "50",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}
