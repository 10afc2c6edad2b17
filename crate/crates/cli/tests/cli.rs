use std::path::Path;
use std::process::{Command, Output};

use dnf_core::config::PipelineConfig;
use dnf_core::pipeline::{ReferenceSplit, Run};

fn dnf(run_dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dnf"))
        .arg("--run-dir")
        .arg(run_dir)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, cfg: &PipelineConfig) -> String {
    let path = dir.join("smoke.json");
    std::fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    assert_eq!(code(&dnf(&run, &["--preset", "enormous", "synth-data"])), 2);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"seed\": 1}").unwrap();
    assert_eq!(code(&dnf(&run, &["--config", bad.to_str().unwrap(), "synth-data"])), 2);
    assert_eq!(code(&dnf(&run, &["no-such-verb"])), 2);
}

#[test]
fn missing_prerequisite_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &PipelineConfig::smoke());
    let run = dir.path().join("run");
    let out = dnf(&run, &["--config", &cfg, "finetune-shape"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("`prepare`"));
    assert_eq!(code(&dnf(&run, &["sample", "--n", "1"])), 3);
}

#[test]
fn diverging_training_exits_with_4() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig::smoke();
    cfg.fields.shape_training.lr_weights = 1e200;
    cfg.fields.shape_training.lr_latent = 1e200;
    let cfg = write_config(dir.path(), &cfg);
    let run = dir.path().join("run");
    for verb in ["synth-data", "prepare"] {
        assert_eq!(code(&dnf(&run, &["--config", &cfg, verb])), 0);
    }
    let out = dnf(&run, &["train-shape"]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn stage_verbs_sample_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &PipelineConfig::smoke());
    let run_dir = dir.path().join("run");
    let first = dnf(&run_dir, &["--config", &cfg, "synth-data"]);
    assert_eq!(code(&first), 0);
    let report: serde_json::Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(report["stage"], "synth-data");
    for verb in ["prepare", "train-shape", "train-motion", "decompose", "finetune-shape", "finetune-motion", "train-shape-diff", "train-motion-diff"] {
        let out = dnf(&run_dir, &[verb]);
        assert_eq!(code(&out), 0, "{verb}: {}", String::from_utf8_lossy(&out.stderr));
    }
    // completed stages are not rerun
    let again: serde_json::Value = serde_json::from_slice(&dnf(&run_dir, &["prepare"]).stdout).unwrap();
    let stored: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("stage_reports/prepare.json")).unwrap()).unwrap();
    assert_eq!(again, stored);

    let out = dnf(&run_dir, &["--seed", "3", "sample", "--name", "g", "--n", "3", "--frames", "4"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let sampled: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!sampled["samples"].as_array().unwrap().is_empty());

    let out = dnf(&run_dir, &["--seed", "4", "evaluate", "--gen", "g", "--reference", "train"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run = Run::open(&run_dir).unwrap();
    let direct = run.evaluate(&run_dir.join("samples/g"), ReferenceSplit::Train, 4).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), direct.to_csv());
    assert_eq!(std::fs::read_to_string(run_dir.join("reports/metrics.csv")).unwrap(), direct.to_csv());

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_ne!(code(&dnf(&run_dir, &["evaluate", "--gen", empty.to_str().unwrap()])), 0);
}
