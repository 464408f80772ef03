use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3

[synth]
dim = 16
per_class = 24
min_tiles = 5
max_tiles = 12
shifted_per_class = 12

[train]
max_epochs = 6
learning_rate = 1e-3
finetune_train = 36
finetune_val = 12

[mc]
passes = 5

[triage]
simulations = 50
"#;

fn pdls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdls"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn pdls")
}

fn ok(args: &[&str]) {
    let out = pdls(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn pipeline(config: &Path, out: &Path) {
    let (c, o) = (config.to_str().unwrap(), out.to_str().unwrap());
    for cmd in ["synth-gen", "train", "calibrate", "evaluate"] {
        ok(&[cmd, "--config", c, "--out", o, "--no-timestamp"]);
    }
}

#[test]
fn missing_config_is_a_usage_error() {
    let out = pdls(&["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), SMALL);
    let out = pdls(&["train", "--config", c.to_str().unwrap(), "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), "[train]\nepochs = 3\n");
    let out = pdls(&["train", "--config", c.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epochs"));
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), SMALL);
    let out_dir = dir.path().join("empty");
    let out = pdls(&["calibrate", "--config", c.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn full_pipeline_produces_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    pipeline(&c, &out);
    for f in [
        "manifest.csv",
        "embeddings.bin",
        "model.pdls",
        "training_log.csv",
        "thresholds.csv",
        "predictions.csv",
        "metrics.csv",
        "diagnosis_metrics.csv",
        "roc.csv",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    let header = preds.lines().next().unwrap();
    for col in ["specimen_id", "final_label", "branch", "low_confidence", "p_suspect", "p_mel_high", "p_other"] {
        assert!(header.split(',').any(|h| h == col), "{col} not in {header}");
    }
    // 24 per class: 17 train, 4 val, 3 test
    assert_eq!(preds.lines().count(), 1 + 6 * 3);

    let (cs, os) = (c.to_str().unwrap(), out.to_str().unwrap());
    ok(&["triage-sim", "--config", cs, "--out", os, "--sims", "1000", "--no-timestamp"]);
    let curve = std::fs::read_to_string(out.join("triage_curve.csv")).unwrap();
    assert!(curve.starts_with("# S=1000\n"), "{curve}");
    let last = curve.lines().last().unwrap();
    assert!(last.starts_with("1,1,"), "{last}");

    ok(&["finetune", "--config", cs, "--out", os]);
    assert!(out.join("finetuned.pdls").is_file());
    ok(&["infer", "--config", cs, "--out", os, "--split", "val"]);
    let preds = std::fs::read_to_string(out.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("# generated_unix_time="));
}

#[test]
fn identical_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&c, &a);
    pipeline(&c, &b);
    for f in ["manifest.csv", "embeddings.bin", "model.pdls", "predictions.csv", "metrics.csv", "roc.csv", "thresholds.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let other = dir.path().join("c");
    ok(&["synth-gen", "--config", c.to_str().unwrap(), "--out", other.to_str().unwrap(), "--seed", "4"]);
    assert_ne!(
        std::fs::read(a.join("embeddings.bin")).unwrap(),
        std::fs::read(other.join("embeddings.bin")).unwrap()
    );
}

#[test]
fn qc_embeds_synthetic_slides() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(
        dir.path(),
        "seed = 5\n[synth]\nslides_per_class = 1\nslide_size = 768\nper_class = 2\ndim = 8\nmin_tiles = 2\nmax_tiles = 3\n[qc]\nink_training_slides = 4\nembed_dim = 16\n",
    );
    let out = dir.path().join("out");
    let (cs, os) = (c.to_str().unwrap(), out.to_str().unwrap());
    ok(&["synth-gen", "--config", cs, "--out", os]);
    ok(&["qc", "--config", cs, "--out", os, "--no-timestamp"]);
    assert!(out.join("preprocessing.pdls").is_file());
    let report = std::fs::read_to_string(out.join("qc_report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 6);
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert!(manifest.lines().count() > 1, "{report}");
    let first = std::fs::read(out.join("embeddings.bin")).unwrap();
    ok(&["qc", "--config", cs, "--out", os, "--reuse-preprocessing"]);
    assert_eq!(std::fs::read(out.join("embeddings.bin")).unwrap(), first);
}

#[test]
fn ablation_writes_per_seed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let c = write_config(
        dir.path(),
        &format!("{SMALL}\n[ablation]\nseeds = [1, 2]\nmax_epochs = 2\nmc_passes = 3\n"),
    );
    let out = dir.path().join("out");
    ok(&["ablation", "--config", c.to_str().unwrap(), "--out", out.to_str().unwrap(), "--no-timestamp"]);
    let runs = std::fs::read_to_string(out.join("ablation_runs.csv")).unwrap();
    assert!(runs.starts_with("# melanocytic_retention="));
    assert_eq!(runs.lines().count(), 2 + 4);
    let summary = std::fs::read_to_string(out.join("ablation_summary.csv")).unwrap();
    assert!(summary.contains("suspect_sensitivity,"));
}
