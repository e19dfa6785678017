//! End-to-end smoke tests of the `synfault` binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_synfault"))
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("demo.toml");
    let output = dir.join("run").display().to_string();
    std::fs::write(
        &path,
        format!(
            r#"
seed = 7
output = "{output}"

[bearing]
n_elements = 9
ball_diameter_mm = 7.94
pitch_diameter_mm = 39.04

[healthy.simulate]
count = 2
duration_s = 4.0
sample_rate_hz = 12000.0
shaft_speed_rpm = 1797.0

[segmentation]
segment_len = 4096
per_class = 8

[target.synth]
alphas = [1.0, 0.6, 0.25]
defect_frequency_scale = 1.02

[train]
method = "proposed"
epochs = 2
batch_size = 4
eval_every = 2
{extra}
"#
        ),
    )
    .unwrap();
    path
}

#[test]
fn pipeline_generate_train_eval_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let run = dir.path().join("run");

    let out = bin().args(["generate", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "generate failed: {}", String::from_utf8_lossy(&out.stderr));
    for file in ["source.manifest", "source.f32", "target.manifest", "target.f32", "provenance.toml"] {
        assert!(run.join(file).exists(), "missing {file}");
    }

    let spec_base = run.join("target_spectra");
    let out = bin()
        .args(["preprocess", "--input"])
        .arg(run.join("target"))
        .arg("--output")
        .arg(&spec_base)
        .arg("--csv")
        .arg(run.join("spectra.csv"))
        .output()
        .unwrap();
    assert!(out.status.success(), "preprocess failed: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(run.join("spectra.csv")).unwrap();
    assert!(csv.starts_with("id,label,o0.00"));
    assert_eq!(csv.lines().count(), 33, "header plus 32 samples");

    let out = bin().args(["train", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("balanced_accuracy="), "train output: {stdout}");
    assert!(run.join("model.sfck").exists());
    assert!(run.join("train.log").exists());
    let log = std::fs::read_to_string(run.join("train.log")).unwrap();
    assert_eq!(log.lines().count(), 2, "one log line per epoch");
    assert!(log.lines().all(|l| l.starts_with("epoch=")));

    // Determinism: the same config + seed reproduces the final metrics.
    let metrics_first = std::fs::read_to_string(run.join("metrics.txt")).unwrap();
    let out = bin().args(["train", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    let metrics_second = std::fs::read_to_string(run.join("metrics.txt")).unwrap();
    assert_eq!(metrics_first, metrics_second);

    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(run.join("model.sfck"))
        .arg("--data")
        .arg(run.join("target"))
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("balanced_accuracy="));

    // Eval also accepts the preprocessed container.
    let out = bin()
        .args(["eval", "--checkpoint"])
        .arg(run.join("model.sfck"))
        .arg("--data")
        .arg(&spec_base)
        .output()
        .unwrap();
    assert!(out.status.success());

    let out = bin()
        .args(["sweep", "--config"])
        .arg(&config)
        .args(["--levels", "50", "--seeds", "1", "--methods", "source-only"])
        .output()
        .unwrap();
    assert!(out.status.success(), "sweep failed: {}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    assert!(grid.starts_with("balance_percent,source-only"));
    assert!(run.join("sweep_runs.csv").exists());
}

#[test]
fn missing_healthy_input_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(
        &config,
        format!(
            r#"
seed = 1
output = "{}"

[bearing]
n_elements = 9
ball_diameter_mm = 7.94
pitch_diameter_mm = 39.04

[[healthy.files]]
path = "{}"
sample_rate_hz = 12000.0
shaft_speed_rpm = 1797.0

[target.synth]
"#,
            dir.path().join("run").display(),
            dir.path().join("does_not_exist.f32").display()
        ),
    )
    .unwrap();
    let out = bin().args(["generate", "--config"]).arg(&config).output().unwrap();
    assert!(!out.status.success(), "generate must fail on missing input");
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn env_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "");
    let run = dir.path().join("run");
    let out = bin()
        .args(["generate", "--config"])
        .arg(&config)
        .env("SYNFAULT_PER_CLASS", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(run.join("source.manifest")).unwrap();
    let count = manifest.matches("\"label\"").count();
    assert_eq!(count, 12, "3 per class x 4 classes");
}
