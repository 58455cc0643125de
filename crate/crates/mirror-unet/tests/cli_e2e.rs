//! End-to-end CLI checks through the built binary: synth -> train -> eval
//! -> infer, plus report generation and the exit-code contract.

use std::path::Path;
use std::process::Command;

fn munet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_munet"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn full_pipeline_runs_and_exit_codes_hold() {
    let root = std::env::temp_dir().join(format!("munet-e2e-{}", std::process::id()));
    std::fs::create_dir_all(&root).unwrap();
    let data = root.join("data");
    let runs = root.join("run");

    // synth: tiny dataset sized for a 16^3 patch.
    run_ok(munet()
        .args(["synth", "--count", "5", "--healthy", "0.4", "--shape", "16", "--seed", "3"])
        .args(["--organs", "1", "--lesion-radius", "2.5,3.5"])
        .arg("--out")
        .arg(&data));
    assert!(data.join("manifest.json").exists());

    // train: one tiny epoch.
    let manifest = data.join("manifest.json");
    run_ok(munet()
        .args(["train", "--model.version=v2", "--model.shared=5"])
        .args(["--model.widths=2,4,4,8,8", "--model.patch=16,16,16"])
        .args(["--train.epochs=2", "--train.batch_size=2", "--train.corruption=shuffle"])
        .args(["--train.shuffle_edge=16", "--train.val_every=2"])
        .arg("--train")
        .arg(&manifest)
        .arg("--val")
        .arg(&manifest)
        .arg("--out")
        .arg(&runs));
    let ckpt = runs.join("best.ckpt");
    assert!(ckpt.exists(), "training wrote no checkpoint");
    assert!(runs.join("history.csv").exists());
    assert!(runs.join("validation.csv").exists());

    // eval: writes the per-case metrics CSV with a mean row.
    let eval_dir = root.join("eval");
    let stdout = run_ok(munet()
        .arg("eval")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--data")
        .arg(&manifest)
        .arg("--out")
        .arg(&eval_dir));
    assert!(stdout.contains("dice"));
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("case_id,dice,fpv_ml,fnv_ml"));
    assert!(metrics.lines().last().unwrap().starts_with("mean,"));

    // infer: probability + mask volumes with the input geometry.
    let infer_dir = root.join("infer");
    run_ok(munet()
        .arg("infer")
        .arg("--checkpoint")
        .arg(&ckpt)
        .arg("--ct")
        .arg(data.join("case0000_ct.nii.gz"))
        .arg("--pet")
        .arg(data.join("case0000_pet.nii.gz"))
        .arg("--out")
        .arg(&infer_dir));
    let probs = mirror_unet::data::load_volume(infer_dir.join("probability.nii.gz")).unwrap();
    let mask = mirror_unet::data::load_volume(infer_dir.join("mask.nii.gz")).unwrap();
    assert_eq!(probs.shape(), (16, 16, 16));
    assert_eq!(probs.spacing(), (2.0, 2.0, 3.0));
    assert!(mask.data().iter().all(|&v| v == 0.0 || v == 1.0));

    // Unknown config key: exit code 2.
    let out = munet()
        .args(["train", "--model.depth=2", "--train", "x", "--val", "y", "--out", "z"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Invalid stage index via override: exit code 2 with the message.
    let out = munet()
        .args(["train", "--model.shared=9", "--train", "x", "--val", "y", "--out", "z"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid stage index"));

    // Runtime failure (missing checkpoint): exit code 3.
    let out = munet()
        .args(["eval", "--checkpoint", "/nonexistent.ckpt", "--data"])
        .arg(&manifest)
        .arg("--out")
        .arg(root.join("nope"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // Missing subcommand prints usage and exits 2.
    let out = munet().output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("usage"));
}

#[test]
fn brain_synth_and_train_pipeline() {
    let root = std::env::temp_dir().join(format!("munet-e2e-brain-{}", std::process::id()));
    let data = root.join("data");
    run_ok(munet()
        .args(["synth", "--brain", "--count", "2", "--shape", "16", "--spacing", "2", "--seed", "4"])
        .arg("--out")
        .arg(&data));
    let manifest = std::fs::read_to_string(data.join("manifest.json")).unwrap();
    assert!(manifest.contains("flair"));

    let runs = root.join("run");
    run_ok(munet()
        .args(["train", "--model.version=v2-brain", "--model.shared=5"])
        .args(["--model.widths=2,4,4,8,8", "--model.patch=16,16,16"])
        .args(["--train.epochs=1", "--train.batch_size=2", "--train.corruption=none"])
        .arg("--train")
        .arg(data.join("manifest.json"))
        .arg("--val")
        .arg(data.join("manifest.json"))
        .arg("--out")
        .arg(&runs));
    assert!(runs.join("best.ckpt").exists());
}

#[test]
fn report_from_sweep_csv() {
    use mirror_unet::training::sweep::{table2_grid, write_sweep_csv, SweepRow};
    let root = std::env::temp_dir().join(format!("munet-e2e-report-{}", std::process::id()));
    std::fs::create_dir_all(&root).unwrap();
    let rows: Vec<SweepRow> = table2_grid(1)
        .iter()
        .enumerate()
        .map(|(i, c)| SweepRow {
            version: c.version.to_string(),
            shared: c.shared.to_string(),
            setting: c.setting(),
            seed: 1,
            dice: 0.5 + (i % 7) as f64 * 0.01,
            fpv_ml: 0.1,
            fnv_ml: 0.1,
            history: String::new(),
            skipped: None,
        })
        .collect();
    let csv = root.join("sweep.csv");
    write_sweep_csv(&rows, &csv).unwrap();

    let report_dir = root.join("report");
    let stdout = run_ok(munet()
        .arg("report")
        .arg("--sweep")
        .arg(&csv)
        .arg("--out")
        .arg(&report_dir)
        .args(["--epsilon", "0.5"]));
    assert!(stdout.contains("v2<=v3"));
    for file in [
        "boxplot_corruption.csv",
        "boxplot_corruption.svg",
        "boxplot_shared.csv",
        "boxplot_shared.svg",
        "version_ordering.csv",
        "theta_sensitivity.csv",
        "theta_sensitivity.svg",
    ] {
        assert!(report_dir.join(file).exists(), "missing {file}");
    }
}

#[test]
fn out_root_env_resolves_relative_paths() {
    let root = std::env::temp_dir().join(format!("munet-e2e-root-{}", std::process::id()));
    std::fs::create_dir_all(&root).unwrap();
    run_ok(munet()
        .env("MUNET_OUT_ROOT", &root)
        .args(["synth", "--count", "1", "--shape", "16", "--organs", "1"])
        .args(["--lesion-radius", "2.5,3.5", "--out", "nested/data"]));
    assert!(root.join("nested/data/manifest.json").exists());
}

#[allow(dead_code)]
fn assert_path(_p: &Path) {}
