//! End-to-end tests of the `reid` binary: every subcommand, the exit-code
//! contract, config echo/round-trip, and the per-dataset presets.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn reid() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reid"))
}

fn run(args: &[&str]) -> Output {
    reid().args(args).output().expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("reid-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small dataset + fast training flags shared by the smoke tests.
fn small_synth_args(out: &Path, attrs: usize) -> Vec<String> {
    vec![
        "synth".into(),
        "--out".into(),
        out.display().to_string(),
        "--n-identities".into(),
        "12".into(),
        "--samples-per-identity-min".into(),
        "5".into(),
        "--samples-per-identity-max".into(),
        "6".into(),
        "--input-dim".into(),
        "6".into(),
        "--attribute-count".into(),
        attrs.to_string(),
        "--nuisance-scale".into(),
        "0.4".into(),
        "--seed".into(),
        "9".into(),
    ]
}

fn fast_train_args() -> Vec<String> {
    [
        "--epochs", "8", "--warmup-epochs", "2", "--decay-epochs", "6:0.0001",
        "--hidden-dims", "12", "--embed-dim", "6", "--p", "2", "--k", "2",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tmp_dir("pipeline");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));
    assert!(data.exists());

    let run_dir = dir.join("run");
    let mut train_args = vec![
        "train".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        run_dir.display().to_string(),
    ];
    train_args.extend(fast_train_args());
    let out = run(&train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&out);
    assert!(run_dir.join("checkpoint.json").exists());
    assert!(run_dir.join("config.txt").exists());
    let metrics = std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("epoch,step,lr,loss_total,loss_am,loss_bh,loss_attr"));
    // epochs are logged in order
    let epochs: Vec<usize> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert!(epochs.windows(2).all(|w| w[0] <= w[1]));
    assert_eq!(*epochs.last().unwrap(), 7);

    let eval_dir = dir.join("eval");
    let out = run(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        eval_dir.to_str().unwrap(),
    ]);
    assert_success(&out);
    let report = std::fs::read_to_string(eval_dir.join("report.csv")).unwrap();
    assert!(report.contains("rank_1,"));
    assert!(report.contains("map,"));
}

#[test]
fn attr_variant_on_plain_dataset_exits_1() {
    let dir = tmp_dir("conflict");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let mut train_args = vec![
        "train".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        dir.join("run").display().to_string(),
        "--variant".into(),
        "AM0BH_Attr".into(),
    ];
    train_args.extend(fast_train_args());
    let out = run(&train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(1), "config conflicts exit 1");
    assert!(String::from_utf8_lossy(&out.stderr).contains("attributes"));
}

#[test]
fn missing_checkpoint_fails() {
    let dir = tmp_dir("missing-ckpt");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));
    let out = run(&[
        "eval",
        "--checkpoint",
        dir.join("nope.json").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        dir.join("eval").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_corrupt_fails() {
    let out = run(&["gradcheck", "--cases", "4"]);
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches(" pass").count(), 11, "one line per loss:\n{text}");

    let out = run(&["gradcheck", "--cases", "4", "--corrupt"]);
    assert_eq!(out.status.code(), Some(2), "negative control must fail");
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn ablate_emits_seven_variant_table() {
    let dir = tmp_dir("ablate");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let mut ablate_args = vec![
        "ablate".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        dir.join("tbl").display().to_string(),
        "--repeats".into(),
        "2".into(),
    ];
    ablate_args.extend(fast_train_args());
    let out = run(&ablate_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&out);

    let md = std::fs::read_to_string(dir.join("tbl").join("ablation.md")).unwrap();
    for name in ["AM0", "AM", "BH", "AM0BH1", "AMBH", "AM0BH", "AM0BHsp"] {
        assert!(md.contains(&format!("| {name} |")), "missing row {name}:\n{md}");
    }
    let csv = std::fs::read_to_string(dir.join("tbl").join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 7 * 2, "header + variants x repeats");
    // per-cell std present (mean ± std formatting)
    assert!(md.contains("±"));
}

#[test]
fn sweep_q_emits_rows_and_validates_axis() {
    let dir = tmp_dir("sweep");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 2);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let mut sweep_args = vec![
        "sweep".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        dir.join("q").display().to_string(),
        "--axis".into(),
        "Q".into(),
        "--values".into(),
        "1,2".into(),
        "--variant".into(),
        "AM0BH_Attr".into(),
    ];
    sweep_args.extend(fast_train_args());
    let out = run(&sweep_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&out);
    let csv = std::fs::read_to_string(dir.join("q").join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3, "header + one row per value:\n{csv}");

    // Q without attributes is a validation error
    let out = run(&[
        "sweep",
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        dir.join("bad").to_str().unwrap(),
        "--axis",
        "Q",
        "--values",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_echo_reproduces_run() {
    let dir = tmp_dir("echo");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let first = dir.join("first");
    let mut train_args = vec![
        "train".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        first.display().to_string(),
        "--gamma".into(),
        "0.61".into(),
        "--seed".into(),
        "33".into(),
    ];
    train_args.extend(fast_train_args());
    assert_success(&run(&train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    // rerun purely from the echoed config
    let second = dir.join("second");
    let out = run(&[
        "train",
        "--config",
        first.join("config.txt").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        second.to_str().unwrap(),
    ]);
    assert_success(&out);
    let a = std::fs::read(first.join("metrics.csv")).unwrap();
    let b = std::fs::read(second.join("metrics.csv")).unwrap();
    assert_eq!(a, b, "echoed config reproduces the run bit for bit");
}

#[test]
fn market_preset_sets_gamma() {
    let dir = tmp_dir("preset");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let run_dir = dir.join("run");
    let mut train_args = vec![
        "train".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        run_dir.display().to_string(),
        "--preset".into(),
        "market".into(),
    ];
    train_args.extend(fast_train_args());
    assert_success(&run(&train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));
    let echoed = std::fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(echoed.contains("gamma = 0.43"), "{echoed}");
}

#[test]
fn out_root_env_var_prefixes_relative_paths() {
    let dir = tmp_dir("out-root");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let mut train_args = vec![
        "train".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        "nested/run".into(),
    ];
    train_args.extend(fast_train_args());
    let out = reid()
        .args(train_args.iter().map(|s| s.as_str()))
        .env("REID_OUT_ROOT", &dir)
        .output()
        .unwrap();
    assert_success(&out);
    assert!(dir.join("nested/run/checkpoint.json").exists());
}

#[test]
fn synth_is_deterministic_and_validates() {
    let dir = tmp_dir("synth-det");
    let a = dir.join("a.csv");
    let b = dir.join("b.csv");
    for out in [&a, &b] {
        let args = small_synth_args(out, 1);
        assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));
    }
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&b).unwrap(),
        "same seed, same bytes"
    );

    // an invalid generator config is a validation error
    let out = run(&[
        "synth",
        "--out",
        dir.join("bad.csv").to_str().unwrap(),
        "--n-identities",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn bundled_config_trains() {
    let dir = tmp_dir("bundled-cfg");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 0);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    // the bundled benchmark config plus a few speed overrides
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/benchmark.txt");
    let mut train_args = vec![
        "train".to_string(),
        "--config".into(),
        cfg.into(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        dir.join("run").display().to_string(),
    ];
    train_args.extend(fast_train_args());
    let out = run(&train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    assert_success(&out);
}

#[test]
fn attribute_pipeline_reports_accuracy() {
    let dir = tmp_dir("attr-pipeline");
    let data = dir.join("data.csv");
    let args = small_synth_args(&data, 2);
    assert_success(&run(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let run_dir = dir.join("run");
    let mut train_args = vec![
        "train".to_string(),
        "--dataset".into(),
        data.display().to_string(),
        "--out-dir".into(),
        run_dir.display().to_string(),
        "--variant".into(),
        "AM0BH_Attr".into(),
        "--attribute-slice-dim".into(),
        "2".into(),
        "--lambda".into(),
        "0.25".into(),
    ];
    train_args.extend(fast_train_args());
    assert_success(&run(&train_args.iter().map(|s| s.as_str()).collect::<Vec<_>>()));

    let out = run(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.json").to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--out-dir",
        dir.join("eval").to_str().unwrap(),
    ]);
    assert_success(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("attribute accuracy:"),
        "attribute model evaluation reports accuracy:\n{text}"
    );
}
