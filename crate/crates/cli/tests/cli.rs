//! End-to-end tests driving the built binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_protoarg")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn protoarg")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

struct TempDir(PathBuf);

impl TempDir {
    fn new(name: &str) -> Self {
        let mut p = std::env::temp_dir();
        p.push(format!("protoarg-cli-{}-{}", std::process::id(), name));
        std::fs::create_dir_all(&p).unwrap();
        TempDir(p)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        std::fs::remove_dir_all(&self.0).ok();
    }
}

fn checksum(path: &Path) -> u64 {
    let bytes = std::fs::read(path).unwrap();
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Tiny but fully functional configuration used across these tests.
const FAST_OVERRIDES: &[&str] = &[
    "--model.backbone_channels=4,8",
    "--model.n_prototypes=8",
    "--model.n_combinations=2",
    "--model.mlp_hidden=8",
    "--train.epochs=2",
    "--train.batch_size=16",
];

fn gen_small(dir: &TempDir) -> PathBuf {
    let data = dir.path("data.shapes");
    run_ok(&["gen-data", "--seed", "3", "--n", "60", "--out", data.to_str().unwrap()]);
    data
}

fn train_small(dir: &TempDir, data: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.path("run");
    let mut args: Vec<&str> = vec!["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(FAST_OVERRIDES);
    args.extend_from_slice(extra);
    run_ok(&args);
    out
}

#[test]
fn gen_data_prints_balanced_counts_and_is_deterministic() {
    let dir = TempDir::new("gen");
    let a = dir.path("a.shapes");
    let b = dir.path("b.shapes");
    let stdout = run_ok(&["gen-data", "--seed", "7", "--n", "100", "--out", a.to_str().unwrap()]);
    assert!(stdout.contains("class 0: 50") && stdout.contains("class 1: 50"), "{stdout}");
    run_ok(&["gen-data", "--seed", "7", "--n", "100", "--out", b.to_str().unwrap()]);
    assert_eq!(checksum(&a), checksum(&b), "same flags must give identical files");
}

#[test]
fn gen_data_rejects_n_below_two() {
    let out = run(&["gen-data", "--n", "1", "--out", "/tmp/never-written.shapes"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn train_writes_run_directory_and_eval_agrees() {
    let dir = TempDir::new("train");
    let data = gen_small(&dir);
    let run_dir = train_small(&dir, &data, &[]);

    assert!(run_dir.join("config.txt").exists());
    assert!(run_dir.join("checkpoint.bin").exists());
    let report = std::fs::read_to_string(run_dir.join("report.txt")).unwrap();
    assert!(report.starts_with("epoch ce_loss sp_loss train_acc test_acc\n"), "{report}");
    let final_line = report.lines().find(|l| l.starts_with("final_test_acc ")).unwrap();
    let final_acc: f64 = final_line.split_whitespace().nth(1).unwrap().parse().unwrap();

    let stdout = run_ok(&[
        "eval",
        "--checkpoint",
        run_dir.join("checkpoint.bin").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--split",
        "test",
    ]);
    let eval_acc: f64 = stdout
        .lines()
        .find(|l| l.starts_with("test accuracy"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(final_acc, eval_acc, "eval must reproduce the report's final accuracy");
}

#[test]
fn config_echo_reflects_overrides() {
    let dir = TempDir::new("echo");
    let data = gen_small(&dir);
    let run_dir = train_small(&dir, &data, &["--model.use_super_prototypes=false"]);
    let echo = std::fs::read_to_string(run_dir.join("config.txt")).unwrap();
    assert!(echo.contains("model.use_super_prototypes = false"), "{echo}");
    assert!(echo.contains("model.n_prototypes = 8"), "{echo}");
}

#[test]
fn config_file_applies_with_cli_precedence() {
    let dir = TempDir::new("cfgfile");
    let data = gen_small(&dir);
    let cfg_path = dir.path("exp.cfg");
    std::fs::write(&cfg_path, "model.n_prototypes = 4\ntrain.epochs = 1\n# comment\n").unwrap();
    let out = dir.path("run-cfg");
    run_ok(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--config",
        cfg_path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--model.backbone_channels=4,8",
        "--model.n_combinations=2",
        "--model.mlp_hidden=8",
        "--train.epochs=2",
    ]);
    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("model.n_prototypes = 4"), "file value survives: {echo}");
    assert!(echo.contains("train.epochs = 2"), "cli override wins: {echo}");
}

#[test]
fn unknown_override_key_exits_one_and_names_it() {
    let dir = TempDir::new("badkey");
    let data = gen_small(&dir);
    let out = run(&[
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        dir.path("x").to_str().unwrap(),
        "--model.prototype_count=8",
    ]);
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("prototype_count"));
}

#[test]
fn missing_data_file_is_runtime_error() {
    let out = run(&["eval", "--checkpoint", "/nonexistent.ckpt", "--data", "/nonexistent.shapes", "--split", "test"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn sparsify_ratio_zero_is_faithful_and_ratio_one_rejected() {
    let dir = TempDir::new("sparsify");
    let data = gen_small(&dir);
    let run_dir = train_small(&dir, &data, &[]);
    let ckpt = run_dir.join("checkpoint.bin");
    let sp_dir = dir.path("sparse0");
    let stdout = run_ok(&[
        "sparsify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--ratio",
        "0",
        "--out",
        sp_dir.to_str().unwrap(),
    ]);
    assert!(stdout.contains("hidden_unfaithfulness 0\n"), "{stdout}");
    assert!(stdout.contains("output_unfaithfulness 0\n"), "{stdout}");
    assert!(sp_dir.join("qbaf.graph").exists());
    assert!(sp_dir.join("metrics.txt").exists());

    let bad = run(&[
        "sparsify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--ratio",
        "1.0",
        "--out",
        dir.path("sparse1").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&bad), 1);
}

#[test]
fn explain_writes_all_artifacts() {
    let dir = TempDir::new("explain");
    let data = gen_small(&dir);
    let run_dir = train_small(&dir, &data, &[]);
    let ckpt = run_dir.join("checkpoint.bin");
    let sp_dir = dir.path("sparse");
    run_ok(&[
        "sparsify",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--ratio",
        "0.5",
        "--out",
        sp_dir.to_str().unwrap(),
    ]);
    let expl_dir = dir.path("expl");
    run_ok(&[
        "explain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--qbaf",
        sp_dir.join("qbaf.graph").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--index",
        "4",
        "--out",
        expl_dir.to_str().unwrap(),
    ]);
    // K+1 rasters plus two text artifacts.
    assert!(expl_dir.join("explanation.txt").exists());
    assert!(expl_dir.join("qbaf_strengths.graph").exists());
    assert!(expl_dir.join("input.ppm").exists());
    assert!(expl_dir.join("overlay_class0.ppm").exists());
    assert!(expl_dir.join("overlay_class1.ppm").exists());

    let bad_index = run(&[
        "explain",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--qbaf",
        sp_dir.join("qbaf.graph").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--index",
        "9999",
        "--out",
        dir.path("expl2").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&bad_index), 1);
    assert!(String::from_utf8_lossy(&bad_index.stderr).contains("60"), "names dataset size");
}

#[test]
fn explain_rejects_mismatched_graph() {
    let dir = TempDir::new("mismatch");
    let data = gen_small(&dir);
    let run_a = train_small(&dir, &data, &[]);
    // A second model with a different seed has a different classifier hash.
    let run_b_dir = dir.path("run-b");
    let mut args: Vec<&str> = vec![
        "train",
        "--data",
        data.to_str().unwrap(),
        "--out",
        run_b_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(FAST_OVERRIDES);
    args.push("--train.seed=99");
    run_ok(&args);

    let sp_dir = dir.path("sparse-b");
    run_ok(&[
        "sparsify",
        "--checkpoint",
        run_b_dir.join("checkpoint.bin").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--ratio",
        "0",
        "--out",
        sp_dir.to_str().unwrap(),
    ]);
    let out = run(&[
        "explain",
        "--checkpoint",
        run_a.join("checkpoint.bin").to_str().unwrap(),
        "--qbaf",
        sp_dir.join("qbaf.graph").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--index",
        "0",
        "--out",
        dir.path("expl").to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("mismatch"));
}

#[test]
fn run_root_env_supplies_default_out() {
    let dir = TempDir::new("envroot");
    let data = gen_small(&dir);
    let mut args: Vec<&str> = vec!["train", "--data", data.to_str().unwrap()];
    args.extend_from_slice(FAST_OVERRIDES);
    args.push("--train.seed=4");
    let out = Command::new(bin())
        .args(&args)
        .env("PROTOARG_RUN_ROOT", dir.0.as_os_str())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path("run-seed4").join("checkpoint.bin").exists());

    // Without --out and without the variable, fail with usage.
    let out = Command::new(bin())
        .args(&args)
        .env_remove("PROTOARG_RUN_ROOT")
        .output()
        .unwrap();
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn identical_seeds_give_checksum_identical_artifacts() {
    let dir = TempDir::new("determinism");

    // The same command sequence, with identical relative paths, run from two
    // separate working directories.
    let mut artifacts = Vec::new();
    for tag in ["a", "b"] {
        let cwd = dir.path(tag);
        std::fs::create_dir_all(&cwd).unwrap();
        let run_rel = |args: &[&str]| {
            let out = Command::new(bin()).args(args).current_dir(&cwd).output().unwrap();
            assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
        };
        run_rel(&["gen-data", "--seed", "11", "--n", "60", "--out", "data.shapes"]);
        let mut args: Vec<&str> = vec!["train", "--data", "data.shapes", "--out", "run"];
        args.extend_from_slice(FAST_OVERRIDES);
        run_rel(&args);
        run_rel(&[
            "sparsify", "--checkpoint", "run/checkpoint.bin", "--data", "data.shapes",
            "--ratio", "0.4", "--out", "sparse",
        ]);
        run_rel(&[
            "explain", "--checkpoint", "run/checkpoint.bin", "--qbaf", "sparse/qbaf.graph",
            "--data", "data.shapes", "--index", "2", "--out", "expl",
        ]);
        artifacts.push(vec![
            checksum(&cwd.join("data.shapes")),
            checksum(&cwd.join("run/checkpoint.bin")),
            checksum(&cwd.join("run/report.txt")),
            checksum(&cwd.join("sparse/qbaf.graph")),
            checksum(&cwd.join("sparse/metrics.txt")),
            checksum(&cwd.join("expl/explanation.txt")),
            checksum(&cwd.join("expl/overlay_class1.ppm")),
        ]);
    }
    assert_eq!(artifacts[0], artifacts[1], "same seeds must reproduce every artifact");
}

#[test]
fn unknown_command_and_missing_flags_exit_one() {
    assert_eq!(exit_code(&run(&["transmogrify"])), 1);
    assert_eq!(exit_code(&run(&["gen-data", "--n", "50"])), 1, "missing --out");
    assert_eq!(exit_code(&run(&[])), 1);
}
